"""Counter-based random streams keyed by ``(seed, stream)``."""

from __future__ import annotations

import os

import numpy as np

SEED_ENV = "RAUZY_SPECTRA_SEED"

# stream ids used across the package
STREAM_IET = 0
STREAM_ROOF = 1
STREAM_FRAME = 2
STREAM_EK = 3
STREAM_OMEGA = 4


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent Philox generator for each ``(seed, stream)`` pair."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def default_seed(fallback: int | None = None) -> int:
    """Seed from the environment; raises when neither it nor ``fallback`` is set."""
    val = os.environ.get(SEED_ENV)
    if val is not None:
        return int(val)
    if fallback is None:
        raise ValueError(f"no seed given and {SEED_ENV} is unset")
    return int(fallback)


def sample_roof(seed: int, m: int) -> np.ndarray:
    """Roof vector uniform on the open simplex (``||s||_1 = 1``)."""
    s = make_rng(seed, STREAM_ROOF).dirichlet(np.ones(m))
    return s / s.sum()

"""Local bounds on spectral measures from twisted-integral growth, frequency
scans, and an autocorrelation estimate of the same measures."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bv import PathPrefix, SubstitutionSequence
from .twisted import CylindricalFunction, DiophantineData, LevelTiles, growth_fit, twisted_series

DEFAULT_R_GRID = np.geomspace(1e2, 1e5, 12)
DEFAULT_R_LIST = (5e-3, 1e-3, 1e-4)
MIN_ALPHA = 1e-6


class InapplicableRangeError(ValueError):
    pass


def local_bound(C1: float, alpha: float, R0: float, r: float) -> float:
    """``pi^2 2^(-2 alpha) C1^2 r^(2 (1 - alpha))``, valid for ``r <= 1 / (2 R0)``
    when ``|S_R| <= C1 R^alpha`` for all ``R >= R0``."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha = {alpha} outside (0, 1)")
    if r > 1.0 / (2.0 * R0):
        raise InapplicableRangeError(f"r = {r} exceeds 1/(2 R0) = {1 / (2 * R0)}")
    return math.pi**2 * 2.0 ** (-2 * alpha) * C1**2 * r ** (2 * (1 - alpha))


def omega_grid(B: float, count: int) -> np.ndarray:
    if B <= 1:
        raise ValueError("B must exceed 1")
    return np.geomspace(1.0 / B, B, count)


@dataclass
class SpectralScanResult:
    omegas: np.ndarray
    alpha_hat: np.ndarray
    C1_hat: np.ndarray
    R0: float
    r_list: tuple
    bounds: np.ndarray  # (len(omegas), len(r_list)); nan where alpha_hat >= 1
    gamma_hat: float
    R_grid: np.ndarray = field(repr=False)
    S_abs: np.ndarray = field(repr=False)  # |S_R| on the snapped grid
    dioph_product: np.ndarray | None = None  # per omega, final truncation level
    dioph_level: int | None = None

    CSV_HEADER = ("omega", "alpha_hat", "C1_hat", "R0")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(self.CSV_HEADER) + [f"bound@{r:g}" for r in self.r_list])
        for i, om in enumerate(self.omegas):
            w.writerow([repr(float(om)), repr(float(self.alpha_hat[i])), repr(float(self.C1_hat[i])),
                        repr(float(self.R0))] + [repr(float(b)) for b in self.bounds[i]])
        return buf.getvalue()

    def summary(self) -> dict:
        out = {"schema": "rauzy-spectra/spectral-scan/1", "gamma_hat": float(self.gamma_hat),
               "alpha_max": float(np.max(self.alpha_hat)), "omega_count": int(len(self.omegas)),
               "R0": float(self.R0), "r_list": [float(r) for r in self.r_list]}
        if self.dioph_product is not None:
            out["dioph_product_max"] = float(np.max(self.dioph_product))
            out["dioph_level"] = int(self.dioph_level)
        return out


def fit_bound_constants(R_grid: np.ndarray, S_abs: np.ndarray) -> tuple[float, float, float]:
    """``(alpha_hat, alpha_used, C1_hat)``.

    ``alpha_hat`` is the least-squares slope.  The local bound needs an
    exponent in (0, 1), so nonpositive slopes are raised to a tiny positive
    value; ``C1_hat`` is then the smallest constant with
    ``|S_R| <= C1 R^alpha_used`` on the whole grid.
    """
    alpha, _ = growth_fit(R_grid, S_abs)
    used = max(alpha, MIN_ALPHA)
    C1 = float(np.max(S_abs / R_grid**used))
    return alpha, used, C1


def spectral_scan(seq: SubstitutionSequence, p: PathPrefix, f: CylindricalFunction, s, B: float = 4.0,
                  R_grid: Sequence[float] | None = None, omega_count: int = 64,
                  r_list: Sequence[float] = DEFAULT_R_LIST, dioph: bool = True,
                  dioph_level: int | None = None) -> SpectralScanResult:
    """Twisted-integral growth and local bounds for ``omega`` in ``[1/B, B]``."""
    R_grid = np.asarray(DEFAULT_R_GRID if R_grid is None else R_grid, dtype=float)
    if len(R_grid) == 0 or omega_count < 1:
        raise ValueError("empty grid")
    omegas = omega_grid(B, omega_count)
    vals, R_snap = twisted_series(seq, p, f, omegas, R_grid, s)
    S_abs = np.abs(vals)
    R0 = float(R_snap[0])
    alpha = np.empty(len(omegas))
    C1 = np.empty(len(omegas))
    bounds = np.full((len(omegas), len(r_list)), np.nan)
    for i in range(len(omegas)):
        alpha[i], used, C1[i] = fit_bound_constants(R_snap, S_abs[i])
        if used < 1:
            bounds[i] = [local_bound(C1[i], used, R0, r) for r in r_list]
    gamma = float(np.clip(np.min(2 * (1 - alpha)), 0.0, 2.0))
    res = SpectralScanResult(omegas, alpha, C1, R0, tuple(r_list), bounds, gamma, R_snap, S_abs)
    if dioph:
        N = len(seq) if dioph_level is None else dioph_level
        res.dioph_product = np.array([DiophantineData(seq, s, om, depth=N).product(0, N - 1) for om in omegas])
        res.dioph_level = N
    return res


# --- autocorrelation route --------------------------------------------------

@dataclass
class AutocorrSpectrum:
    """Fejer-windowed estimate of the spectral measure from sampled correlations."""

    taus: np.ndarray  # lags 0, dt, 2 dt, ...
    corr: np.ndarray  # <f o h_tau, f> estimates
    dt: float

    @property
    def tau_max(self) -> float:
        return float(self.taus[-1] + self.dt)

    @property
    def resolution(self) -> float:
        return 1.0 / self.tau_max

    def _weights(self) -> np.ndarray:
        K = len(self.taus)
        return 1.0 - np.arange(K) / K

    def total_mass(self) -> float:
        return float(self.corr[0])

    def density(self, omega) -> np.ndarray:
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        wc = self._weights() * self.corr
        ph = np.cos(2 * np.pi * np.outer(omega, self.taus[1:]))
        return self.dt * (wc[0] + 2 * ph @ wc[1:])

    def mass(self, lo: float, hi: float) -> float:
        """Estimated measure of ``[lo, hi]`` (exact integral of the density)."""
        wc = self._weights() * self.corr
        t = self.taus[1:]
        sin_part = (np.sin(2 * np.pi * hi * t) - np.sin(2 * np.pi * lo * t)) / (np.pi * t)
        return float(self.dt * (wc[0] * (hi - lo) + sin_part @ wc[1:]))

    def leakage(self, r: float) -> float:
        """Bound on the window mass farther than ``r`` from its center, times the total mass."""
        return min(1.0, 2.0 / (math.pi**2 * self.tau_max * r)) * self.total_mass()


def autocorr_spectrum(seq: SubstitutionSequence, p: PathPrefix, f: CylindricalFunction, s, T: float,
                      tau_grid: Sequence[float] | float, samples_per_unit: float = 32.0) -> AutocorrSpectrum:
    """Time-averaged correlations ``<f o h_tau, f>`` along one orbit, for
    lags on a uniform grid up to ``max(tau_grid)``.

    Uses the biased (positive definite) estimator with the Fejer triangle,
    so the resulting density is nonnegative.
    """
    tau_max = float(np.max(tau_grid))
    if T < 4 * tau_max:
        raise ValueError(f"T = {T} too small for lags up to {tau_max} (need T >= 4 max tau)")
    dt = 1.0 / samples_per_unit
    n = int(T / dt)
    K = int(math.ceil(tau_max / dt))
    tiles = LevelTiles(seq, p, s, f.level, T)
    x = tiles.evaluate(f, (np.arange(n) + 0.5) * dt)
    size = 1 << int(math.ceil(math.log2(2 * n)))
    F = np.fft.rfft(x, size)
    ac = np.fft.irfft(F * np.conj(F), size)[:K] / n
    return AutocorrSpectrum(np.arange(K) * dt, ac, dt)

"""Command-line driver: seeded pipelines, persisted artifacts and reports.

Every subcommand reads an optional JSON config (``--config``) and writes into
``--out``.  Artifacts are deterministic given the config and seed; wall-clock
timings go to ``timings.log``, which is not part of the manifest.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .bv import ConvergenceError, ItineraryTooShort, PathPrefix
from .cocycle import (GapTestError, InsufficientDataError, SingularStepError, oseledets_frames,
                      rauzy_lyapunov, w_statistics)
from .dioph import PrecisionError, SingularThetaError, ek_predict, ek_state, salem_demo
from .iet import IET, DegenerateTieError, FloorStraddleError, rauzy_class, rauzy_path, sample_iet
from .rng import SEED_ENV, STREAM_FRAME, make_rng
from .samples import block_return_times, canonical_sample
from .spectral import DEFAULT_R_LIST, omega_grid, spectral_scan
from .substitution import MaterializationError
from .twisted import CylindricalFunction, DiophantineData, PiecewisePolynomial, pi_product, twisted_series

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DATA = 0, 2, 3, 4
NUMERIC_ERRORS = (DegenerateTieError, FloorStraddleError, PrecisionError, SingularThetaError, GapTestError,
                  SingularStepError, ConvergenceError, ArithmeticError)
DATA_ERRORS = (InsufficientDataError, ItineraryTooShort, MaterializationError)

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["permutation", "seed"],
    "properties": {
        "pipeline": {"enum": ["holder-scan"]},
        "permutation": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2},
        "seed": {"type": "integer", "minimum": 0},
        "lambda": {"type": "array", "items": {"type": ["number", "string"]}},
        "n_steps": {"type": "integer", "minimum": 1},
        "n_blocks": {"type": "integer", "minimum": 3},
        "B": {"type": "number", "exclusiveMinimum": 1},
        "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.36787944117144233},
        "omega": {"type": "number"},
        "grids": {
            "type": "object",
            "properties": {
                "R": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "omega_count": {"type": "integer", "minimum": 0},
                "r_list": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "tau_max": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "precision_bits": {"type": ["integer", "null"], "minimum": 64},
        "output_dir": {"type": "string"},
        "exact": {"type": "boolean"},
        "salem": {
            "type": "object",
            "properties": {"lambda": {"type": ["number", "string"]}, "alpha": {"type": ["number", "string"]},
                           "N": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
        "files": {"type": "array", "items": {"type": "string"}},
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "pipeline": "holder-scan",
    "n_steps": 1_000_000,
    "n_blocks": 12,
    "B": 4.0,
    "delta": 0.1,
    "omega": 1.0,
    "grids": {"R": [float(x) for x in np.geomspace(1e2, 1e5, 12)], "omega_count": 64,
              "r_list": list(DEFAULT_R_LIST), "tau_max": 50.0},
    "precision_bits": None,
    "exact": False,
    "salem": {"lambda": "(1+sqrt(5))/2", "alpha": 1, "N": 40},
}


class ConfigError(ValueError):
    pass


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    """Read, validate and complete a config; ``RAUZY_SPECTRA_SEED`` overrides the seed."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            raw["seed"] = int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from exc
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config: {exc.message}") from exc
    for f in raw.get("files", []):
        if not Path(f).exists():
            raise ConfigError(f"referenced file {f} does not exist")
    cfg = json.loads(json.dumps(DEFAULTS))
    for k, v in raw.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(_dumps({k: v for k, v in cfg.items() if k != "output_dir"}).encode()).hexdigest()


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --- stages -----------------------------------------------------------------

class Workspace:
    """Output directory that tracks written files."""

    def __init__(self, out: Path):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def write(self, name: str, text: str) -> Path:
        p = self.out / name
        p.write_text(text)
        if name not in self.files:
            self.files.append(name)
        return p

    def json(self, name: str, obj) -> Path:
        return self.write(name, _dumps(obj))


def _iet_from_config(cfg: dict) -> IET:
    pi = tuple(cfg["permutation"])
    if "lambda" in cfg:
        lam = [Fraction(str(x)) if cfg["exact"] else float(x) for x in cfg["lambda"]]
        return IET.from_one_line(pi, lam, exact=cfg["exact"])
    T = sample_iet(pi, cfg["seed"])
    if cfg["exact"]:
        return IET.from_one_line(pi, [Fraction(x) for x in T.top_lengths()], exact=True)
    return T


def _test_function(sample, seed: int) -> CylindricalFunction:
    """Level-0 piecewise-constant function with seeded random values."""
    vals = make_rng(seed, STREAM_FRAME).standard_normal(sample.seq.m)
    return CylindricalFunction(0, [PiecewisePolynomial.constant(float(v), float(x)) for v, x in zip(vals, sample.s)])


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def stage_iet(cfg, ws: Workspace):
    T = _iet_from_config(cfg)
    ws.json("iet.json", {"schema": "rauzy-spectra/iet/1", **T.to_json()})
    return T


def stage_rauzy(cfg, ws: Workspace, T: IET):
    n = min(cfg["n_steps"], 10_000) if not T.exact else cfg["n_steps"]
    C = rauzy_class(T.pi)
    try:
        path = rauzy_path(T, n)
        status = "ok"
    except DegenerateTieError as exc:
        if not T.exact:
            raise
        path, status = exc.path, f"tie at step {exc.step_index}"
    ws.json("rauzy.json", {
        "schema": "rauzy-spectra/rauzy/1", "start": T.to_json(), "kinds": path.kinds, "steps": len(path),
        "status": status, "log_Lambda": float(path.log_lambda[-1]) if len(path) else 0.0,
        "class_size": len(C), "strongly_connected": C.is_strongly_connected(),
    })
    return path


def stage_sample(cfg, ws: Workspace):
    S = canonical_sample(cfg["seed"], cfg["n_blocks"], tuple(cfg["permutation"]))
    ws.json("canonical.json", {
        "schema": "rauzy-spectra/canonical/1", "q": S.loop.word, "segments": S.segments,
        "s": [float(x) for x in S.s], "sequence": S.seq.to_json(),
    })
    return S


def stage_lyapunov(cfg, ws: Workspace, T: IET, S):
    est = rauzy_lyapunov(T if not T.exact else IET.from_one_line(T.pi, [float(x) for x in T.top_lengths()]),
                         cfg["n_steps"])
    ws.json("lyapunov.json", {"schema": "rauzy-spectra/lyapunov/1", **est.to_json(seed=cfg["seed"])})
    W = w_statistics(S.seq).W
    ws.write("W.csv", _csv(["n", "W"], [(n + 1, float(w)) for n, w in enumerate(W)]))
    rt = block_return_times(S)
    ws.write("L.csv", _csv(["n", "gap", "L"], [(n + 1, int(g), float(l)) for n, (g, l) in enumerate(zip(rt.gaps, rt.L))]))
    return est, W, rt


def _truncation(R: float, theta1: float, N: int, c: float = 4.0) -> int:
    return int(min(max(math.floor(math.log(R) / (c * theta1)), 1), N - 1))


def stage_twisted(cfg, ws: Workspace, S, theta1_block: float):
    """Twisted sums on the (omega, R) grid with the Diophantine bounds and a
    bound-validity check on the exact twisted sums of the level words."""
    seq, s = S.seq, S.s
    f = _test_function(S, cfg["seed"])
    omegas = omega_grid(cfg["B"], cfg["grids"]["omega_count"]) if cfg["grids"]["omega_count"] else np.zeros(0)
    R_grid = np.asarray(cfg["grids"]["R"], dtype=float)
    p = PathPrefix.minimal(seq, 1, 4)
    rows, checks = [], []
    vals, R_snap = twisted_series(seq, p, f, omegas, R_grid, s) if len(omegas) else (None, None)
    quad_cut = 1e4
    from .twisted import twisted_birkhoff

    for i, om in enumerate(omegas):
        data = DiophantineData(seq, s, float(om), depth=len(seq))
        Pi = pi_product(seq, s, float(om), len(seq) - 1)
        for N in range(1, len(seq)):
            bound = data.product_bound(N).bound
            phi = float(np.abs(Pi[N]).max())
            checks.append((float(om), N, phi, bound, int(phi > bound + 1e-12 * max(1.0, bound))))
        for j, R in enumerate(R_grid):
            N = _truncation(R, theta1_block, len(seq))
            quad = abs(twisted_birkhoff(seq, p, f, float(om), float(R), s, mode="quadrature").quadrature_snapped) \
                if R <= quad_cut else float("nan")
            rows.append((float(om), float(R), float(abs(vals[i, j])), float(quad), data.product_bound(N).bound,
                         data.prefix_bound(0, N - 1).bound, data.product(0, N - 1)))
    ws.write("twisted.csv", _csv(["omega", "R", "abs_S_formula", "abs_S_quadrature", "bound_prop34",
                                  "bound_prop37", "product_only"], rows))
    ws.write("bound_checks.csv", _csv(["omega", "level", "max_abs_phi", "bound_prop34", "violation"], checks))
    return sum(c[-1] for c in checks)


def stage_spectral(cfg, ws: Workspace, S):
    f = _test_function(S, cfg["seed"])
    if cfg["grids"]["omega_count"] == 0:
        ws.write("spectral.csv", "omega,alpha_hat,C1_hat,R0\n")
        ws.json("spectral.json", {"schema": "rauzy-spectra/spectral-scan/1", "omega_count": 0, "gamma_hat": None})
        return None
    res = spectral_scan(S.seq, PathPrefix.minimal(S.seq, 1, 4), f, S.s, B=cfg["B"], R_grid=cfg["grids"]["R"],
                        omega_count=cfg["grids"]["omega_count"], r_list=cfg["grids"]["r_list"])
    ws.write("spectral.csv", res.to_csv())
    ws.json("spectral.json", res.summary())
    return res


def stage_ek(cfg, ws: Workspace, S):
    frames = oseledets_frames(S.seq, precision_bits=cfg["precision_bits"])
    N = len(S.seq) - 2
    st = ek_state(S.seq, S.s, cfg["omega"], frames, S.loop.basis, N)
    preds = [ek_predict(st, n) for n in range(len(st.M))]
    ws.write("ek.csv", st.to_csv(preds))
    hyp = [bool(max(abs(st.eps[n:n + 3])) < st.rho[n]) for n in range(len(st.M))]
    match = [p[0] == st.K[n + 2] for n, p in enumerate(preds)]
    summary = {
        "schema": "rauzy-spectra/ek/1", "omega": cfg["omega"], "levels": len(preds),
        "match_rate": sum(match) / len(match) if match else None,
        "hypothesis_levels": sum(hyp), "hypothesis_matches": sum(m for m, h in zip(match, hyp) if h),
        "frame_residual_max": float(frames.residual.max()), "frame_min_angle": frames.min_angle,
        "theta_blocks": [float(x) for x in frames.theta], "det_normalized_min": float(np.min(np.abs(st.det_normalized))),
    }
    ws.json("ek.json", summary)
    return summary


def stage_salem(cfg, ws: Workspace):
    sc = cfg["salem"]
    r = salem_demo(sc["lambda"], sc.get("alpha", 1), sc["N"])
    rows = [(n, r.K[n], float(r.eps[n]), float(r.ratios[n - 1]) if n else "") for n in range(len(r.K))]
    ws.write("salem.csv", _csv(["n", "K_n", "eps_n", "ratio"], rows))
    ws.json("salem.json", {"schema": "rauzy-spectra/salem/1", "lambda": str(sc["lambda"]), "alpha": str(sc["alpha"]),
                           "N": sc["N"], "precision_bits": r.precision_bits,
                           "ratio_last": float(r.ratios[-1]), "eps_abs_max_tail": float(np.abs(r.eps[-10:]).max())})
    return r


# --- run records ------------------------------------------------------------

@dataclass
class RunRecord:
    config_hash: str
    version: str
    output_dir: str
    status: str
    manifest: dict  # file name -> sha256
    timings: dict = field(default_factory=dict)
    failed_stage: str | None = None
    error: str | None = None

    def to_json(self) -> dict:
        return {"schema": "rauzy-spectra/run-record/1", "config_hash": self.config_hash, "version": self.version,
                "status": self.status, "manifest": self.manifest, "failed_stage": self.failed_stage,
                "error": self.error}


def _finish(ws: Workspace, cfg: dict, timings: dict, failed: tuple | None) -> RunRecord:
    if failed:
        stage, exc = failed
        ws.write("FAILED", f"stage: {stage}\nerror: {type(exc).__name__}: {exc}\n")
    manifest = {name: _sha(ws.out / name) for name in sorted(ws.files)}
    rec = RunRecord(config_hash(cfg), f"v{__version__}", str(ws.out), "failed" if failed else "ok", manifest, timings,
                    failed[0] if failed else None, f"{type(failed[1]).__name__}: {failed[1]}" if failed else None)
    (ws.out / "manifest.json").write_text(_dumps(rec.to_json()))
    (ws.out / "timings.log").write_text("".join(f"{k}\t{v:.3f}s\n" for k, v in timings.items()))
    return rec


def run_experiment(cfg: dict, out: str | Path | None = None) -> RunRecord:
    """Run the configured pipeline; on failure the stage is recorded and the
    partial outputs are kept next to a ``FAILED`` marker."""
    out = Path(out or cfg.get("output_dir") or "out")
    ws = Workspace(out)
    ws.json("config.json", cfg)
    timings: dict = {}
    state: dict = {}

    def theta1_block():
        return float(state["ek"]["theta_blocks"][0])

    stages = [
        ("iet-sample", lambda: state.update(T=stage_iet(cfg, ws))),
        ("rauzy-path", lambda: stage_rauzy(cfg, ws, state["T"])),
        ("canonical-telescope", lambda: state.update(S=stage_sample(cfg, ws))),
        ("lyapunov", lambda: state.update(lyap=stage_lyapunov(cfg, ws, state["T"], state["S"]))),
        ("frames-ek", lambda: state.update(ek=stage_ek(cfg, ws, state["S"]))),
        ("twisted-dioph", lambda: state.update(viol=stage_twisted(cfg, ws, state["S"], theta1_block()))),
        ("spectral", lambda: stage_spectral(cfg, ws, state["S"])),
    ]
    for name, fn in stages:
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as exc:  # recorded, then re-raised by the caller's exit-code mapping
            timings[name] = time.perf_counter() - t0
            rec = _finish(ws, cfg, timings, (name, exc))
            exc.run_record = rec
            raise
        timings[name] = time.perf_counter() - t0
    return _finish(ws, cfg, timings, None)


def emit_report(record: RunRecord | str | Path) -> str:
    """Human-readable summary of a finished run directory."""
    out = Path(record.output_dir if isinstance(record, RunRecord) else record)
    man_path = out / "manifest.json"
    if not man_path.exists():
        raise FileNotFoundError(f"{man_path} missing")
    man = json.loads(man_path.read_text())
    for name in man["manifest"]:
        if not (out / name).exists():
            raise FileNotFoundError(f"artifact {name} missing")
    lines = [f"run {out}  version {man['version']}  status {man['status']}", f"config hash {man['config_hash']}"]
    if man["status"] != "ok":
        lines.append(f"failed stage: {man['failed_stage']} ({man['error']})")
    if (out / "lyapunov.json").exists():
        ly = json.loads((out / "lyapunov.json").read_text())
        lines.append("Lyapunov exponents (n = %d, seed = %s)" % (ly["n"], ly["seed"]))
        lines.append("  i    theta        stderr")
        for i, (t, e) in enumerate(zip(ly["theta"], ly["stderr"]), 1):
            lines.append(f"  {i}  {t: .6f}  {e:.2e}")
    if (out / "spectral.json").exists():
        sp = json.loads((out / "spectral.json").read_text())
        if not sp.get("omega_count"):
            lines.append("spectral scan: no omegas scanned")
        else:
            lines.append(f"spectral scan: {sp['omega_count']} omegas, gamma_hat = {sp['gamma_hat']:.4f}, "
                         f"max alpha_hat = {sp['alpha_max']:.4f}")
    if (out / "ek.json").exists():
        ek = json.loads((out / "ek.json").read_text())
        rate = "n/a" if ek["match_rate"] is None else f"{ek['match_rate']:.3f}"
        lines.append(f"EK: match rate {rate} over {ek['levels']} levels; hypothesis held at "
                     f"{ek['hypothesis_levels']} levels, {ek['hypothesis_matches']} matched")
    if (out / "bound_checks.csv").exists():
        with open(out / "bound_checks.csv") as fh:
            viol = sum(int(r["violation"]) for r in csv.DictReader(fh))
        lines.append(f"bound violations: {viol}")
    return "\n".join(lines) + "\n"


# --- argument parsing -------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rauzy-spectra", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [("iet", "sample or load an IET"), ("rauzy", "Rauzy-Veech path and class"),
                        ("lyapunov", "Lyapunov exponents, W and L samples"),
                        ("twisted", "twisted sums and Diophantine bounds on an (omega, R) grid"),
                        ("ek", "integer-part prediction along a canonical sample"),
                        ("spectral-scan", "Holder-type local bounds over a frequency grid"),
                        ("salem", "Salem/Pisot integer parts"), ("run", "run the configured pipeline"),
                        ("report", "summarize a run directory")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory", default=None)
        if name != "report":
            p.add_argument("--seed", type=int, default=None)
            p.add_argument("--exact", action="store_true", default=None, help="rational arithmetic for IETs")
            p.add_argument("--permutation", type=lambda s: [int(x) for x in s.split(",")], default=None)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "report":
            target = args.out or (load_config(args.config).get("output_dir") if args.config else None) or "out"
            sys.stdout.write(emit_report(target))
            return EXIT_OK
        over = {"seed": args.seed, "exact": args.exact, "permutation": args.permutation}
        if args.config is None and args.permutation is None:
            over["permutation"] = [4, 3, 2, 1]
        cfg = load_config(args.config, over)
        out = Path(args.out or cfg.get("output_dir") or "out")
        if args.command == "run":
            rec = run_experiment(cfg, out)
            sys.stdout.write(emit_report(rec))
            return EXIT_OK
        ws = Workspace(out)
        if args.command == "iet":
            stage_iet(cfg, ws)
        elif args.command == "rauzy":
            stage_rauzy(cfg, ws, _iet_from_config(cfg))
        elif args.command == "lyapunov":
            stage_lyapunov(cfg, ws, _iet_from_config(cfg), canonical_sample(cfg["seed"], cfg["n_blocks"],
                                                                            tuple(cfg["permutation"])))
        elif args.command == "twisted":
            S = stage_sample(cfg, ws)
            frames = oseledets_frames(S.seq, check_gap=False)
            stage_twisted(cfg, ws, S, float(frames.theta[0]))
        elif args.command == "ek":
            stage_ek(cfg, ws, stage_sample(cfg, ws))
        elif args.command == "spectral-scan":
            stage_spectral(cfg, ws, stage_sample(cfg, ws))
        elif args.command == "salem":
            stage_salem(cfg, ws)
        for name in ws.files:
            sys.stdout.write(f"wrote {ws.out / name}\n")
        return EXIT_OK
    except (ConfigError, jsonschema.ValidationError) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except DATA_ERRORS as exc:
        sys.stderr.write(f"insufficient data: {exc}\n")
        return EXIT_DATA
    except NUMERIC_ERRORS as exc:
        sys.stderr.write(f"numerical degeneracy: {exc}\n")
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        sys.stderr.write(f"missing artifact: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

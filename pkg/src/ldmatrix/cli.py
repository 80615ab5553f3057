"""Command line front end: ``ldmatrix <command> --config run.json``.

Commands are ``spectral``, ``ldp``, ``edgeworth``, ``tails`` and
``diagnose``.  Each run writes its data files and a ``manifest.json`` into
the output directory.  Exit status is 0 on success, 2 when the configuration
is invalid and 3 when a numerical routine fails; in the last case the data
files are removed and the manifest records the diagnostic.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import __version__
from . import ensemble as ens_mod
from . import kesten, ldp, spectral, tilt
from ._rng import Substream
from .ensemble import LdmatrixError
from .grid import build_grid

log = logging.getLogger("ldmatrix")

COMMANDS = ("spectral", "ldp", "edgeworth", "tails", "diagnose")
FORMATS = ("csv", "json")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
U64 = 2**64


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    ensemble: dict
    params: dict
    seed: int
    output_dir: Path
    format: str = "csv"
    threads: int = 1

    def echo(self) -> dict:
        return {
            "command": self.command,
            "ensemble": self.ensemble,
            "params": self.params,
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "format": self.format,
        }


# ---------------------------------------------------------------------------
# validation

_COMMON = {"ensemble", "model", "seed", "output_dir", "format", "grid_resolution"}
_ALLOWED = {
    "spectral": {"s_grid", "fd_step", "alpha"},
    "ldp": {"x0", "n", "q", "s", "paths", "naive_paths"},
    "edgeworth": {"x0", "n", "s", "paths", "bias"},
    "tails": {"x", "samples", "depth", "tol"},
    "diagnose": {"max_len"},
}


def _num(cfg, key, default=None, kind=float, lo=None, hi=None, required=False):
    if key not in cfg:
        if required:
            raise ConfigError(f"missing parameter {key!r}")
        return default
    val = cfg[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{key!r} must be a number, got {val!r}")
    if kind is int and float(val) != int(val):
        raise ConfigError(f"{key!r} must be an integer")
    val = kind(val)
    if not math.isfinite(val):
        raise ConfigError(f"{key!r} must be finite")
    if lo is not None and val < lo:
        raise ConfigError(f"{key!r} = {val} is below {lo}")
    if hi is not None and val > hi:
        raise ConfigError(f"{key!r} = {val} is above {hi}")
    return val


def _num_list(cfg, key, default=None, kind=float, lo=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing parameter {key!r}")
        return list(default)
    val = cfg[key]
    if isinstance(val, dict):
        try:
            val = np.linspace(float(val["start"]), float(val["stop"]), int(val["num"])).tolist()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{key!r} range needs start, stop and num") from exc
    if not isinstance(val, list):
        val = [val]
    if not val:
        raise ConfigError(f"{key!r} is empty")
    return [_num({key: v}, key, kind=kind, lo=lo) for v in val]


def _vector(cfg, key, dim, default=None):
    val = cfg.get(key, default)
    if val is None:
        raise ConfigError(f"missing parameter {key!r}")
    try:
        arr = np.asarray(val, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key!r} must be a numeric vector") from exc
    if arr.size != dim or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{key!r} must be a finite vector of length {dim}")
    return arr


def _check_params(command, p, dim):
    """Normalized parameters; raises ConfigError on any out-of-range value."""
    out = {"grid_resolution": _num(p, "grid_resolution", 2048, int, lo=2, hi=10**6)}
    default_x = [1.0] + [0.0] * (dim - 1)
    if command == "spectral":
        out["s_grid"] = _num_list(p, "s_grid", [0.0, 0.5, 1.0, 1.5, 2.0])
        out["fd_step"] = _num(p, "fd_step", spectral.DEFAULT_FD_STEP, lo=1e-6, hi=0.1)
        out["alpha"] = bool(p.get("alpha", True))
    elif command in ("ldp", "edgeworth"):
        out["x0"] = _vector(p, "x0", dim, default_x).tolist()
        out["n"] = _num_list(p, "n", None, int, lo=1)
        out["paths"] = _num(p, "paths", 100_000, int, lo=100, hi=10**8)
        if command == "ldp":
            if ("q" in p) == ("s" in p):
                raise ConfigError("give exactly one of 'q' or 's'")
            if "q" in p:
                out["q"] = _num(p, "q")
            else:
                out["s"] = _num(p, "s", lo=0.0)
            naive = _num(p, "naive_paths", 0, int, lo=0, hi=10**8)
            if 0 < naive < 1000:
                raise ConfigError("'naive_paths' must be 0 or at least 1000")
            out["naive_paths"] = naive
        else:
            out["s"] = _num(p, "s", required=True)
            out["bias"] = bool(p.get("bias", True))
    elif command == "tails":
        xs = p.get("x", [default_x])
        if xs and not isinstance(xs[0], list):
            xs = [xs]
        out["x"] = [_vector({"x": v}, "x", dim).tolist() for v in xs]
        out["samples"] = _num(p, "samples", 100_000, int, lo=100_000, hi=10**8)
        out["depth"] = _num(p, "depth", 10_000, int, lo=1)
        out["tol"] = _num(p, "tol", 1e-16, lo=0.0, hi=1e-3)
    elif command == "diagnose":
        out["max_len"] = _num(p, "max_len", 3, int, lo=1, hi=8)
    return out


def load_config(command: str, path: Optional[str], overrides: dict) -> RunConfig:
    """Read and validate the JSON config; command-line flags take precedence."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _COMMON - _ALLOWED[command]
    if unknown:
        raise ConfigError(f"unknown keys for {command}: {sorted(unknown)}")

    seed = overrides.get("seed", raw.get("seed"))
    if seed is None:
        raise ConfigError("a seed is required (config 'seed' or --seed)")
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < U64:
        raise ConfigError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    out_dir = overrides.get("output_dir", raw.get("output_dir"))
    if out_dir is None:
        raise ConfigError("an output directory is required (config 'output_dir' or --out)")
    fmt = overrides.get("format", raw.get("format", "csv"))
    if fmt not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}")
    threads = overrides.get("threads", 1)
    if threads < 1:
        raise ConfigError("threads must be at least 1")

    spec = raw.get("model" if command == "tails" and "model" in raw else "ensemble")
    if not isinstance(spec, dict):
        raise ConfigError("config needs an 'ensemble' object (or 'model' for tails)")
    try:
        target = _build_target(command, spec)
    except (ens_mod.EnsembleError, TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"invalid ensemble: {exc}") from exc
    params = _check_params(command, raw, target.dim)
    if command != "tails":
        lo, hi = target.s_domain
        for s in params.get("s_grid", []) + ([params["s"]] if "s" in params else []):
            if not lo < s < hi:
                raise ConfigError(f"s = {s} lies outside the moment domain ({lo}, {hi})")
    return RunConfig(command, spec, params, int(seed), Path(out_dir), fmt, int(threads))


def _build_target(command, spec):
    if command == "tails":
        return kesten.model_from_config(spec)
    return ens_mod.ensemble_from_config(spec)


# ---------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.16e" % float(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


def render_table(rows: List[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(_jsonable(rows), indent=2, sort_keys=False) + "\n"
    buf = io.StringIO()
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])
    return buf.getvalue()


@dataclass
class Outputs:
    """Data products collected in memory and written at the end of a run."""

    fmt: str
    files: Dict[str, str] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def table(self, stem: str, rows: List[dict]):
        self.files[f"{stem}.{self.fmt}"] = render_table(rows, self.fmt)

    def document(self, name: str, obj):
        self.files[name] = json.dumps(_jsonable(obj), indent=2) + "\n"


# ---------------------------------------------------------------------------
# commands


def _grid(ens, cfg: RunConfig):
    return build_grid(ens, resolution=cfg.params["grid_resolution"])


def cmd_spectral(cfg: RunConfig, stream: Substream, out: Outputs):
    p = cfg.params
    ens = ens_mod.ensemble_from_config(cfg.ensemble)
    grid = _grid(ens, cfg)
    profiles = spectral.cgf_profile(ens, grid, p["s_grid"], p["fd_step"])
    out.table("k_profile", spectral.profile_table(profiles))
    out.summary["max_eigen_residual"] = max(pr.eigen_residual for pr in profiles)
    out.summary["fd_check"] = [pr.fd_check for pr in profiles]
    if p["alpha"]:
        try:
            out.summary["alpha"] = spectral.solve_alpha(ens, grid)
        except spectral.NoRootInBracket as exc:
            out.summary["alpha"] = None
            out.summary["alpha_note"] = str(exc)


def _tilt_profile(ens, grid, p):
    if "s" in p:
        return spectral.profile_at(ens, p["s"], grid)
    point = spectral.rate_function(ens, grid, p["q"])
    return spectral.profile_at(ens, point.s, grid)


def cmd_ldp(cfg: RunConfig, stream: Substream, out: Outputs):
    p = cfg.params
    ens = ens_mod.ensemble_from_config(cfg.ensemble)
    grid = _grid(ens, cfg)
    prof = _tilt_profile(ens, grid, p)
    q = p.get("q", prof.q)
    x0 = np.asarray(p["x0"])
    rows, worst_rel = [], 0.0
    for n in p["n"]:
        sub = stream.child(f"n{n}")
        est = ldp.tilted_tail(x0, prof, n, q, p["paths"], sub)
        if p["naive_paths"]:
            nv = ldp.naive_tail(x0, ens, n, q, p["naive_paths"], sub)
            est.naive = (nv.estimate, nv.se)
            est.naive_upper = nv.upper_bound
        if est.low_ess:
            log.warning("n=%d: effective sample size %.0f is below 1%% of paths", n, est.ess)
        rows.append(est.row())
        if est.tilted[0] > 0:
            worst_rel = max(worst_rel, est.tilted[1] / est.tilted[0])
    out.table("ldp", rows)
    out.summary.update(s=prof.s, q=q, sigma2=prof.sigma2, eigen_residual=prof.eigen_residual, max_relative_se=worst_rel)


def cmd_edgeworth(cfg: RunConfig, stream: Substream, out: Outputs):
    p = cfg.params
    ens = ens_mod.ensemble_from_config(cfg.ensemble)
    grid = _grid(ens, cfg)
    prof = spectral.profile_at(ens, p["s"], grid)
    bias = tilt.bias_function(prof) if p["bias"] and ens.dim > 1 else None
    summary = []
    for n in p["n"]:
        rep = ldp.edgeworth_curve(p["x0"], prof, bias, n, p["paths"], stream=stream.child(f"n{n}"))
        out.table(f"edgeworth_n{n}", rep.rows())
        summary.append({"n": n, "sup_gap": rep.sup_gap, "scaled_gap": rep.scaled_gap, "normal_gap": rep.normal_gap, "dkw99": rep.dkw99, "b_x": rep.b_x})
    out.table("edgeworth_summary", summary)
    out.summary.update(s=prof.s, q=prof.q, sigma2=prof.sigma2, m3=prof.m3, eigen_residual=prof.eigen_residual)
    if bias is not None:
        out.summary["bias_recursion_residual"] = bias.recursion_residual


def cmd_tails(cfg: RunConfig, stream: Substream, out: Outputs):
    p = cfg.params
    model = kesten.model_from_config(cfg.ensemble)
    draws = kesten.rde_sample(model, p["samples"], p["depth"], p["tol"], stream.child("draws"))
    grid = build_grid(model.transposed_ensemble, resolution=cfg.params["grid_resolution"])
    reports = []
    for i, x in enumerate(p["x"]):
        rep = kesten.tail_report(model, x, p["samples"], stream.child(f"x{i}"), draws=draws, grid=grid)
        out.table(f"tail_ccdf_{i}", rep.rows())
        reports.append(rep.summary())
    cond = kesten.kesten_condition(model) if model.ensemble.cone == ens_mod.NONNEGATIVE else None
    out.document("tails.json", {
        "directions": reports,
        "kesten_condition": None if cond is None else {"satisfied": cond.satisfied, "witness": cond.witness},
        "notes": model.notes,
    })
    out.summary.update(max_depth=draws.max_depth, alpha_theory=reports[0]["alpha_theory"], ci=[r["ci"] for r in reports])


def cmd_diagnose(cfg: RunConfig, stream: Substream, out: Outputs):
    ens = ens_mod.ensemble_from_config(cfg.ensemble)
    rep = ens_mod.check_conditions(ens, max_len=cfg.params["max_len"])
    out.document("conditions.json", rep.to_dict())
    out.summary["arithmetic_diagnostic"] = rep.arithmetic_diagnostic


HANDLERS: Dict[str, Callable] = {
    "spectral": cmd_spectral,
    "ldp": cmd_ldp,
    "edgeworth": cmd_edgeworth,
    "tails": cmd_tails,
    "diagnose": cmd_diagnose,
}


def _write_manifest(cfg: RunConfig, status: str, files: List[str], summary: dict, wall: float, diagnostic=None):
    manifest = {
        "status": status,
        "command": cfg.command,
        "version": __version__,
        "config": cfg.echo(),
        "threads": cfg.threads,
        "wall_time": wall,
        "outputs": files,
        "summary": summary,
        "diagnostic": diagnostic,
    }
    (cfg.output_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2) + "\n")


def run(cfg: RunConfig) -> int:
    """Execute a validated configuration; returns the exit code."""
    t0 = time.perf_counter()
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = Outputs(cfg.format)
    stream = Substream(cfg.seed, cfg.command, cfg.threads)
    written: List[Path] = []
    try:
        HANDLERS[cfg.command](cfg, stream, out)
        for name, text in out.files.items():
            path = cfg.output_dir / name
            written.append(path)
            path.write_text(text)
    except (LdmatrixError, ArithmeticError, np.linalg.LinAlgError) as exc:
        for path in written:
            path.unlink(missing_ok=True)
        diag = {"error": type(exc).__name__, "message": str(exc)}
        residual = getattr(exc, "residual", None)
        if residual is not None:
            diag["residual"] = residual
        log.error("%s failed: %s", cfg.command, exc)
        _write_manifest(cfg, "error", [], out.summary, time.perf_counter() - t0, diag)
        return EXIT_NUMERIC
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    _write_manifest(cfg, "ok", sorted(out.files), out.summary, time.perf_counter() - t0)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldmatrix", description="Spectral and large-deviation computations for random matrix products.")
    parser.add_argument("--version", action="version", version=f"ldmatrix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="64-bit master seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--format", choices=FORMATS)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("LDMATRIX_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    overrides = {"threads": args.threads}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.format is not None:
        overrides["format"] = args.format
    try:
        cfg = load_config(args.command, args.config, overrides)
    except ConfigError as exc:
        print(f"ldmatrix: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())

"""Command line driver.

    python -m nudging3d truth       --config run.ini --out results/
    python -m nudging3d twin        --config run.ini --out results/ [--seed 3]
    python -m nudging3d criterion   --config run.ini --out results/
    python -m nudging3d determining --config run.ini --out results/
    python -m nudging3d lab         --config run.ini --out results/
    python -m nudging3d replay      --manifest results/manifest.json --out again/

Every run writes ``manifest.json`` next to its outputs.  It records the
config text, its sha256, the effective seed, the package version and the
sha256 of each output file, so ``replay`` can re-run and compare.

Exit codes: 0 success, 1 replay mismatch, 2 bad config or arguments,
3 numerical instability, 4 I/O failure.  Outputs are assembled in memory
and written with write-then-rename, so a failed run leaves no files.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .assimilation import InstabilityError, energy_budget, run_truth, run_twin
from .config import ConfigError, ExperimentConfig, parse_config
from .criterion import (
    check_criterion,
    determining_nodes_experiment,
    find_admissible_h,
    resolution_for_h,
)
from .io import atomic_write_bytes, snapshot_bytes
from .lab import calibrated_constant, run_all
from .observers import observations_csv_text
from .spectral import l2_norm, make_forcing, random_divfree_field

__all__ = ["main", "run_command", "COMMANDS"]

log = logging.getLogger("nudging3d")

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_UNSTABLE, EXIT_IO = 0, 1, 2, 3, 4


def _json_bytes(obj) -> bytes:
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"cannot serialise {type(o).__name__}")
    # repr-exact floats; NaN/inf become null so the file stays valid JSON
    return (json.dumps(_finite(obj), indent=2, sort_keys=True, default=default)
            + "\n").encode("utf-8")


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _setup(cfg: ExperimentConfig):
    d = cfg.domain
    f = make_forcing(cfg.forcing, d)
    u0 = random_divfree_field(d, cfg.seed, k0=cfg.k0, slope=cfg.slope,
                              energy=cfg.energy)
    return d, f, u0


# -- commands --------------------------------------------------------------------
# Each returns {relative path: bytes}.

def cmd_truth(cfg: ExperimentConfig) -> dict:
    d, f, u0 = _setup(cfg)
    obs_fn = cfg.observer if cfg.write_observations else None
    series, _, obs, snaps = run_truth(u0, f, cfg.dt, cfg.T, cfg.sample_every,
                                      observer=obs_fn, snapshot_every=cfg.snapshot_every)
    rep = energy_budget(series)
    out = {
        "series.csv": series.to_csv_text().encode(),
        "energy.json": _json_bytes(dict(
            rep.as_dict(), dt=cfg.dt, T=cfg.T, f_norm=l2_norm(f),
            stepwise_residual=float(series.column("energy_residual")[-1]))),
    }
    if obs:
        out["observations.csv"] = observations_csv_text(obs).encode()
    for t, u in snaps:
        step = int(round(t / cfg.dt))
        out[f"snapshots/step_{step:08d}.nse3"] = snapshot_bytes(u, t)
    log.info("truth: %d samples, energy residual %.3e", len(series), rep.residual)
    return out


def _resolve_mu(cfg: ExperimentConfig, d, f, u0):
    """Return (mu, source, window_or_None, criterion report or None)."""
    if not cfg.auto_mu:
        return float(cfg.mu), "config", None, None
    _, _, obs, _ = run_truth(u0, f, cfg.dt, cfg.T, cfg.sample_every,
                             observer=cfg.observer)
    rep = check_criterion(obs, l2_norm(f), d, cfg.c, cfg.C)
    if rep.mu_window is None:
        raise ConfigError(
            f"[nudging] mu = auto: admissible window is empty at h={rep.h:.6g} "
            f"(lhs {max(rep.lhs):.6g} > rhs {rep.rhs:.6g})")
    lo, hi = rep.mu_window
    return 0.5 * (lo + hi), "auto", [lo, hi], rep


def cmd_twin(cfg: ExperimentConfig) -> dict:
    d, f, u0 = _setup(cfg)
    mu, source, window, rep = _resolve_mu(cfg, d, f, u0)
    ncfg = cfg.nudging(mu)
    obs = [] if cfg.write_observations else None
    series = run_twin(u0, ncfg, d, f, sample_every=cfg.sample_every,
                      observations=obs, mh_C=cfg.C)
    cutoff = cfg.transient if cfg.transient is not None else cfg.T / 4.0
    try:
        slope = series.decay_slope(cutoff, cfg.T)
    except ValueError:
        slope = None
    err = series.column("err_l2")
    summary = dict(
        mu=mu, mu_source=source, mu_window=window,
        observer=dict(kind=cfg.observer.kind, n_cells=cfg.observer.n_cells,
                      N_obs=cfg.observer.N_obs, smoothed=cfg.smoothed,
                      h=cfg.observer.h(d.L)),
        fitted_slope=slope, target_slope=-mu / 2.0, transient_cutoff=cutoff,
        slope_column="err_h1", final_err_l2=float(err[-1]),
        final_err_h1=float(series.column("err_h1")[-1]), min_err_l2=float(err.min()),
        dt=cfg.dt, T=cfg.T,
    )
    if rep is not None:
        summary["criterion"] = rep.to_dict()
    out = {"series.csv": series.to_csv_text().encode(),
           "summary.json": _json_bytes(summary)}
    if obs:
        out["observations.csv"] = observations_csv_text(obs).encode()
    log.info("twin: mu=%g (%s), final |u-w|=%.3e, slope %s", mu, source,
             err[-1], "n/a" if slope is None else f"{slope:.3f}")
    return out


def cmd_criterion(cfg: ExperimentConfig) -> dict:
    d, f, u0 = _setup(cfg)
    kind = cfg.observer.kind
    hs = cfg.h_candidates or (cfg.observer.h(d.L),)
    for h in hs:
        try:
            resolution_for_h(kind, h, d.L)
        except ValueError as exc:
            raise ConfigError(f"[criterion] h_candidates: {exc}") from None
    n_steps = int(round(cfg.T / cfg.dt))
    series, _, _, snaps = run_truth(u0, f, cfg.dt, cfg.T, cfg.sample_every,
                                    snapshot_every=cfg.sample_every if n_steps else None)
    states = [u for _, u in snaps] or [u0]
    search = find_admissible_h(states, kind, hs, l2_norm(f), cfg.c, cfg.C)
    chosen = next((r for r in search.reports if r.h == search.h), search.reports[-1])
    report = dict(chosen.to_dict(), kind=kind, admissible_h=search.h,
                  satisfied=search.h is not None, bound_holds=chosen.bound_holds,
                  sup_h1=search.sup_h1, sup_h2=search.sup_h2, f_norm=l2_norm(f),
                  C=cfg.C, candidates=[r.to_dict() for r in search.reports])
    log.info("criterion: kind=%s admissible h=%s", kind, search.h)
    return {"criterion.json": _json_bytes(report),
            "mh_curve.csv": search.curve_csv_text().encode()}


def cmd_determining(cfg: ExperimentConfig) -> dict:
    d, f, _ = _setup(cfg)
    n = cfg.determining_n_cells or cfg.observer.n_cells
    if n is None:
        raise ConfigError("[determining] n_cells: required when the observer is modal")
    T = cfg.determining_T if cfg.determining_T is not None else cfg.T
    res = determining_nodes_experiment(cfg.seed, cfg.seed2, f, n, cfg.dt, T,
                                       k0=cfg.k0, energy=cfg.energy, slope=cfg.slope,
                                       c=cfg.c, C=cfg.C, sample_every=cfg.sample_every)
    summary = dict(seeds=[cfg.seed, cfg.seed2], n_cells=n, T=T,
                   final_obs_diff=float(res.obs_diff[-1]), final_diff=float(res.diff[-1]),
                   M_h=list(res.M_h), reports=[r.to_dict() for r in res.reports])
    log.info("determining: final |u1-u2|=%.3e", res.diff[-1])
    return {"determining.csv": res.to_csv_text().encode(),
            "determining.json": _json_bytes(summary)}


def cmd_lab(cfg: ExperimentConfig) -> dict:
    results = run_all(cfg.lab)
    out = {}
    for name, est in results.items():
        out[f"lab/{name}.json"] = _json_bytes(est.to_dict())
        out[f"lab/{name}.csv"] = est.table_csv_text().encode()
    out["lab/calibration.json"] = _json_bytes(dict(
        calibrated_c=calibrated_constant(results),
        stable={k: bool(v.stable) for k, v in results.items()}))
    log.info("lab: %d checks", len(results))
    return out


COMMANDS = {"truth": cmd_truth, "twin": cmd_twin, "criterion": cmd_criterion,
            "determining": cmd_determining, "lab": cmd_lab}


# -- manifest and output ------------------------------------------------------------

def _sha(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def run_command(command: str, cfg: ExperimentConfig) -> dict:
    """Run one command and return all output files, manifest included."""
    files = COMMANDS[command](cfg)
    manifest = dict(command=command, config_text=cfg.text, config_sha256=cfg.sha256,
                    seed=cfg.seed, version=__version__,
                    outputs={k: _sha(v) for k, v in sorted(files.items())})
    files["manifest.json"] = _json_bytes(manifest)
    return files


def _write_all(out: Path, files: dict) -> None:
    for rel, data in sorted(files.items()):
        atomic_write_bytes(out / rel, data)


def _load_manifest(path) -> dict:
    try:
        m = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError:
        raise
    except ValueError as exc:
        raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from None
    for key in ("command", "config_text", "config_sha256", "seed", "outputs"):
        if key not in m:
            raise ConfigError(f"manifest {path} lacks field {key!r}")
    if m["command"] not in COMMANDS:
        raise ConfigError(f"manifest command {m['command']!r} is unknown")
    if _sha(m["config_text"].encode("utf-8")) != m["config_sha256"]:
        raise ConfigError(f"manifest {path}: config text does not match its hash")
    return m


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nudging3d",
                                description="Nudging data assimilation for 3D periodic flow.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, metavar="PATH")
        s.add_argument("--out", required=True, metavar="DIR")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--quiet", action="store_true")
    r = sub.add_parser("replay", help="re-run from a manifest and compare outputs")
    r.add_argument("--manifest", required=True, metavar="PATH")
    r.add_argument("--out", required=True, metavar="DIR")
    r.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    p = _parser()
    try:
        args = p.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr, force=True)
    out = Path(args.out)
    try:
        if args.command == "replay":
            m = _load_manifest(args.manifest)
            cfg = parse_config(m["config_text"]).with_seed(int(m["seed"]))
            files = run_command(m["command"], cfg)
            _write_all(out, files)
            bad = sorted(k for k, h in m["outputs"].items()
                         if k not in files or _sha(files[k]) != h)
            if bad:
                log.error("replay mismatch in: %s", ", ".join(bad))
                return EXIT_MISMATCH
            log.info("replay matched %d output files", len(m["outputs"]))
            return EXIT_OK
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        cfg = parse_config(text)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        files = run_command(args.command, cfg)
        _write_all(out, files)
        return EXIT_OK
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except InstabilityError as exc:
        log.error("numerical instability: %s", exc)
        return EXIT_UNSTABLE
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

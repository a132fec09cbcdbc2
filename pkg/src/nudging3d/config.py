"""Experiment configuration: one INI file, sections mirroring the run spec.

Example::

    [domain]
    L = 2*pi
    N = 32
    nu = 1.0

    [forcing]
    pattern = taylor_green
    amplitude = 1.0

    [initial]
    seed = 0
    k0 = 2.0
    slope = 4.0
    energy = 1.0

    [observer]
    kind = modal
    N_obs = 4
    smoothed = false
    C = 1.0

    [nudging]
    mu = 20            # or "auto": midpoint of the admissible window
    dt = 0.005
    T = 2.0
    sample_every = 1

    [criterion]
    c = 1.0
    h_candidates = 1.0, 0.5, 0.25, 0.125

Unknown sections or keys are rejected so that typos surface as errors.
"""
from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import dataclass, field, replace

from .assimilation import NudgingConfig
from .lab import EnsembleSpec
from .observers import Observer
from .spectral import DomainSpec, ForcingSpec

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config"]


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""


_SCHEMA = {
    "domain": {"L": True, "N": True, "nu": True, "dealias_fraction": False},
    "forcing": {"pattern": False, "amplitude": False},
    "initial": {"seed": False, "k0": False, "slope": False, "energy": False},
    "observer": {"kind": False, "n_cells": False, "N_obs": False,
                 "smoothed": False, "C": False},
    "nudging": {"mu": False, "dt": True, "T": True, "sample_every": False,
                "galerkin_n": False, "obs_every": False, "transient": False},
    "criterion": {"c": False, "h_candidates": False},
    "determining": {"seed2": False, "T": False, "n_cells": False},
    "lab": {"N": False, "n_fields": False, "k0": False, "slope": False,
            "seed": False, "cells": False},
    "output": {"snapshot_every": False, "observations": False},
}

_PI = re.compile(r"^\s*([-+]?[0-9.eE+-]*)\s*\*?\s*pi\s*$")


def _float(section: str, key: str, raw: str) -> float:
    s = raw.strip()
    m = _PI.match(s)
    try:
        if m:
            coef = m.group(1)
            return (float(coef) if coef not in ("", "+", "-") else float(coef + "1")) * math.pi
        return float(s)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as a number") from None


def _int(section: str, key: str, raw: str) -> int:
    try:
        return int(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as an integer") from None


def _bool(section: str, key: str, raw: str) -> bool:
    s = raw.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as a boolean")


def _floats(section: str, key: str, raw: str) -> tuple:
    parts = [p for p in raw.replace(";", ",").split(",") if p.strip()]
    return tuple(_float(section, key, p) for p in parts)


def _ints(section: str, key: str, raw: str) -> tuple:
    parts = [p for p in raw.replace(";", ",").split(",") if p.strip()]
    return tuple(_int(section, key, p) for p in parts)


@dataclass(frozen=True)
class ExperimentConfig:
    domain: DomainSpec
    forcing: ForcingSpec = ForcingSpec()
    seed: int = 0
    k0: float = 2.0
    slope: float = 4.0
    energy: float = 1.0
    observer: Observer = Observer("modal", N_obs=4)
    smoothed: bool = False
    C: float = 1.0
    mu: float | str = 0.0
    dt: float = 1e-3
    T: float = 1.0
    sample_every: int = 1
    galerkin_n: int | None = None
    obs_every: int = 1
    transient: float | None = None
    c: float = 1.0
    h_candidates: tuple = ()
    seed2: int = 1
    determining_T: float | None = None
    determining_n_cells: int | None = None
    lab: EnsembleSpec = EnsembleSpec()
    snapshot_every: int | None = None
    write_observations: bool = False
    text: str = field(default="", repr=False, compare=False)

    @property
    def auto_mu(self) -> bool:
        return self.mu == "auto"

    def nudging(self, mu: float | None = None) -> NudgingConfig:
        m = self.mu if mu is None else mu
        if m == "auto":
            raise ConfigError("[nudging] mu = auto has not been resolved")
        return NudgingConfig(
            mu=float(m), kind=self.observer.kind, dt=self.dt, T=self.T,
            n_cells=self.observer.n_cells, N_obs=self.observer.N_obs,
            smoothed=self.smoothed, galerkin_n=self.galerkin_n,
            obs_every=self.obs_every)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed,
                       lab=replace(self.lab, seed=seed))

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate configuration text; raises :class:`ConfigError`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                   interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None

    for sec in cp.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"[{sec}] unknown key {key!r}")
    for sec, keys in _SCHEMA.items():
        for key, required in keys.items():
            if required and (sec not in cp or key not in cp[sec]):
                raise ConfigError(f"missing required field [{sec}] {key}")

    def get(sec, key, conv, default=None):
        if sec in cp and key in cp[sec]:
            return conv(sec, key, cp[sec][key])
        return default

    try:
        dom = DomainSpec(
            L=get("domain", "L", _float), N=get("domain", "N", _int),
            nu=get("domain", "nu", _float),
            dealias_fraction=get("domain", "dealias_fraction", _float, 2.0 / 3.0))
    except ValueError as exc:
        raise ConfigError(f"[domain] {exc}") from None

    pattern = cp.get("forcing", "pattern", fallback="taylor_green").strip()
    if pattern not in ("taylor_green", "zero"):
        raise ConfigError(f"[forcing] pattern: unsupported value {pattern!r}")
    forcing = ForcingSpec(pattern=pattern,
                          amplitude=get("forcing", "amplitude", _float, 1.0))

    kind = cp.get("observer", "kind", fallback="modal").strip()
    try:
        obs = Observer(kind, n_cells=get("observer", "n_cells", _int),
                       N_obs=get("observer", "N_obs", _int))
    except ValueError as exc:
        raise ConfigError(f"[observer] {exc}") from None
    smoothed = get("observer", "smoothed", _bool, False)
    if smoothed and kind != "nodal":
        raise ConfigError("[observer] smoothed: only valid for kind = nodal")
    if obs.kind == "modal" and obs.N_obs > dom.N // 2:
        raise ConfigError(f"[observer] N_obs: exceeds N/2 = {dom.N // 2}")

    mu_raw = cp.get("nudging", "mu", fallback="0").strip()
    mu: float | str = "auto" if mu_raw.lower() == "auto" else _float("nudging", "mu", mu_raw)
    dt = get("nudging", "dt", _float)
    T = get("nudging", "T", _float)
    if not dt > 0:
        raise ConfigError("[nudging] dt: must be positive")
    if T < 0:
        raise ConfigError("[nudging] T: must be nonnegative")
    if mu != "auto" and mu < 0:
        raise ConfigError("[nudging] mu: must be nonnegative")
    h_cand = get("criterion", "h_candidates", _floats, ())
    if any(b >= a for a, b in zip(h_cand, h_cand[1:])):
        raise ConfigError("[criterion] h_candidates: must be strictly decreasing")

    lab_defaults = EnsembleSpec()
    lab = EnsembleSpec(
        N=get("lab", "N", _int, lab_defaults.N), L=dom.L,
        n_fields=get("lab", "n_fields", _int, lab_defaults.n_fields),
        k0=get("lab", "k0", _float, None), slope=get("lab", "slope", _float, 4.0),
        seed=get("lab", "seed", _int, get("initial", "seed", _int, 0)),
        cells=get("lab", "cells", _ints, lab_defaults.cells))

    cfg = ExperimentConfig(
        domain=dom, forcing=forcing,
        seed=get("initial", "seed", _int, 0), k0=get("initial", "k0", _float, 2.0),
        slope=get("initial", "slope", _float, 4.0),
        energy=get("initial", "energy", _float, 1.0),
        observer=obs, smoothed=smoothed, C=get("observer", "C", _float, 1.0),
        mu=mu, dt=dt, T=T, sample_every=get("nudging", "sample_every", _int, 1),
        galerkin_n=get("nudging", "galerkin_n", _int),
        obs_every=get("nudging", "obs_every", _int, 1),
        transient=get("nudging", "transient", _float),
        c=get("criterion", "c", _float, 1.0), h_candidates=h_cand,
        seed2=get("determining", "seed2", _int, 1),
        determining_T=get("determining", "T", _float),
        determining_n_cells=get("determining", "n_cells", _int),
        lab=lab,
        snapshot_every=get("output", "snapshot_every", _int),
        write_observations=get("output", "observations", _bool, False),
        text=text,
    )
    if cfg.sample_every < 1:
        raise ConfigError("[nudging] sample_every: must be at least 1")
    if cfg.energy < 0:
        raise ConfigError("[initial] energy: must be nonnegative")
    if cfg.c <= 0:
        raise ConfigError("[criterion] c: must be positive")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)

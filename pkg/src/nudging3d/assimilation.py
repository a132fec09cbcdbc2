"""Time stepping for the truth and nudged systems, and the twin experiment.

Both systems use the same second-order integrating-factor Runge-Kutta step
(Heun's method on the viscously rescaled variable).  With E = exp(-nu lam dt)
and explicit right-hand side R,

    u*     = E (u + dt R(u))
    u_next = E u + dt/2 (E R(u) + R(u*)).

For the nudged copy, R also contains mu Pi(I(u) - I(w)), with the truth
observed at the matching stage (u_n for the first stage, u* for the second).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .observers import (
    KINDS,
    ObservationSet,
    Observer,
    interpolant_coeffs,
    observe,
)
from .spectral import (
    DomainSpec,
    SpectralVelocity,
    _bilinear,
    _inverse,
    _leray,
    h1_norm,
    h2_seminorm,
    inner,
    l2_norm,
    zero_field,
)

__all__ = [
    "InstabilityError",
    "CFLError",
    "CFL_LIMIT",
    "NudgingConfig",
    "TwinState",
    "TwinSeries",
    "EnergyReport",
    "step_nse",
    "step_nudged",
    "nudging_term",
    "galerkin_truncate",
    "galerkin_cutoff",
    "run_truth",
    "run_twin",
    "energy_budget",
    "cfl_number",
]

CFL_LIMIT = 0.5
BLOWUP_FACTOR = 1e6


class InstabilityError(RuntimeError):
    """Raised when a run produces non-finite values or runs away."""

    def __init__(self, message: str, step: int | None = None, t: float | None = None,
                 cfl: float | None = None):
        super().__init__(message)
        self.step = step
        self.t = t
        self.cfl = cfl


class CFLError(InstabilityError):
    """Raised when max|u| dt / dx exceeds :data:`CFL_LIMIT`."""


@dataclass(frozen=True)
class NudgingConfig:
    """Parameters of a nudged run.

    ``smoothed`` selects the mollified interpolant for nodal data (otherwise
    the piecewise-constant one).  ``obs_every`` > 1 holds each observation
    for that many steps, which goes beyond observing at every instant.
    """

    mu: float
    kind: str
    dt: float
    T: float
    n_cells: int | None = None
    N_obs: int | None = None
    smoothed: bool = False
    galerkin_n: int | None = None
    obs_every: int = 1

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if self.kind not in KINDS:
            raise ValueError(f"unknown observation kind {self.kind!r}")
        if self.smoothed and self.kind != "nodal":
            raise ValueError("the smoothed interpolant needs nodal observations")
        if self.galerkin_n is not None and self.galerkin_n < 0:
            raise ValueError("galerkin_n must be nonnegative")
        if self.obs_every < 1:
            raise ValueError("obs_every must be at least 1")
        self.observer  # validates resolution fields

    @property
    def observer(self) -> Observer:
        return Observer(self.kind, n_cells=self.n_cells, N_obs=self.N_obs)

    @property
    def mode(self) -> str:
        return "smoothed" if self.smoothed else "piecewise_constant"

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class TwinState:
    t: float
    u: SpectralVelocity
    w: SpectralVelocity
    f: SpectralVelocity


# -- single steps ------------------------------------------------------------

def cfl_number(u_phys: np.ndarray, dt: float, domain: DomainSpec) -> float:
    speed = np.sqrt(np.sum(u_phys**2, axis=0)).max()
    return float(speed * dt / domain.dx)


def _rhs(c: np.ndarray, f: np.ndarray, domain: DomainSpec):
    phys = _inverse(c, domain)
    return f - _bilinear(c, c, domain, u_phys=phys), phys


def _decay(domain: DomainSpec, dt: float) -> np.ndarray:
    return np.exp(-domain.nu * domain.lam * dt)


def _check_cfl(phys, dt, domain, check):
    if check:
        cfl = cfl_number(phys, dt, domain)
        if cfl > CFL_LIMIT:
            raise CFLError(f"CFL number {cfl:.3g} exceeds {CFL_LIMIT}", cfl=cfl)


def _truth_step(u: SpectralVelocity, f: SpectralVelocity, dt: float,
                check_cfl: bool = True):
    """One step of the unforced-by-data system; returns (u_next, u_stage)."""
    d = u.domain
    E = _decay(d, dt)
    R0, phys = _rhs(u.coeffs, f.coeffs, d)
    _check_cfl(phys, dt, d, check_cfl)
    cs = E * (u.coeffs + dt * R0)
    R1, _ = _rhs(cs, f.coeffs, d)
    cn = E * u.coeffs + 0.5 * dt * (E * R0 + R1)
    cn[:, ~d.active] = 0.0
    return SpectralVelocity(cn, d), SpectralVelocity(cs, d)


def step_nse(u: SpectralVelocity, f: SpectralVelocity, dt: float,
             check_cfl: bool = True) -> SpectralVelocity:
    """Advance du/dt + nu A u + B(u, u) = f by one step of size ``dt``.

    Raises :class:`CFLError` if max|u| dt / dx > 0.5 at the start of the step.
    """
    return _truth_step(u, f, dt, check_cfl)[0]


def nudging_term(obs_u: ObservationSet, w: SpectralVelocity, mu: float,
                 mode: str = "piecewise_constant") -> np.ndarray:
    """Coefficients of mu Pi(I(u) - I(w)) from observations of the truth.

    Pi removes the mean, projects onto divergence-free fields and keeps the
    dealiased modes only.
    """
    d = w.domain
    if obs_u.kind == "modal":
        obs_w = observe(w, Observer("modal", N_obs=obs_u.N_obs))
    else:
        obs_w = observe(w, Observer(obs_u.kind, n_cells=obs_u.grid.n_cells))
    diff = interpolant_coeffs(obs_u - obs_w, d, mode)
    diff[:, ~d.dealias] = 0.0
    return mu * _leray(diff, d)


def galerkin_cutoff(domain: DomainSpec, n: int) -> float:
    """n-th Stokes eigenvalue counted with multiplicity (two per wavevector)."""
    lam = np.sort(domain.lam[domain.active])
    lam = np.repeat(lam, 2)
    if n <= 0:
        return -np.inf
    return float(lam[min(n, lam.size) - 1])


def galerkin_truncate(u: SpectralVelocity, n: int) -> SpectralVelocity:
    """P_n u: keep every mode whose eigenvalue does not exceed lambda_n.

    Whole eigenvalue shells are kept, so P_n is an orthogonal projection.
    n = 0 gives the zero field; n beyond the resolved count is the identity.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    d = u.domain
    keep = d.lam <= galerkin_cutoff(d, n)
    return SpectralVelocity(np.where(keep, u.coeffs, 0.0), d)


def step_nudged(w: SpectralVelocity, obs_of_u, f: SpectralVelocity, mu: float,
                dt: float, config: NudgingConfig | None = None,
                mode: str | None = None, galerkin_n: int | None = None,
                check_cfl: bool = True) -> SpectralVelocity:
    """One step of the nudged system.

    ``obs_of_u`` is either a single observation (used at both stages) or a
    pair (observation at t_n, observation of the truth's stage value).  With
    ``mu == 0`` no feedback is evaluated and the step is identical to
    :func:`step_nse`.
    """
    if obs_of_u is None:
        if mu:
            raise ValueError("nudging with mu > 0 needs observations of the truth")
        obs1 = obs2 = None
    elif isinstance(obs_of_u, ObservationSet):
        obs1 = obs2 = obs_of_u
    else:
        obs1, obs2 = obs_of_u
    if config is not None:
        if obs1 is not None and obs1.kind != config.kind:
            raise ValueError(
                f"observation kind {obs1.kind!r} does not match the configured "
                f"kind {config.kind!r}"
            )
        mode = config.mode if mode is None else mode
        galerkin_n = config.galerkin_n if galerkin_n is None else galerkin_n
    mode = mode or "piecewise_constant"

    d = w.domain
    E = _decay(d, dt)
    wc = w.coeffs
    if galerkin_n is not None:
        keep = d.lam <= galerkin_cutoff(d, galerkin_n)
        wc = np.where(keep, wc, 0.0)
    R0, phys = _rhs(wc, f.coeffs, d)
    _check_cfl(phys, dt, d, check_cfl)
    if mu:
        R0 = R0 + nudging_term(obs1, SpectralVelocity(wc, d), mu, mode)
    cs = E * (wc + dt * R0)
    if galerkin_n is not None:
        cs = np.where(keep, cs, 0.0)
    R1, _ = _rhs(cs, f.coeffs, d)
    if mu:
        R1 = R1 + nudging_term(obs2, SpectralVelocity(cs, d), mu, mode)
    cn = E * wc + 0.5 * dt * (E * R0 + R1)
    cn[:, ~d.active] = 0.0
    if galerkin_n is not None:
        cn = np.where(keep, cn, 0.0)
    return SpectralVelocity(cn, d)


# -- series ------------------------------------------------------------------

SERIES_COLUMNS = ("t", "err_l2", "err_h1", "u_h1", "w_h1", "u_h2", "w_h2",
                  "energy_residual", "u_l2", "fu")


@dataclass
class TwinSeries:
    """Sampled diagnostics of a twin (or truth-only) run.

    Columns: |u - w|, ||u - w||, ||u||, ||w||, |Au|, |Aw|, the cumulative
    energy residual of u (see :func:`energy_budget`), |u| and (f, u).  For a
    truth-only run the w columns hold NaN.
    """

    nu: float
    t: list = field(default_factory=list)
    err_l2: list = field(default_factory=list)
    err_h1: list = field(default_factory=list)
    u_h1: list = field(default_factory=list)
    w_h1: list = field(default_factory=list)
    u_h2: list = field(default_factory=list)
    w_h2: list = field(default_factory=list)
    energy_residual: list = field(default_factory=list)
    u_l2: list = field(default_factory=list)
    fu: list = field(default_factory=list)

    def __len__(self):
        return len(self.t)

    def append(self, **row):
        for k in SERIES_COLUMNS:
            getattr(self, k).append(float(row[k]))

    def column(self, name: str) -> np.ndarray:
        if name not in SERIES_COLUMNS:
            raise KeyError(name)
        return np.asarray(getattr(self, name), dtype=float)

    def decay_slope(self, t_start: float, t_stop: float | None = None,
                    column: str = "err_h1", floor: float = 1e-13) -> float:
        """Least-squares slope of log(column) over [t_start, t_stop].

        Samples at or below ``floor`` (round-off level) are left out.
        """
        t = self.column("t")
        y = self.column(column)
        sel = (t >= t_start) & (y > floor)
        if t_stop is not None:
            sel &= t <= t_stop
        if sel.sum() < 2:
            raise ValueError("fewer than two usable samples in the fit window")
        return float(np.polyfit(t[sel], np.log(y[sel]), 1)[0])

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for row in zip(*(getattr(self, k) for k in SERIES_COLUMNS)):
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        from .io import atomic_write_text
        atomic_write_text(path, self.to_csv_text())

    @classmethod
    def from_csv(cls, path, nu: float) -> "TwinSeries":
        s = cls(nu=nu)
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                s.append(**{k: float(r[k]) if r[k] != "" else math.nan
                            for k in SERIES_COLUMNS})
        return s


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(v)


# -- drivers -----------------------------------------------------------------

def _guard(name: str, c: np.ndarray, ref: float, step: int, t: float):
    norm = float(np.sqrt(np.sum(np.abs(c) ** 2)))
    if not np.isfinite(norm):
        raise InstabilityError(f"{name} became non-finite at step {step} (t={t:.6g})",
                               step=step, t=t)
    if ref > 0 and norm > BLOWUP_FACTOR * ref:
        raise InstabilityError(
            f"{name} grew beyond {BLOWUP_FACTOR:g} x its initial size at step "
            f"{step} (t={t:.6g})", step=step, t=t)


class _EnergyIntegral:
    """Running trapezoid integrals for the energy budget of u."""

    def __init__(self, u: SpectralVelocity, f: SpectralVelocity, nu: float):
        self.nu = nu
        self.f = f
        self.e0 = l2_norm(u) ** 2
        self.prev = self._integrand(u)
        self.acc = 0.0

    def _integrand(self, u):
        return 2.0 * self.nu * h1_norm(u) ** 2 - 2.0 * inner(self.f, u)

    def advance(self, u: SpectralVelocity, dt: float) -> float:
        cur = self._integrand(u)
        self.acc += 0.5 * dt * (self.prev + cur)
        self.prev = cur
        return l2_norm(u) ** 2 + self.acc - self.e0


def _record(series: TwinSeries, t, u, w, f, residual):
    if w is None:
        nan = math.nan
        err_l2 = err_h1 = w_h1 = w_h2 = nan
    else:
        e = u - w
        err_l2, err_h1 = l2_norm(e), h1_norm(e)
        w_h1, w_h2 = h1_norm(w), h2_seminorm(w)
    series.append(t=t, err_l2=err_l2, err_h1=err_h1, u_h1=h1_norm(u), w_h1=w_h1,
                  u_h2=h2_seminorm(u), w_h2=w_h2, energy_residual=residual,
                  u_l2=l2_norm(u), fu=inner(f, u))


def run_truth(u0: SpectralVelocity, f: SpectralVelocity, dt: float, T: float,
              sample_every: int = 1, observer: Observer | None = None,
              snapshot_every: int | None = None):
    """Evolve the truth alone.

    Returns ``(series, final_state, observations, snapshots)``; the last two
    are lists (empty unless ``observer`` / ``snapshot_every`` are given).
    """
    d = u0.domain
    n_steps = int(round(T / dt))
    series = TwinSeries(nu=d.nu)
    budget = _EnergyIntegral(u0, f, d.nu)
    ref = float(np.sqrt(np.sum(np.abs(u0.coeffs) ** 2)))
    obs, snaps = [], []
    u = u0
    _record(series, 0.0, u, None, f, 0.0)
    if observer is not None:
        obs.append(observe(u, observer, 0.0))
    if snapshot_every:
        snaps.append((0.0, u))
    for n in range(1, n_steps + 1):
        t = n * dt
        try:
            u = step_nse(u, f, dt)
        except CFLError as exc:
            exc.step, exc.t = n, t
            raise
        _guard("u", u.coeffs, ref, n, t)
        res = budget.advance(u, dt)
        if n % sample_every == 0 or n == n_steps:
            _record(series, t, u, None, f, res)
            if observer is not None:
                obs.append(observe(u, observer, t))
        if snapshot_every and (n % snapshot_every == 0 or n == n_steps):
            snaps.append((t, u))
    return series, u, obs, snaps


def run_twin(u0: SpectralVelocity, config: NudgingConfig, domain: DomainSpec,
             f: SpectralVelocity, sample_every: int = 1,
             w0: SpectralVelocity | None = None, observations: list | None = None,
             mh_C: float = 1.0) -> TwinSeries:
    """Evolve the truth and the nudged copy together, starting from w(0) = 0.

    Observations of u are taken at every step (and at the intermediate
    stage).  If ``observations`` is a list, the step-start observations
    are appended to it at the sampling cadence.
    """
    if u0.domain != domain or f.domain != domain:
        raise ValueError("u0, f and domain disagree")
    observer = config.observer
    dt, mu = config.dt, config.mu
    n_steps = config.n_steps
    u = u0
    w = zero_field(domain) if w0 is None else w0
    if config.galerkin_n is not None:
        w = galerkin_truncate(w, config.galerkin_n)
    series = TwinSeries(nu=domain.nu)
    budget = _EnergyIntegral(u, f, domain.nu)
    ref = max(float(np.sqrt(np.sum(np.abs(u0.coeffs) ** 2))), 1e-300)
    _record(series, 0.0, u, w, f, 0.0)
    held = None
    for n in range(1, n_steps + 1):
        t = n * dt
        try:
            u_next, u_stage = _truth_step(u, f, dt)
            if mu:
                if (n - 1) % config.obs_every == 0 or held is None:
                    o1 = observe(u, observer, t - dt)
                    o2 = observe(u_stage, observer, t - 0.5 * dt)
                    held = (o1, o2) if config.obs_every == 1 else (o1, o1)
                if observations is not None and (n - 1) % sample_every == 0:
                    observations.append(held[0])
                w = step_nudged(w, held, f, mu, dt, config)
            else:
                if observations is not None and (n - 1) % sample_every == 0:
                    observations.append(observe(u, observer, t - dt))
                w = step_nudged(w, None, f, 0.0, dt, galerkin_n=config.galerkin_n)
        except CFLError as exc:
            exc.step, exc.t = n, t
            raise
        u = u_next
        _guard("u", u.coeffs, ref, n, t)
        _guard("w", w.coeffs, ref, n, t)
        res = budget.advance(u, dt)
        if n % sample_every == 0 or n == n_steps:
            _record(series, t, u, w, f, res)
    return series


# -- energy budget -------------------------------------------------------------

@dataclass
class EnergyReport:
    residual: float
    relative: float
    sup_u: float
    t_start: float
    t_stop: float

    def as_dict(self) -> dict:
        return dict(residual=self.residual, relative=self.relative,
                    sup_u=self.sup_u, t_start=self.t_start, t_stop=self.t_stop)


def energy_budget(series: TwinSeries, start: int = 0, stop: int | None = None) -> EnergyReport:
    """Energy balance of u over a uniformly sampled segment of ``series``.

    residual = |u(t)|^2 + 2 nu int ||u||^2 - |u(s)|^2 - 2 int (f, u), with the
    time integrals by the trapezoid rule on the samples.  ``relative``
    divides by max(|u(s)|^2, |u(t)|^2).  ``sup_u`` is max |u| on the segment,
    the empirical stand-in for the uniform bound M(u0).
    """
    t = series.column("t")[start:stop]
    if t.size == 0:
        raise ValueError("empty series segment")
    e = series.column("u_l2")[start:stop] ** 2
    g = series.column("u_h1")[start:stop] ** 2
    fu = series.column("fu")[start:stop]
    if t.size > 2:
        steps = np.diff(t)
        if np.ptp(steps) > 1e-9 * steps.max():
            raise ValueError("energy_budget needs a uniformly sampled segment")
    integrand = 2.0 * series.nu * g - 2.0 * fu
    integral = float(np.trapezoid(integrand, t)) if t.size > 1 else 0.0
    residual = float(e[-1] + integral - e[0])
    scale = max(e[0], e[-1])
    rel = abs(residual) / scale if scale > 0 else 0.0
    return EnergyReport(residual=residual, relative=rel,
                        sup_u=float(np.sqrt(e.max())), t_start=float(t[0]),
                        t_stop=float(t[-1]))

"""The observable regularity criterion and the determining-nodes experiment.

Given the sup-in-time observable M_h, the criterion compares

    lhs = max(nu lam1, c W_h^4 / nu^3, c W_h |f| / nu^2)
    rhs = nu / (4 c h^2),         W_h^2 = c |f|^2 / (nu^2 lam1) + M_h^2,

and is satisfied when lhs <= rhs; any mu in [lhs, rhs] is then admissible
for nudging.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .assimilation import step_nse
from .mollifier import cell_gram_kernels, neighbour_quadratic
from .observers import (
    ObservationGrid,
    ObservationSet,
    Observer,
    compute_Mh,
    observe_nodal,
)
from .spectral import (
    DomainSpec,
    SpectralVelocity,
    h1_norm,
    h2_seminorm,
    l2_norm,
    random_divfree_field,
)

__all__ = [
    "compute_Wh",
    "mu_window",
    "CriterionReport",
    "check_criterion",
    "evaluate_criterion",
    "resolution_for_h",
    "AdmissibleSearch",
    "find_admissible_h",
    "smoothed_l2_norm",
    "DeterminingSeries",
    "determining_nodes_experiment",
]


def compute_Wh(M_h: float, f_norm: float, nu: float, lambda1: float, c: float) -> float:
    """W_h = sqrt(c |f|^2 / (nu^2 lam1) + M_h^2)."""
    if min(M_h, f_norm, c) < 0:
        raise ValueError("M_h, |f| and c must be nonnegative")
    if nu <= 0 or lambda1 <= 0:
        raise ValueError("nu and lambda1 must be positive")
    return math.sqrt(c * f_norm**2 / (nu**2 * lambda1) + M_h**2)


def _lhs_terms(W_h, nu, lambda1, f_norm, c):
    return [nu * lambda1, c * W_h**4 / nu**3, c * W_h * f_norm / nu**2]


def mu_window(W_h: float, nu: float, lambda1: float, f_norm: float, c: float,
              h: float) -> tuple[float, float] | None:
    """Admissible nudging interval [max lhs, nu / (4 c h^2)], or None if empty."""
    if nu <= 0 or lambda1 <= 0 or h <= 0:
        raise ValueError("nu, lambda1 and h must be positive")
    lo = max(_lhs_terms(W_h, nu, lambda1, f_norm, c))
    hi = nu / (4.0 * c * h * h) if c > 0 else math.inf
    return (lo, hi) if lo <= hi else None


@dataclass
class CriterionReport:
    h: float
    M_h: float
    W_h: float
    lhs: list
    rhs: float
    mu_window: list | None
    satisfied: bool
    c_used: float
    sup_h1_measured: float | None = None

    @property
    def bound_holds(self) -> bool | None:
        """sup ||u|| <= W_h, when a measured sup was supplied."""
        if self.sup_h1_measured is None:
            return None
        return self.sup_h1_measured <= self.W_h

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["sup_h1_measured"] is None:
            del d["sup_h1_measured"]
        return d


def evaluate_criterion(M_h: float, h: float, f_norm: float, nu: float,
                       lambda1: float, c: float,
                       sup_h1: float | None = None) -> CriterionReport:
    W = compute_Wh(M_h, f_norm, nu, lambda1, c)
    lhs = _lhs_terms(W, nu, lambda1, f_norm, c)
    win = mu_window(W, nu, lambda1, f_norm, c, h)
    rhs = nu / (4.0 * c * h * h) if c > 0 else math.inf
    return CriterionReport(h=h, M_h=M_h, W_h=W, lhs=lhs, rhs=rhs,
                           mu_window=None if win is None else list(win),
                           satisfied=win is not None, c_used=c,
                           sup_h1_measured=sup_h1)


def check_criterion(series: Sequence[ObservationSet], f_norm: float,
                    domain: DomainSpec, c: float = 1.0, C: float = 1.0,
                    sup_h1: float | None = None) -> CriterionReport:
    """Evaluate the criterion from an observation time series.

    ``C`` is the constant in the cell-data form of M_h.  If ``sup_h1`` (the
    simulated sup ||u||) is given it is stored for the cross-check
    ``sup_h1 <= W_h``; it never enters the decision.
    """
    series = list(series)
    if not series:
        raise ValueError("criterion needs a nonempty observation series")
    hs = {round(o.h, 12) for o in series}
    if len(hs) != 1:
        raise ValueError("observation series mixes different h")
    M = compute_Mh(series, C)
    return evaluate_criterion(M, series[0].h, f_norm, domain.nu, domain.lambda_1,
                              c, sup_h1)


def resolution_for_h(kind: str, h: float, L: float) -> int:
    """n_cells (cell kinds) or N_obs (modal) whose length scale is ``h``."""
    x = L / (2.0 * np.pi * h) if kind == "modal" else math.sqrt(3.0) * L / h
    r = int(round(x))
    if r < 1 or abs(x - r) > 1e-6 * max(1.0, x):
        raise ValueError(f"h={h!r} does not correspond to an integer resolution")
    return r


def _observer_for(kind: str, res: int) -> Observer:
    if kind == "modal":
        return Observer("modal", N_obs=res)
    return Observer(kind, n_cells=res)


CURVE_COLUMNS = ("h", "M_h", "W_h", "lhs_max", "rhs", "satisfied")


@dataclass
class AdmissibleSearch:
    """Result of scanning decreasing h candidates."""

    h: float | None
    reports: list = field(default_factory=list)
    sup_h1: float = math.nan
    sup_h2: float = math.nan

    def curve_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in self.reports:
            w.writerow([repr(r.h), repr(r.M_h), repr(r.W_h), repr(max(r.lhs)),
                        repr(r.rhs), int(r.satisfied)])
        return buf.getvalue()


def find_admissible_h(states: Sequence[SpectralVelocity], kind: str,
                      h_candidates: Sequence[float], f_norm: float,
                      c: float = 1.0, C: float = 1.0,
                      stop_at_first: bool = False) -> AdmissibleSearch:
    """Scan a decreasing list of h and return the first one that satisfies
    the criterion for the sampled trajectory ``states``.

    Since the list is decreasing, the first success is the coarsest
    admissible h.  Every candidate is evaluated (unless ``stop_at_first``)
    so the full M_h(h) curve is recorded.
    """
    states = list(states)
    if not states:
        raise ValueError("need at least one state")
    hs = list(h_candidates)
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("h candidates must be strictly decreasing")
    d = states[0].domain
    sup1 = max(h1_norm(u) for u in states)
    sup2 = max(h2_seminorm(u) for u in states)
    out = AdmissibleSearch(h=None, sup_h1=sup1, sup_h2=sup2)
    for h in hs:
        obs_fn = _observer_for(kind, resolution_for_h(kind, h, d.L))
        rep = check_criterion([obs_fn(u) for u in states], f_norm, d, c, C, sup1)
        rep.h = h
        out.reports.append(rep)
        if rep.satisfied and out.h is None:
            out.h = h
            if stop_at_first:
                break
    return out


def smoothed_l2_norm(obs: ObservationSet) -> float:
    """|sum_a V_a phi_a| for nodal data, exactly, via the cell Gram kernel.

    The radius is h / 10 so the kernel is the universal one in cell units.
    """
    if obs.kind != "nodal":
        raise ValueError("smoothed norm is defined for nodal data")
    G = cell_gram_kernels()["phi_phi"]
    q = neighbour_quadratic(obs.values, obs.values, G)
    return math.sqrt(max(q, 0.0) * obs.grid.side**3)


@dataclass
class DeterminingSeries:
    t: np.ndarray
    obs_diff: np.ndarray     # |I~(u1 - u2)|
    diff: np.ndarray         # |u1 - u2|
    M_h: tuple
    reports: tuple

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("t", "obs_diff", "diff"))
        for row in zip(self.t, self.obs_diff, self.diff):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def determining_nodes_experiment(seed1: int, seed2: int, f: SpectralVelocity,
                                 n_cells: int, dt: float, T: float,
                                 k0: float = 2.0, energy: float = 1.0,
                                 slope: float = 4.0, c: float = 1.0, C: float = 1.0,
                                 sample_every: int = 1) -> DeterminingSeries:
    """Evolve two truths from different seeds and compare their nodal data.

    Records |I~(u1 - u2)| (smoothed nodal interpolant of the difference,
    exact norm) and |u1 - u2|.  The criterion for each run at this h is
    evaluated from the recorded data and returned as evidence; it is not
    assumed.
    """
    d = f.domain
    grid = ObservationGrid(n_cells, d.L)
    u1 = random_divfree_field(d, seed1, k0=k0, slope=slope, energy=energy)
    u2 = random_divfree_field(d, seed2, k0=k0, slope=slope, energy=energy)
    n_steps = int(round(T / dt))
    ts, od, dd = [], [], []
    obs1, obs2 = [], []

    def record(t):
        o1, o2 = observe_nodal(u1, grid, t), observe_nodal(u2, grid, t)
        obs1.append(o1)
        obs2.append(o2)
        ts.append(t)
        od.append(smoothed_l2_norm(o1 - o2))
        dd.append(l2_norm(u1 - u2))

    record(0.0)
    for n in range(1, n_steps + 1):
        u1 = step_nse(u1, f, dt)
        u2 = u1 if seed1 == seed2 else step_nse(u2, f, dt)
        if n % sample_every == 0 or n == n_steps:
            record(n * dt)
    fn = l2_norm(f)
    reps = tuple(check_criterion(o, fn, d, c, C) for o in (obs1, obs2))
    return DeterminingSeries(t=np.array(ts), obs_diff=np.array(od),
                             diff=np.array(dd),
                             M_h=tuple(r.M_h for r in reps), reports=reps)

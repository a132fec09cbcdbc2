"""Observation operators on a uniform cell grid and the observable M_h.

Three kinds of data are supported:

* ``modal``  - Fourier coefficients in the ball |k| <= N_obs (integer units),
* ``volume`` - cell averages of each velocity component,
* ``nodal``  - point values at the cell centres.

Everything is evaluated exactly from the spectral coefficients: cell
averages are a sinc filter followed by evaluation at the centres, and point
values are a direct (separable) Fourier sum.  The interpolants built from the
data have closed-form Fourier coefficients, which is how the nudging term is
assembled; :func:`interpolate` gives the same objects sampled on the grid.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .mollifier import MollifierTable, _cell_weights, rho_hat
from .spectral import DomainSpec, PhysicalField, SpectralVelocity, _inverse

__all__ = [
    "KINDS",
    "ObservationGrid",
    "ObservationSet",
    "Observer",
    "observe_modal",
    "observe_volume",
    "observe_nodal",
    "observe",
    "interpolate",
    "interpolant_coeffs",
    "modal_h",
    "mh_squared",
    "compute_Mh",
    "MhAccumulator",
    "observations_csv_text",
    "write_observations_csv",
    "read_observations_csv",
]

KINDS = ("modal", "volume", "nodal")
MODES = ("piecewise_constant", "smoothed")


@dataclass(frozen=True)
class ObservationGrid:
    """Uniform partition of [0, L]^3 into ``n_cells``^3 cubes."""

    n_cells: int
    L: float

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 1:
            raise ValueError(f"n_cells must be a positive integer, got {self.n_cells}")
        if not self.L > 0:
            raise ValueError("box side L must be positive")

    @property
    def side(self) -> float:
        return self.L / self.n_cells

    @property
    def h(self) -> float:
        """Cell diameter sqrt(3) L / n_cells."""
        return math.sqrt(3.0) * self.L / self.n_cells

    @property
    def centers_1d(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.side

    @property
    def cell_centers(self) -> np.ndarray:
        """(n^3, 3) array of centres x_alpha in C order of alpha."""
        c = self.centers_1d
        X = np.meshgrid(c, c, c, indexing="ij")
        return np.stack([x.ravel() for x in X], axis=1)

    def indices(self) -> np.ndarray:
        n = self.n_cells
        return np.stack(np.unravel_index(np.arange(n**3), (n, n, n)), axis=1)


def modal_h(N_obs: int, L: float) -> float:
    """Length scale matched to a modal cutoff, 2 pi N_obs / L ~ 1 / h."""
    return L / (2.0 * np.pi * N_obs)


@dataclass
class ObservationSet:
    """Observed data at one instant.

    For ``modal`` data, ``values`` is a (M, 3) complex array paired with the
    integer wavevectors ``modes`` (M, 3), conjugate partners included.  For
    ``volume`` and ``nodal`` data, ``values`` is real with shape (n, n, n, 3).
    """

    kind: str
    values: np.ndarray
    L: float
    grid: ObservationGrid | None = None
    N_obs: int | None = None
    modes: np.ndarray | None = field(default=None, repr=False)
    t: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown observation kind {self.kind!r}")
        v = np.asarray(self.values)
        if not np.all(np.isfinite(v)):
            raise ValueError("observation payload is not finite")
        if self.kind == "modal":
            if self.N_obs is None or self.modes is None:
                raise ValueError("modal observations need N_obs and modes")
            self.modes = np.asarray(self.modes, dtype=np.int64).reshape(-1, 3)
            self.values = np.asarray(v, dtype=complex).reshape(-1, 3)
            if len(self.values) != len(self.modes):
                raise ValueError("modal payload does not match its mode list")
        else:
            if self.grid is None:
                raise ValueError(f"{self.kind} observations need a grid")
            n = self.grid.n_cells
            self.values = np.asarray(v, dtype=float)
            if self.values.shape != (n, n, n, 3):
                raise ValueError(
                    f"payload shape {self.values.shape} does not match "
                    f"{n} cells per side"
                )

    @property
    def h(self) -> float:
        if self.kind == "modal":
            return modal_h(self.N_obs, self.L)
        return self.grid.h

    def __sub__(self, other: "ObservationSet") -> "ObservationSet":
        if (self.kind, self.N_obs, self.grid) != (other.kind, other.N_obs, other.grid):
            raise ValueError("cannot subtract observations of different layouts")
        return ObservationSet(self.kind, self.values - other.values, self.L,
                              self.grid, self.N_obs, self.modes, self.t)


# -- observation ---------------------------------------------------------------

def _ball(domain: DomainSpec, N_obs: int) -> np.ndarray:
    return domain.active & (domain.k2int <= N_obs * N_obs)


def observe_modal(u: SpectralVelocity, N_obs: int, t: float = 0.0) -> ObservationSet:
    """Coefficients of ``u`` in the integer ball |k| <= N_obs."""
    d = u.domain
    if int(N_obs) != N_obs or N_obs < 1:
        raise ValueError("N_obs must be a positive integer")
    if N_obs > d.N // 2:
        raise ValueError(f"N_obs={N_obs} exceeds the resolved range N/2={d.N // 2}")
    mask = _ball(d, N_obs)
    idx = np.nonzero(mask)
    modes = np.stack([d.k1d[i] for i in idx], axis=1)
    values = u.coeffs[:, mask].T
    return ObservationSet("modal", values, d.L, N_obs=int(N_obs), modes=modes, t=t)


def _centre_phases(domain: DomainSpec, grid: ObservationGrid) -> np.ndarray:
    """exp(i kappa k x_j) for centres x_j, shape (n, N)."""
    return np.exp(1j * domain.kappa * np.outer(grid.centers_1d, domain.k1d))


def _eval_at_centres(coeffs: np.ndarray, domain: DomainSpec,
                     grid: ObservationGrid) -> np.ndarray:
    """Direct Fourier sum of (3, N, N, N) coefficients at the centres.

    Returns real values of shape (n, n, n, 3).
    """
    E = _centre_phases(domain, grid)
    out = np.einsum("cpqr,ip,jq,kr->ijkc", coeffs, E, E, E, optimize=True)
    return out.real


def _cell_filter(domain: DomainSpec, n_cells: int) -> np.ndarray:
    """Cell-average multiplier prod_d sinc(pi k_d / n) on the full grid."""
    s = np.sinc(domain.k1d / n_cells)
    return s[:, None, None] * s[None, :, None] * s[None, None, :]


def observe_volume(u: SpectralVelocity, grid: ObservationGrid,
                   t: float = 0.0) -> ObservationSet:
    """Exact cell averages of each velocity component."""
    _check_grid(u.domain, grid)
    vals = _eval_at_centres(u.coeffs * _cell_filter(u.domain, grid.n_cells),
                            u.domain, grid)
    return ObservationSet("volume", vals, grid.L, grid=grid, t=t)


def observe_nodal(u: SpectralVelocity, grid: ObservationGrid,
                  t: float = 0.0) -> ObservationSet:
    """Point values at the cell centres by direct Fourier summation."""
    _check_grid(u.domain, grid)
    vals = _eval_at_centres(u.coeffs, u.domain, grid)
    return ObservationSet("nodal", vals, grid.L, grid=grid, t=t)


def _check_grid(domain: DomainSpec, grid: ObservationGrid):
    if not math.isclose(domain.L, grid.L, rel_tol=1e-12):
        raise ValueError("observation grid and domain have different box sizes")


@dataclass(frozen=True)
class Observer:
    """Observation layout: a kind plus its resolution (n_cells or N_obs)."""

    kind: str
    n_cells: int | None = None
    N_obs: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown observation kind {self.kind!r}")
        if self.kind == "modal" and not self.N_obs:
            raise ValueError("modal observer needs N_obs")
        if self.kind != "modal" and not self.n_cells:
            raise ValueError(f"{self.kind} observer needs n_cells")

    def grid(self, L: float) -> ObservationGrid | None:
        return None if self.kind == "modal" else ObservationGrid(self.n_cells, L)

    def h(self, L: float) -> float:
        if self.kind == "modal":
            return modal_h(self.N_obs, L)
        return ObservationGrid(self.n_cells, L).h

    def __call__(self, u: SpectralVelocity, t: float = 0.0) -> ObservationSet:
        return observe(u, self, t)


def observe(u: SpectralVelocity, observer: Observer, t: float = 0.0) -> ObservationSet:
    if observer.kind == "modal":
        return observe_modal(u, observer.N_obs, t)
    grid = observer.grid(u.domain.L)
    if observer.kind == "volume":
        return observe_volume(u, grid, t)
    return observe_nodal(u, grid, t)


# -- interpolation -------------------------------------------------------------

def interpolant_coeffs(obs: ObservationSet, domain: DomainSpec,
                       mode: str = "piecewise_constant",
                       epsilon: float | None = None) -> np.ndarray:
    """Fourier coefficients (3, N, N, N) of the interpolant of ``obs``.

    For cell data the piecewise-constant interpolant sum_a V_a chi_a has
    coefficients S(k) exp(-i pi (k1+k2+k3)/n) fft_n(V)[k mod n] / n^3 with S
    the cell-average sinc filter.  The smoothed interpolant sum_a V_a phi_a is
    its convolution with rho_eps, i.e. a further factor rho_hat(kappa |k|).
    ``epsilon`` defaults to h / 10.  The mean mode is included; Nyquist
    modes are dropped.
    """
    if mode not in MODES:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    out = np.zeros((3,) + domain.shape, dtype=complex)
    if obs.kind == "modal":
        if mode != "piecewise_constant":
            raise ValueError("modal observations only support spectral truncation")
        idx = tuple((obs.modes % domain.N).T)
        out[(slice(None),) + idx] = obs.values.T
        out[:, ~domain.active] = 0.0
        return out
    if mode == "smoothed" and obs.kind != "nodal":
        raise ValueError("the smoothed interpolant is defined for nodal data only")
    n = obs.grid.n_cells
    V = np.fft.fftn(obs.values, axes=(0, 1, 2)) / n**3
    km = domain.k1d % n
    block = V[np.ix_(km, km, km)]                      # (N, N, N, 3)
    kx, ky, kz = domain.kint
    phase = np.exp(-1j * np.pi * (kx + ky + kz) / n)
    mult = _cell_filter(domain, n) * phase
    if mode == "smoothed":
        eps = obs.grid.h / 10.0 if epsilon is None else epsilon
        mult = mult * smoothing_multiplier(domain, eps)
    out = np.moveaxis(block, -1, 0) * mult
    kx, ky, kz = domain.kint
    half = domain.N // 2
    nyq = (np.abs(kx) == half) | (np.abs(ky) == half) | (np.abs(kz) == half)
    out[:, nyq] = 0.0
    return out


_RHO_CACHE: dict = {}


def smoothing_multiplier(domain: DomainSpec, epsilon: float) -> np.ndarray:
    """rho_hat(kappa |k|) on the full coefficient grid (cached)."""
    key = (domain.L, domain.N, float(epsilon))
    if key not in _RHO_CACHE:
        k2 = domain.k2int
        uniq, inv = np.unique(k2, return_inverse=True)
        vals = rho_hat(domain.kappa * np.sqrt(uniq.astype(float)), epsilon)
        _RHO_CACHE[key] = vals[inv].reshape(k2.shape)
    return _RHO_CACHE[key]


def interpolate(obs: ObservationSet, mode: str, domain: DomainSpec,
                mollifier: MollifierTable | None = None) -> PhysicalField:
    """Interpolant of ``obs`` sampled on the collocation grid.

    Piecewise-constant cell data give sum_a V_a chi_a, with points on a cell
    face taking the mean of the two neighbouring values.  Smoothed nodal data
    give sum_a V_a phi_a and need a :class:`MollifierTable`.  Modal data give
    the truncated Fourier series.  The result is not mean-zeroed.
    """
    if mode not in MODES:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    if obs.kind == "modal":
        if mode != "piecewise_constant":
            raise ValueError("modal observations only support spectral truncation")
        return PhysicalField(_inverse(interpolant_coeffs(obs, domain), domain), domain)
    if mode == "smoothed":
        if obs.kind != "nodal":
            raise ValueError("the smoothed interpolant is defined for nodal data only")
        if mollifier is None:
            raise ValueError("smoothed interpolation needs a MollifierTable")
        if mollifier.n_cells != obs.grid.n_cells or mollifier.domain != domain:
            raise ValueError("mollifier table does not match the observation layout")
        return PhysicalField(mollifier.apply(obs.values), domain)
    W = _cell_weights(domain.N, obs.grid.n_cells)
    vals = np.einsum("abdc,ia,jb,kd->cijk", obs.values, W, W, W, optimize=True)
    return PhysicalField(vals, domain)


# -- the observable M_h --------------------------------------------------------

def mh_squared(obs: ObservationSet, C: float = 1.0) -> float:
    """Instantaneous M_h^2 of one observation.

    modal: ||P_N u||^2 = L^3 sum lambda_k |u_k|^2;
    volume / nodal: C h sum_a |v_a|^2.
    """
    if obs.kind == "modal":
        lam = (2.0 * np.pi / obs.L) ** 2 * np.sum(obs.modes**2, axis=1)
        return float(obs.L**3 * np.sum(lam[:, None] * np.abs(obs.values) ** 2))
    return float(C * obs.grid.h * np.sum(obs.values**2))


class MhAccumulator:
    """Streaming sup over time of M_h^2."""

    def __init__(self, C: float = 1.0):
        self.C = C
        self.kind: str | None = None
        self.count = 0
        self.sup_sq = 0.0

    def update(self, obs: ObservationSet) -> float:
        if self.kind is None:
            self.kind = obs.kind
        elif obs.kind != self.kind:
            raise ValueError("M_h series must have a uniform observation kind")
        val = mh_squared(obs, self.C)
        self.sup_sq = max(self.sup_sq, val)
        self.count += 1
        return val

    @property
    def value(self) -> float:
        if not self.count:
            raise ValueError("M_h of an empty series is undefined")
        return math.sqrt(self.sup_sq)


def compute_Mh(series: Iterable[ObservationSet], C: float = 1.0) -> float:
    """M_h = sup_t sqrt(M_h^2(t)) over an observation time series."""
    acc = MhAccumulator(C)
    for obs in series:
        acc.update(obs)
    return acc.value


# -- CSV -----------------------------------------------------------------------

CSV_COLUMNS = ("t", "kind", "i", "j", "k", "vx", "vy", "vz")


def observations_csv_text(series: Sequence[ObservationSet]) -> str:
    """Write a series of observations, one row per cell or mode.

    A leading ``#`` line records L and the resolution so the file can be
    read back without side information.  Modal values are complex.
    """
    series = list(series)
    if not series:
        raise ValueError("nothing to write")
    first = series[0]
    res = first.N_obs if first.kind == "modal" else first.grid.n_cells
    buf = io.StringIO()
    buf.write(f"# kind={first.kind} L={float(first.L)!r} resolution={res}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for obs in series:
        if obs.kind != first.kind:
            raise ValueError("observation series must have a uniform kind")
        if obs.kind == "modal":
            for kk, v in zip(obs.modes, obs.values):
                w.writerow([repr(float(obs.t)), obs.kind, *map(int, kk),
                            *(repr(complex(x)) for x in v)])
        else:
            for a in obs.grid.indices():
                v = obs.values[tuple(a)]
                w.writerow([repr(float(obs.t)), obs.kind, *map(int, a),
                            *(repr(float(x)) for x in v)])
    return buf.getvalue()


def write_observations_csv(path, series: Sequence[ObservationSet]) -> None:
    from .io import atomic_write_text
    atomic_write_text(path, observations_csv_text(series))


def read_observations_csv(path) -> list[ObservationSet]:
    with open(path, newline="") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError("missing observation header line")
        meta = dict(tok.split("=", 1) for tok in header[1:].split())
        kind, L, res = meta["kind"], float(meta["L"]), int(meta["resolution"])
        rows = list(csv.DictReader(fh))
    by_t: dict[float, list] = {}
    for r in rows:
        by_t.setdefault(float(r["t"]), []).append(r)
    out = []
    for t, rs in by_t.items():
        if kind == "modal":
            modes = [[int(r["i"]), int(r["j"]), int(r["k"])] for r in rs]
            vals = [[complex(r[c]) for c in ("vx", "vy", "vz")] for r in rs]
            out.append(ObservationSet("modal", np.array(vals), L, N_obs=res,
                                      modes=np.array(modes), t=t))
        else:
            grid = ObservationGrid(res, L)
            vals = np.zeros((res, res, res, 3))
            for r in rs:
                vals[int(r["i"]), int(r["j"]), int(r["k"])] = [
                    float(r[c]) for c in ("vx", "vy", "vz")]
            out.append(ObservationSet(kind, vals, L, grid=grid, t=t))
    return out

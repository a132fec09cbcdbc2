"""Smoothed cell indicators phi_a = rho_eps * chi_{Q_a} on the periodic box.

Two representations are provided.

* :class:`MollifierTable` samples the indicators on the collocation grid by
  discrete periodic convolution; it needs the mollifier radius to be resolved
  by the grid.
* :func:`rho_hat` gives the exact Fourier transform of the radial bump, which
  is what the nudged dynamics use, and :func:`cell_gram_kernels` gives the
  (translation-invariant, nearest-neighbour) Gram matrices of the indicators,
  from which exact L^2 and H^1 norms of smoothed interpolants follow.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np
from scipy import integrate

from .spectral import DomainSpec

__all__ = [
    "bump",
    "bump_normalization",
    "rho_eps",
    "rho_hat",
    "MollifierTable",
    "build_mollifier",
    "cell_gram_kernels",
    "cell_gram_kernels_sampled",
    "neighbour_quadratic",
    "SKIN_RATIO",
]

# eps / (cell side) when eps = h / 10 and h = sqrt(3) * side
SKIN_RATIO = np.sqrt(3.0) / 10.0


def bump(r):
    """Unnormalised profile exp(-1 / (1 - r^2)) on |r| < 1, zero outside."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def bump_normalization() -> float:
    """K0 such that K0 * bump integrates to one over the unit ball in R^3."""
    val, _ = integrate.quad(
        lambda r: 4.0 * np.pi * r * r * np.exp(-1.0 / (1.0 - r * r)),
        0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200,
    )
    return 1.0 / val


def rho_eps(r, eps: float):
    """Scaled mollifier eps^-3 K0 bump(r / eps) as a function of radius."""
    return bump_normalization() * bump(np.asarray(r) / eps) / eps**3


@lru_cache(maxsize=8)
def _gauss_nodes(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def rho_hat(xi, eps: float, order: int = 400):
    """Fourier transform of rho_eps at radial frequency |xi|.

    rho_hat(xi) = 4 pi K0 int_0^1 bump(s) s^2 sinc(xi eps s) ds, evaluated by
    Gauss-Legendre quadrature; rho_hat(0) = 1.
    """
    xi = np.asarray(xi, dtype=float)
    s, w = _gauss_nodes(order)
    prof = 4.0 * np.pi * bump_normalization() * w * bump(s) * s * s
    arg = np.multiply.outer(xi * eps, s)
    return np.sinc(arg / np.pi) @ prof


def _cell_weights(N: int, n: int) -> np.ndarray:
    """(N, n) matrix: weight of collocation point i inside cell j.

    Points on a cell face get weight 1/2 in each neighbour, so the weights
    sum to one at every point and the sampled indicator is trapezoid-exact.
    """
    if N % n:
        raise ValueError(f"grid size N={N} is not a multiple of n_cells={n}")
    m = N // n
    W = np.zeros((N, n))
    for j in range(n):
        W[j * m:(j + 1) * m, j] = 1.0
        W[j * m, j] -= 0.5
        W[((j + 1) * m) % N, j] += 0.5
    return W


@dataclass
class MollifierTable:
    """Sampled smoothed indicators for every cell of an observation grid.

    Only the indicator of cell (0, 0, 0) is stored; the others are periodic
    shifts of it.
    """

    n_cells: int
    domain: DomainSpec = field(repr=False)
    epsilon: float
    K0: float
    kernel: np.ndarray = field(repr=False)
    base: np.ndarray = field(repr=False)
    kernel_mass: float

    @property
    def shift(self) -> int:
        return self.domain.N // self.n_cells

    def phi(self, alpha) -> np.ndarray:
        """phi_alpha sampled on the collocation grid."""
        s = self.shift
        return np.roll(self.base, tuple(s * int(a) for a in alpha), axis=(0, 1, 2))

    def partition_sum(self) -> np.ndarray:
        """sum_alpha phi_alpha on the grid (identically one in exact arithmetic)."""
        n = self.n_cells
        return self.apply(np.ones((n, n, n, 1)))[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        """sum_alpha values[alpha] phi_alpha for cell data of shape (n, n, n, c).

        Returns an array of shape (c, N, N, N).
        """
        W = _cell_weights(self.domain.N, self.n_cells)
        pc = np.einsum("abdc,ia,jb,kd->cijk", values, W, W, W, optimize=True)
        kh = np.fft.rfftn(self.kernel)
        out = np.fft.irfftn(np.fft.rfftn(pc, axes=(1, 2, 3)) * kh,
                            s=self.domain.shape, axes=(1, 2, 3))
        return out


def build_mollifier(n_cells: int, domain: DomainSpec,
                    epsilon: float | None = None) -> MollifierTable:
    """Assemble the smoothed indicators by discrete periodic convolution.

    The default radius is eps = h / 10 with h = sqrt(3) L / n_cells.  The grid
    spacing must satisfy L / N <= eps / 2.
    """
    h = np.sqrt(3.0) * domain.L / n_cells
    eps = h / 10.0 if epsilon is None else float(epsilon)
    if domain.dx > eps / 2:
        raise ValueError(
            f"mollifier radius eps={eps:.4g} is under-resolved by grid spacing "
            f"{domain.dx:.4g}; need L/N <= eps/2"
        )
    N = domain.N
    # minimum-image distances from the origin
    d1 = np.minimum(np.arange(N), N - np.arange(N)) * domain.dx
    r = np.sqrt(d1[:, None, None] ** 2 + d1[None, :, None] ** 2 + d1[None, None, :] ** 2)
    kernel = rho_eps(r, eps) * domain.dx**3
    mass = float(kernel.sum())
    kernel = kernel / mass

    W = _cell_weights(N, n_cells)
    chi0 = np.einsum("i,j,k->ijk", W[:, 0], W[:, 0], W[:, 0])
    base = np.fft.irfftn(np.fft.rfftn(chi0) * np.fft.rfftn(kernel), s=domain.shape,
                        axes=(0, 1, 2))
    return MollifierTable(n_cells=n_cells, domain=domain, epsilon=eps,
                          K0=bump_normalization(), kernel=kernel, base=base,
                          kernel_mass=mass)


# angular averages of |n_1|, |n_1 n_2|, |n_1 n_2 n_3| over the unit sphere
_SPHERE = (1.0, 0.5, 2.0 / (3.0 * np.pi), 1.0 / (4.0 * np.pi))
# angular averages of |n_1|, |n_1 n_2| over the unit circle
_CIRCLE = (1.0, 2.0 / np.pi, 1.0 / np.pi)


def _radial_pair_integral(ratio: float, kernel, order: int = 160) -> float:
    """int int f(s) f(t) kernel(s, t) ds dt for the radial density f of rho.

    ``kernel`` must be symmetric; the square is split along s = t so the
    |s - t| kinks sit on the quadrature boundary.
    """
    x, w = _gauss_nodes(order)
    s = ratio * x
    ws = ratio * w
    f = 4.0 * np.pi * bump_normalization() * bump(x) * x * x / ratio
    S = s[:, None]
    T = s[:, None] * x[None, :]
    fT = 4.0 * np.pi * bump_normalization() * bump(T / ratio) * (T / ratio) ** 2 / ratio
    vals = (f * ws)[:, None] * (fT * w[None, :]) * S * kernel(S, T)
    return 2.0 * float(vals.sum())


def _moments(ratio: float):
    """Radial moments used by the Gram kernels.

    mu[j]  = E|X|^j           for X ~ rho (radius ``ratio``)
    m[j]   = E|X + Y|^j       for X, Y iid ~ rho, i.e. moments of rho * rho
    nu[j]  = int_{R^2} (rho * rho)(|y|) |y|^j dy   (slice through the origin)
    """
    x, w = _gauss_nodes(200)
    r = ratio * x
    f = 4.0 * np.pi * bump_normalization() * bump(x) * x * x / ratio
    mu = [float(np.sum(ratio * w * f * r**j)) for j in range(4)]
    m = [1.0]
    for j in (1, 2, 3):
        p = j + 2
        m.append(_radial_pair_integral(
            ratio, lambda S, T, p=p: ((S + T) ** p - np.abs(S - T) ** p) / (2 * S * T * p)))
    nu = []
    for j in (0, 1, 2):
        p = j + 1
        nu.append(_radial_pair_integral(
            ratio, lambda S, T, p=p: ((S + T) ** p - np.abs(S - T) ** p) / (4 * S * T * p)))
    return mu, m, nu


def _tent_expectation(offsets, moments, angular) -> float:
    """E[prod_d g(offset_d, Z_d)] for a radial Z with the given moments.

    g(0, z) = 1 - |z| (own cell), g(+-1, z) = max(0, +-z), which averages to
    |z| / 2 under the reflection symmetry of Z.
    """
    zeros = sum(1 for o in offsets if o == 0)
    ones = len(offsets) - zeros
    total = 0.0
    for u in range(zeros + 1):
        c = comb(zeros, u)
        j = u + ones
        total += (-1) ** u * c * 0.5**ones * moments[j] * angular[j]
    return total


@lru_cache(maxsize=8)
def cell_gram_kernels(ratio: float = SKIN_RATIO) -> dict:
    """Nearest-neighbour Gram kernels of the smoothed unit-cell indicators.

    The mollifier radius is ``ratio`` in cell-side units (must be < 1/2 so
    only nearest neighbours overlap).  Arrays are indexed by offset + 1:

    ``phi_phi``  int phi_0 phi_delta             (scales with side^3)
    ``phi_chi``  int phi_0 chi_delta             (scales with side^3)
    ``grad``     int grad phi_0 . grad phi_delta (scales with side)

    The cube autocorrelation is a product of tents, so each entry reduces to
    radial moments of rho (for ``phi_chi``) or rho * rho (the others).
    """
    if not 0 < ratio < 0.5:
        raise ValueError("mollifier radius must be below half a cell side")
    mu, m, nu = _moments(ratio)
    phi_phi = np.zeros((3, 3, 3))
    phi_chi = np.zeros((3, 3, 3))
    grad = np.zeros((3, 3, 3))
    for idx in np.ndindex(3, 3, 3):
        off = tuple(i - 1 for i in idx)
        phi_phi[idx] = _tent_expectation(off, m, _SPHERE)
        phi_chi[idx] = _tent_expectation(off, mu, _SPHERE)
        # -Laplacian of the tent product puts point masses on the planes
        # z_d = 0: weight 2 for an own-cell direction, -1 for a neighbour
        g = 0.0
        for d in range(3):
            rest = off[:d] + off[d + 1:]
            g += (2.0 if off[d] == 0 else -1.0) * _tent_expectation(rest, nu, _CIRCLE)
        grad[idx] = g
    return {"phi_phi": phi_phi, "phi_chi": phi_chi, "grad": grad}


def cell_gram_kernels_sampled(ratio: float = SKIN_RATIO, resolution: int = 32) -> dict:
    """Same kernels as :func:`cell_gram_kernels`, by brute-force sampling.

    Builds the indicators on a reference 3 x 3 x 3 block of unit cells at
    ``resolution`` points per side and integrates products on the grid.
    Second-order accurate in 1 / resolution; used as an independent check.
    """
    ref = DomainSpec(L=3.0, N=3 * resolution, nu=0.0)
    table = build_mollifier(3, ref, epsilon=ratio)
    centre = table.phi((1, 1, 1))
    dv = ref.dx**3
    W = _cell_weights(ref.N, 3)
    k = 2.0 * np.pi / ref.L * np.fft.fftfreq(ref.N, 1.0 / ref.N)
    K = np.meshgrid(k, k, k, indexing="ij")
    ch = np.fft.fftn(centre)
    k2 = K[0] ** 2 + K[1] ** 2 + K[2] ** 2
    lap_centre = np.real(np.fft.ifftn(k2 * ch))

    out = {name: np.zeros((3, 3, 3)) for name in ("phi_phi", "phi_chi", "grad")}
    for idx in np.ndindex(3, 3, 3):
        other = table.phi(idx)
        chi = np.einsum("i,j,k->ijk", W[:, idx[0]], W[:, idx[1]], W[:, idx[2]])
        out["phi_phi"][idx] = np.sum(centre * other) * dv
        out["phi_chi"][idx] = np.sum(centre * chi) * dv
        out["grad"][idx] = np.sum(lap_centre * other) * dv
    return out


def neighbour_quadratic(a: np.ndarray, b: np.ndarray, kernel: np.ndarray) -> float:
    """sum_alpha sum_delta a[alpha] . b[alpha + delta] kernel[delta + 1].

    ``a`` and ``b`` hold per-cell vectors with shape (n, n, n, c) on a periodic
    cell lattice.
    """
    total = 0.0
    for da in (-1, 0, 1):
        for db in (-1, 0, 1):
            for dc in (-1, 0, 1):
                kval = kernel[da + 1, db + 1, dc + 1]
                if kval == 0.0:
                    continue
                shifted = np.roll(b, (-da, -db, -dc), axis=(0, 1, 2))
                total += kval * float(np.sum(a * shifted))
    return total

"""Fourier pseudo-spectral discretization of the periodic box [0, L]^3.

Velocity fields are stored as full complex coefficient arrays of shape
``(3, N, N, N)`` in FFT index order, normalised so that

    u(x) = sum_k  u_hat(k) exp(2 pi i k.x / L).

With this convention the L^2 norm is ``|u|^2 = L^3 sum_k |u_hat(k)|^2`` and
the Stokes operator is diagonal with eigenvalue ``|2 pi k / L|^2``.

The stored mode set excludes the Nyquist planes (``|k_i| = N/2``) and the
mean mode, which keeps Hermitian symmetry and the Leray projection exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import numpy as np

__all__ = [
    "DomainSpec",
    "SpectralVelocity",
    "PhysicalField",
    "ForcingSpec",
    "to_physical",
    "to_spectral",
    "hermitian_part",
    "leray_project",
    "apply_stokes",
    "bilinear",
    "inner",
    "l2_norm",
    "h1_norm",
    "h2_seminorm",
    "divergence_residual",
    "make_forcing",
    "random_divfree_field",
    "zero_field",
]


@dataclass(frozen=True)
class DomainSpec:
    """Periodic box of side ``L`` resolved by ``N`` points per dimension."""

    L: float
    N: int
    nu: float
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if not (self.L > 0):
            raise ValueError("box side L must be positive")
        if int(self.N) != self.N or self.N < 4 or self.N % 2:
            raise ValueError(f"N must be an even integer >= 4, got {self.N}")
        if self.nu < 0:
            raise ValueError("viscosity nu must be nonnegative")
        if not (0 < self.dealias_fraction <= 1):
            raise ValueError("dealias_fraction must lie in (0, 1]")

    @property
    def kappa(self) -> float:
        """Fundamental wavenumber 2 pi / L."""
        return 2.0 * np.pi / self.L

    @property
    def lambda_1(self) -> float:
        """Smallest Stokes eigenvalue (2 pi / L)^2."""
        return self.kappa**2

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.N, self.N, self.N)

    @property
    def dx(self) -> float:
        return self.L / self.N

    @cached_property
    def k1d(self) -> np.ndarray:
        """Integer wavenumbers in FFT order."""
        return np.fft.fftfreq(self.N, 1.0 / self.N).astype(np.int64)

    @cached_property
    def kint(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable integer wavevector components."""
        k = self.k1d
        return (k[:, None, None], k[None, :, None], k[None, None, :])

    @cached_property
    def kvec(self) -> np.ndarray:
        """Physical wavevectors 2 pi k / L, shape (3, N, N, N)."""
        kx, ky, kz = np.meshgrid(self.k1d, self.k1d, self.k1d, indexing="ij")
        return self.kappa * np.stack([kx, ky, kz]).astype(float)

    @cached_property
    def k2int(self) -> np.ndarray:
        kx, ky, kz = self.kint
        return kx**2 + ky**2 + kz**2

    @cached_property
    def lam(self) -> np.ndarray:
        """Stokes eigenvalue |2 pi k / L|^2 attached to every stored mode."""
        return self.kappa**2 * self.k2int.astype(float)

    @cached_property
    def inv_lam(self) -> np.ndarray:
        out = np.zeros(self.shape)
        nz = self.k2int > 0
        out[nz] = 1.0 / self.lam[nz]
        return out

    @cached_property
    def active(self) -> np.ndarray:
        """Stored modes: no mean mode, no Nyquist planes."""
        kx, ky, kz = self.kint
        half = self.N // 2
        m = (np.abs(kx) < half) & (np.abs(ky) < half) & (np.abs(kz) < half)
        m = m & (self.k2int > 0)
        return m

    @cached_property
    def dealias(self) -> np.ndarray:
        """Sharp 2/3-rule mask intersected with the stored modes."""
        kx, ky, kz = self.kint
        cut = self.dealias_fraction * self.N / 2
        m = (np.abs(kx) <= cut) & (np.abs(ky) <= cut) & (np.abs(kz) <= cut)
        return m & self.active

    @cached_property
    def grid(self) -> np.ndarray:
        """Collocation points x_j = j L / N, shape (N,)."""
        return np.arange(self.N) * self.dx

    @cached_property
    def _rev(self) -> np.ndarray:
        return (-np.arange(self.N)) % self.N


@dataclass
class SpectralVelocity:
    """Fourier coefficients of a real, zero-mean vector field."""

    coeffs: np.ndarray
    domain: DomainSpec = field(repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (3,) + self.domain.shape:
            raise ValueError(
                f"coefficient array has shape {self.coeffs.shape}, "
                f"expected {(3,) + self.domain.shape}"
            )

    def copy(self) -> "SpectralVelocity":
        return SpectralVelocity(self.coeffs.copy(), self.domain)

    def _wrap(self, c: np.ndarray) -> "SpectralVelocity":
        return SpectralVelocity(c, self.domain)

    def __add__(self, other: "SpectralVelocity") -> "SpectralVelocity":
        return self._wrap(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralVelocity") -> "SpectralVelocity":
        return self._wrap(self.coeffs - other.coeffs)

    def __neg__(self) -> "SpectralVelocity":
        return self._wrap(-self.coeffs)

    def __mul__(self, a: float) -> "SpectralVelocity":
        return self._wrap(a * self.coeffs)

    __rmul__ = __mul__


@dataclass
class PhysicalField:
    """Real vector field sampled on the N^3 collocation grid."""

    values: np.ndarray
    domain: DomainSpec = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (3,) + self.domain.shape:
            raise ValueError(
                f"field has shape {self.values.shape}, "
                f"expected {(3,) + self.domain.shape}"
            )


def zero_field(domain: DomainSpec) -> SpectralVelocity:
    return SpectralVelocity(np.zeros((3,) + domain.shape, complex), domain)


# -- transforms ---------------------------------------------------------------

def _inverse(coeffs: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """Real samples of Hermitian coefficient arrays (any leading shape)."""
    N = domain.N
    half = coeffs[..., : N // 2 + 1]
    return np.fft.irfftn(half, s=domain.shape, axes=(-3, -2, -1)) * N**3


def _forward(values: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """Full Hermitian coefficient arrays of real samples."""
    N = domain.N
    half = np.fft.rfftn(values, axes=(-3, -2, -1)) / N**3
    full = np.empty(values.shape[:-3] + domain.shape, dtype=complex)
    full[..., : N // 2 + 1] = half
    rev = domain._rev
    mirrored = np.conj(half[..., rev, :, :][..., :, rev, :])
    full[..., N // 2 + 1 :] = mirrored[..., 1 : N // 2][..., ::-1]
    return full


def hermitian_part(coeffs: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """Average a coefficient array with its conjugate reflection c(-k)*."""
    rev = domain._rev
    refl = coeffs[..., rev, :, :][..., :, rev, :][..., :, :, rev]
    return 0.5 * (coeffs + np.conj(refl))


def to_physical(u: SpectralVelocity) -> PhysicalField:
    return PhysicalField(_inverse(u.coeffs, u.domain), u.domain)


def to_spectral(p: PhysicalField) -> SpectralVelocity:
    """Forward transform; the mean and Nyquist modes are zeroed exactly."""
    c = _forward(p.values, p.domain)
    c = hermitian_part(c, p.domain)
    c[:, ~p.domain.active] = 0.0
    return SpectralVelocity(c, p.domain)


# -- linear operators ---------------------------------------------------------

def _leray(coeffs: np.ndarray, domain: DomainSpec) -> np.ndarray:
    kv = domain.kvec
    kdotu = np.einsum("i...,i...->...", kv, coeffs)
    # k.k / |k|^2 uses the same float wavevectors as k.u for exact cancellation
    out = coeffs - kv * (kdotu * domain.inv_lam)
    out[:, ~domain.active] = 0.0
    return out


def leray_project(u: SpectralVelocity) -> SpectralVelocity:
    """Orthogonal projection onto divergence-free, zero-mean fields."""
    return SpectralVelocity(_leray(u.coeffs, u.domain), u.domain)


def apply_stokes(u: SpectralVelocity) -> SpectralVelocity:
    """A u = -Laplacian u, i.e. multiplication by |2 pi k / L|^2."""
    return SpectralVelocity(u.domain.lam * u.coeffs, u.domain)


def bilinear(u: SpectralVelocity, v: SpectralVelocity) -> SpectralVelocity:
    """Leray-projected, dealiased convection term B(u, v) = P[(u.grad) v].

    Both factors are transformed to the collocation grid, the product is
    formed pointwise, and the result is truncated by the 2/3 mask before
    projection.
    """
    domain = u.domain
    return SpectralVelocity(_bilinear(u.coeffs, v.coeffs, domain), domain)


def _bilinear(uc: np.ndarray, vc: np.ndarray, domain: DomainSpec,
              u_phys: np.ndarray | None = None) -> np.ndarray:
    if u_phys is None:
        u_phys = _inverse(uc, domain)
    kv = domain.kvec
    # grad_v[j, i] = d_j v_i
    grad_v = _inverse(1j * kv[:, None] * vc[None, :], domain)
    conv = np.einsum("j...,ji...->i...", u_phys, grad_v)
    out = _forward(conv, domain)
    out[:, ~domain.dealias] = 0.0
    out = _leray(out, domain)
    return hermitian_part(out, domain)


# -- norms ----------------------------------------------------------------------

def inner(u: SpectralVelocity, v: SpectralVelocity) -> float:
    """L^2 inner product (u, v)."""
    L3 = u.domain.L**3
    return float(L3 * np.real(np.vdot(u.coeffs, v.coeffs)))


def l2_norm(u: SpectralVelocity) -> float:
    """|u|, the L^2 norm."""
    return float(np.sqrt(u.domain.L**3 * np.sum(np.abs(u.coeffs) ** 2)))


def h1_norm(u: SpectralVelocity) -> float:
    """||u|| = |A^{1/2} u|."""
    w = u.domain.lam * np.sum(np.abs(u.coeffs) ** 2, axis=0)
    return float(np.sqrt(u.domain.L**3 * np.sum(w)))


def h2_seminorm(u: SpectralVelocity) -> float:
    """|A u|."""
    w = u.domain.lam**2 * np.sum(np.abs(u.coeffs) ** 2, axis=0)
    return float(np.sqrt(u.domain.L**3 * np.sum(w)))


def divergence_residual(u: SpectralVelocity) -> float:
    """max_k |k.u_hat(k)| / max_k |u_hat(k)| in integer-wavevector units."""
    kv = u.domain.kvec / u.domain.kappa
    div = np.abs(np.einsum("i...,i...->...", kv, u.coeffs)).max()
    scale = np.abs(u.coeffs).max()
    return float(div / scale) if scale > 0 else 0.0


# -- forcing and initial data ---------------------------------------------------

@dataclass(frozen=True)
class ForcingSpec:
    """Time-independent body force.

    ``pattern`` is ``"taylor_green"`` (wavevectors (+-1, +-1, +-1)),
    ``"explicit"`` (``modes`` lists ``((k1, k2, k3), (fx, fy, fz))`` pairs
    of integer wavevectors and complex amplitudes; conjugate partners are
    added automatically) or ``"zero"``.
    """

    pattern: str = "taylor_green"
    amplitude: float = 1.0
    modes: tuple = ()


def make_forcing(spec: ForcingSpec, domain: DomainSpec) -> SpectralVelocity:
    if spec.pattern == "zero" or spec.amplitude == 0:
        return zero_field(domain)
    if spec.pattern == "taylor_green":
        k = domain.kappa
        x = domain.grid
        X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
        vals = np.stack([
            np.sin(k * X) * np.cos(k * Y) * np.cos(k * Z),
            -np.cos(k * X) * np.sin(k * Y) * np.cos(k * Z),
            np.zeros_like(X),
        ])
        f = to_spectral(PhysicalField(spec.amplitude * vals, domain))
        return f
    if spec.pattern == "explicit":
        return _explicit_forcing(spec, domain)
    raise ValueError(f"unknown forcing pattern {spec.pattern!r}")


def _explicit_forcing(spec: ForcingSpec, domain: DomainSpec) -> SpectralVelocity:
    c = np.zeros((3,) + domain.shape, complex)
    N = domain.N
    listed = {}
    for kk, amp in spec.modes:
        kk = tuple(int(v) for v in kk)
        amp = spec.amplitude * np.asarray(amp, dtype=complex)
        if any(abs(v) >= N // 2 for v in kk) or not any(kk):
            raise ValueError(f"forcing wavevector {kk} is not resolvable")
        scale = np.linalg.norm(kk) * np.abs(amp).max()
        if abs(np.dot(kk, amp)) > 1e-12 * scale:
            raise ValueError(f"forcing mode {kk} is not divergence-free")
        listed[kk] = amp
    for kk, amp in listed.items():
        partner = tuple(-v for v in kk)
        if partner in listed and not np.allclose(listed[partner], np.conj(amp)):
            raise ValueError(f"forcing modes {kk} and {partner} are not conjugate")
        c[(slice(None),) + tuple(v % N for v in kk)] = amp
        c[(slice(None),) + tuple(v % N for v in partner)] = np.conj(amp)
    return SpectralVelocity(c, domain)


def random_divfree_field(domain: DomainSpec, seed: int, k0: float = 2.0,
                         slope: float = 4.0, energy: float = 1.0,
                         dealiased: bool = True) -> SpectralVelocity:
    """Seeded random solenoidal field with a prescribed shell spectrum.

    Each integer shell ``s = round(|k|)`` carries energy proportional to
    ``s**slope * exp(-s**2 / k0**2)``; the total ``|u|^2 / 2`` equals
    ``energy`` up to round-off.
    """
    if energy < 0:
        raise ValueError("energy must be nonnegative")
    if energy == 0:
        return zero_field(domain)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((3,) + domain.shape)
    c = _forward(noise, domain)
    c = hermitian_part(c, domain)
    keep = domain.dealias if dealiased else domain.active
    c[:, ~keep] = 0.0
    c = _leray(c, domain)

    shell = np.rint(np.sqrt(domain.k2int)).astype(np.int64)
    dens = np.sum(np.abs(c) ** 2, axis=0)
    e_shell = np.bincount(shell.ravel(), weights=dens.ravel())
    s = np.arange(e_shell.size, dtype=float)
    target = np.where(s > 0, s**slope * np.exp(-(s**2) / k0**2), 0.0)
    scale = np.zeros_like(e_shell)
    nz = e_shell > 0
    scale[nz] = np.sqrt(target[nz] / e_shell[nz])
    c = c * scale[shell]
    u = SpectralVelocity(c, domain)
    cur = 0.5 * l2_norm(u) ** 2
    return u * np.sqrt(energy / cur)

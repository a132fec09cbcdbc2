import numpy as np
import pytest
from hypothesis import given, strategies as st

from nudging3d.spectral import (
    DomainSpec,
    ForcingSpec,
    PhysicalField,
    SpectralVelocity,
    apply_stokes,
    bilinear,
    divergence_residual,
    h1_norm,
    h2_seminorm,
    inner,
    l2_norm,
    leray_project,
    make_forcing,
    random_divfree_field,
    to_physical,
    to_spectral,
)

from conftest import TWO_PI, shear_mode
from oracles import convection_bruteforce, eval_points

seeds = st.integers(min_value=0, max_value=2**31 - 1)


class TestDomain:
    def test_rejects_odd_or_small_N(self):
        with pytest.raises(ValueError):
            DomainSpec(L=1.0, N=7, nu=1.0)
        with pytest.raises(ValueError):
            DomainSpec(L=1.0, N=2, nu=1.0)

    def test_rejects_nonpositive_L(self):
        with pytest.raises(ValueError):
            DomainSpec(L=0.0, N=8, nu=1.0)

    def test_lambda1(self):
        d = DomainSpec(L=2.0, N=8, nu=1.0)
        assert d.lambda_1 == pytest.approx(np.pi**2, rel=1e-15)

    def test_active_excludes_mean_and_nyquist(self, d8):
        assert not d8.active[0, 0, 0]
        assert not d8.active[4, 1, 1]
        assert d8.active[3, 3, 3]
        # 7^3 - 1 stored modes
        assert d8.active.sum() == 342

    def test_dealias_is_two_thirds(self, d8):
        # N = 8: |k_i| <= 8/3, i.e. |k_i| <= 2, minus the mean
        assert d8.dealias.sum() == 5**3 - 1


class TestTransforms:
    @given(seed=seeds)
    def test_round_trip(self, seed):
        d = DomainSpec(L=TWO_PI, N=8, nu=1.0)
        u = random_divfree_field(d, seed, dealiased=False)
        back = to_spectral(to_physical(u))
        assert np.allclose(back.coeffs, u.coeffs, atol=1e-14)

    @given(seed=seeds)
    def test_parseval(self, seed):
        d = DomainSpec(L=3.0, N=8, nu=1.0)
        u = random_divfree_field(d, seed)
        p = to_physical(u).values
        grid_norm2 = np.sum(p**2) * d.dx**3
        assert l2_norm(u) ** 2 == pytest.approx(grid_norm2, rel=1e-12)

    def test_physical_values_match_direct_sum(self, d8):
        u = random_divfree_field(d8, 4)
        p = to_physical(u).values
        idx = np.array([[0, 0, 0], [1, 2, 3], [7, 5, 2]])
        pts = idx * d8.dx
        direct = eval_points(u.coeffs, d8.L, pts)
        assert np.allclose(p[:, idx[:, 0], idx[:, 1], idx[:, 2]].T, direct, atol=1e-13)

    def test_physical_field_shape_checked(self, d8):
        with pytest.raises(ValueError):
            PhysicalField(np.zeros((3, 4, 4, 4)), d8)


class TestLeray:
    @given(seed=seeds)
    def test_idempotent(self, seed):
        d = DomainSpec(L=TWO_PI, N=8, nu=1.0)
        rng = np.random.default_rng(seed)
        v = to_spectral(PhysicalField(rng.standard_normal((3,) + d.shape), d))
        p1 = leray_project(v)
        p2 = leray_project(p1)
        assert np.abs(p2.coeffs - p1.coeffs).max() <= 1e-14 * np.abs(p1.coeffs).max()
        assert divergence_residual(p1) <= 1e-13

    def test_gradient_is_annihilated(self, d8):
        rng = np.random.default_rng(0)
        phi = np.fft.fftn(rng.standard_normal(d8.shape)) / d8.N**3
        grad = 1j * d8.kvec * phi
        grad[:, ~d8.active] = 0
        p = leray_project(SpectralVelocity(grad, d8))
        assert np.abs(p.coeffs).max() < 1e-14


class TestNorms:
    def test_shear_mode_norms(self, d8):
        # u = (sin y, 0, 0) on [0, 2 pi]^3: |u|^2 = 4 pi^3, ||u||^2 = 4 pi^3
        u = shear_mode(d8)
        assert l2_norm(u) ** 2 == pytest.approx(4 * np.pi**3, rel=1e-14)
        assert h1_norm(u) ** 2 == pytest.approx(4 * np.pi**3, rel=1e-14)
        assert h2_seminorm(u) ** 2 == pytest.approx(4 * np.pi**3, rel=1e-14)

    def test_stokes_eigenvalue(self, d8):
        u = shear_mode(d8, m=2)
        Au = apply_stokes(u)
        assert np.allclose(Au.coeffs, 4.0 * u.coeffs)

    @given(seed=seeds)
    def test_poincare(self, seed):
        d = DomainSpec(L=TWO_PI, N=8, nu=1.0)
        u = random_divfree_field(d, seed)
        assert d.lambda_1 * l2_norm(u) ** 2 <= h1_norm(u) ** 2 * (1 + 1e-12)
        assert inner(u, u) == pytest.approx(l2_norm(u) ** 2, rel=1e-13)


class TestBilinear:
    def test_matches_bruteforce_convolution(self, d8):
        u = random_divfree_field(d8, 11)
        v = random_divfree_field(d8, 12)
        got = bilinear(u, v).coeffs
        ref = convection_bruteforce(u.coeffs, v.coeffs, d8.L, d8.dealias)
        scale = np.abs(ref).max()
        assert np.abs(got - ref).max() <= 1e-12 * scale

    @given(s1=seeds, s2=seeds)
    def test_skew_symmetry(self, s1, s2):
        d = DomainSpec(L=TWO_PI, N=16, nu=1.0)
        u = random_divfree_field(d, s1)
        w = random_divfree_field(d, s2)
        b = inner(bilinear(u, w), w)
        scale = l2_norm(u) * h1_norm(w) * l2_norm(w) + 1e-300
        assert abs(b) / scale <= 1e-12

    def test_shear_flow_is_steady(self, d8):
        u = shear_mode(d8)
        assert np.abs(bilinear(u, u).coeffs).max() < 1e-15

    def test_output_is_dealiased_and_solenoidal(self, d16):
        u = random_divfree_field(d16, 3, dealiased=False)
        b = bilinear(u, u)
        assert np.all(b.coeffs[:, ~d16.dealias] == 0)
        assert divergence_residual(b) < 1e-13


class TestForcingAndInitialData:
    def test_taylor_green_norm(self):
        # |f| = A sqrt(L^3 / 4); L = 2 pi gives 7.874804972861210 (mpmath)
        d = DomainSpec(L=TWO_PI, N=16, nu=1.0)
        f = make_forcing(ForcingSpec(amplitude=1.0), d)
        assert l2_norm(f) == pytest.approx(7.874804972861210, rel=1e-13)
        assert divergence_residual(f) < 1e-13

    def test_zero_forcing(self, d8):
        f = make_forcing(ForcingSpec(pattern="zero"), d8)
        assert not np.any(f.coeffs)

    def test_explicit_forcing_rejects_compressive_mode(self, d8):
        spec = ForcingSpec(pattern="explicit", modes=(((1, 0, 0), (1.0, 0, 0)),))
        with pytest.raises(ValueError):
            make_forcing(spec, d8)

    def test_explicit_forcing_adds_conjugate(self, d8):
        spec = ForcingSpec(pattern="explicit", modes=(((0, 1, 0), (1j, 0, 0)),))
        f = make_forcing(spec, d8)
        assert f.coeffs[0, 0, 1, 0] == pytest.approx(1j)
        assert f.coeffs[0, 0, 7, 0] == pytest.approx(-1j)

    @given(seed=seeds, energy=st.floats(0.01, 10.0))
    def test_random_field_energy_and_divergence(self, seed, energy):
        d = DomainSpec(L=TWO_PI, N=8, nu=1.0)
        u = random_divfree_field(d, seed, energy=energy)
        assert 0.5 * l2_norm(u) ** 2 == pytest.approx(energy, rel=1e-12)
        assert divergence_residual(u) < 1e-13
        assert np.all(u.coeffs[:, ~d.dealias] == 0)

    def test_random_field_is_reproducible(self, d8):
        a = random_divfree_field(d8, 5)
        b = random_divfree_field(d8, 5)
        c = random_divfree_field(d8, 6)
        assert np.array_equal(a.coeffs, b.coeffs)
        assert not np.array_equal(a.coeffs, c.coeffs)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nudging3d.assimilation import step_nse
from nudging3d.criterion import (
    check_criterion,
    compute_Wh,
    determining_nodes_experiment,
    evaluate_criterion,
    find_admissible_h,
    mu_window,
    resolution_for_h,
    smoothed_l2_norm,
)
from nudging3d.mollifier import build_mollifier
from nudging3d.observers import ObservationGrid, Observer, interpolate, observe, observe_nodal
from nudging3d.spectral import (
    DomainSpec,
    ForcingSpec,
    l2_norm,
    make_forcing,
    random_divfree_field,
    zero_field,
)

from conftest import TWO_PI


class TestFormulas:
    def test_hand_computed_window(self):
        # M = 2, |f| = 3, nu = lam1 = 1, c = 1/2, h = 0.05:
        # W^2 = 0.5 * 9 + 4 = 8.5
        # lhs = (1, 0.5 * 8.5^2, 0.5 * sqrt(8.5) * 3) = (1, 36.125, 4.37321...)
        # rhs = 1 / (4 * 0.5 * 0.0025) = 200
        rep = evaluate_criterion(2.0, 0.05, 3.0, 1.0, 1.0, 0.5)
        assert rep.W_h == pytest.approx(math.sqrt(8.5), rel=1e-15)
        assert rep.lhs == pytest.approx([1.0, 36.125, 1.5 * math.sqrt(8.5)], rel=1e-14)
        assert rep.rhs == pytest.approx(200.0, rel=1e-14)
        assert rep.mu_window == pytest.approx([36.125, 200.0], rel=1e-14)
        assert rep.satisfied

    def test_boundary_case_is_admissible(self):
        # zero data: lhs = nu lam1 = 1, rhs = 1 / (4 h^2) = 1 at h = 1/2
        rep = evaluate_criterion(0.0, 0.5, 0.0, 1.0, 1.0, 1.0)
        assert rep.satisfied and rep.mu_window == [1.0, 1.0]

    def test_empty_window(self):
        assert mu_window(10.0, 1.0, 1.0, 0.0, 1.0, 1.0) is None

    def test_inputs_validated(self):
        with pytest.raises(ValueError):
            compute_Wh(-1.0, 0.0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            compute_Wh(1.0, 0.0, 0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            mu_window(1.0, 1.0, 1.0, 0.0, 1.0, 0.0)

    @given(M=st.floats(0, 100), f=st.floats(0, 100), c=st.floats(1e-3, 10),
           h=st.floats(1e-3, 10))
    def test_monotone_in_h(self, M, f, c, h):
        # a smaller h only enlarges the window
        a = evaluate_criterion(M, h, f, 1.0, 1.0, c)
        b = evaluate_criterion(M, h / 2, f, 1.0, 1.0, c)
        assert b.rhs == pytest.approx(4 * a.rhs)
        assert (not a.satisfied) or b.satisfied

    def test_report_serialisation(self):
        rep = evaluate_criterion(1.0, 0.1, 1.0, 1.0, 1.0, 1.0, sup_h1=0.5)
        d = rep.to_dict()
        assert d["sup_h1_measured"] == 0.5 and rep.bound_holds
        assert "sup_h1_measured" not in evaluate_criterion(1.0, 0.1, 1.0, 1.0, 1.0, 1.0).to_dict()


class TestResolution:
    @pytest.mark.parametrize("kind,h,res", [
        ("modal", 0.25, 4), ("volume", math.sqrt(3) * TWO_PI / 8, 8),
        ("nodal", math.sqrt(3) * TWO_PI / 32, 32)])
    def test_round_trip(self, kind, h, res):
        assert resolution_for_h(kind, h, TWO_PI) == res

    def test_non_integer(self):
        with pytest.raises(ValueError):
            resolution_for_h("volume", 1.0, TWO_PI)


class TestCheckCriterion:
    def test_zero_forcing_trivial_config_satisfied(self, d8):
        obs = [observe(zero_field(d8), Observer("modal", N_obs=2))]
        rep = check_criterion(obs, 0.0, d8, c=1.0)
        assert rep.satisfied
        assert rep.M_h == 0.0 and rep.W_h == 0.0

    def test_mixed_h_rejected(self, d8):
        u = random_divfree_field(d8, 0)
        obs = [observe(u, Observer("modal", N_obs=1)), observe(u, Observer("modal", N_obs=2))]
        with pytest.raises(ValueError):
            check_criterion(obs, 0.0, d8)

    def test_empty(self, d8):
        with pytest.raises(ValueError):
            check_criterion([], 0.0, d8)

    def test_large_forcing_flips(self, d8):
        u = random_divfree_field(d8, 0, energy=0.01)
        obs = [observe(u, Observer("modal", N_obs=3))]
        ok = check_criterion(obs, 0.01, d8, c=0.1)
        bad = check_criterion(obs, 100.0, d8, c=0.1)
        assert ok.satisfied and not bad.satisfied


@pytest.fixture(scope="module")
def states():
    d = DomainSpec(L=TWO_PI, N=16, nu=1.0)
    f = make_forcing(ForcingSpec(amplitude=0.05), d)
    u = random_divfree_field(d, 1, energy=0.01)
    out = [u]
    for _ in range(10):
        u = step_nse(u, f, 0.02)
        out.append(u)
    return out, l2_norm(f)


class TestAdmissibleSearch:
    def test_returns_coarsest(self, states):
        us, fn = states
        res = find_admissible_h(us, "modal", [1.0, 0.5, 0.25, 0.125], fn, c=0.5)
        sat = [r.h for r in res.reports if r.satisfied]
        assert sat and not res.reports[0].satisfied
        assert res.h == max(sat)
        assert len(res.reports) == 4
        assert res.curve_csv_text().splitlines()[0] == "h,M_h,W_h,lhs_max,rhs,satisfied"

    def test_all_coarse_not_satisfied(self, states):
        us, fn = states
        res = find_admissible_h(us, "modal", [1.0], fn, c=50.0)
        assert res.h is None

    def test_candidates_must_decrease(self, states):
        us, fn = states
        with pytest.raises(ValueError):
            find_admissible_h(us, "modal", [0.25, 0.5], fn)

    def test_stop_at_first(self, states):
        us, fn = states
        res = find_admissible_h(us, "modal", [1.0, 0.5, 0.25], fn, c=0.5, stop_at_first=True)
        assert res.reports[-1].satisfied


class TestSmoothedNorm:
    def test_matches_grid_table(self):
        d = DomainSpec(L=TWO_PI, N=64, nu=1.0)
        u = random_divfree_field(d, 2, k0=1.5)
        o = observe_nodal(u, ObservationGrid(2, d.L))
        table = build_mollifier(2, d)
        vals = interpolate(o, "smoothed", d, table).values
        grid_norm = math.sqrt(np.sum(vals**2) * d.dx**3)
        assert smoothed_l2_norm(o) == pytest.approx(grid_norm, rel=5e-3)

    def test_rejects_volume(self, d8):
        u = random_divfree_field(d8, 0)
        with pytest.raises(ValueError):
            smoothed_l2_norm(observe(u, Observer("volume", n_cells=2)))


class TestDetermining:
    def test_same_seed_gives_zero_difference(self, d8):
        f = make_forcing(ForcingSpec(amplitude=0.05), d8)
        res = determining_nodes_experiment(3, 3, f, 4, 0.02, 0.2, energy=0.01)
        assert np.all(res.diff == 0) and np.all(res.obs_diff == 0)
        assert res.M_h[0] == res.M_h[1]

    def test_columns(self, d8):
        f = make_forcing(ForcingSpec(amplitude=0.05), d8)
        res = determining_nodes_experiment(1, 2, f, 4, 0.02, 0.2, energy=0.01, sample_every=5)
        assert res.t.tolist() == pytest.approx([0.0, 0.1, 0.2])
        assert res.to_csv_text().splitlines()[0] == "t,obs_diff,diff"
        assert np.all(res.diff > 0)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import ORACLE_PV_UNIT_KW
from oracles import HAND_SETS
from sdnr.devices import MarkovParams
from sdnr.scenarios import (
    InvalidMomentsError,
    ScenarioSet,
    availability_prob,
    beta_params,
    build_tree,
    deterministic_set,
    farm_scenarios,
    kantorovich_reduce,
    kantorovich_select,
    pv_output,
    reduction_distance,
    sample_irradiance,
    units_up_pmf,
)

PRINTED = MarkovParams(failure_rate=144.0, repair_rate=5.0)
SHIPPED = MarkovParams(failure_rate=5.0, repair_rate=144.0)


class TestMarkov:
    @pytest.mark.parametrize("m", [PRINTED, SHIPPED])
    @pytest.mark.parametrize("start", [0.0, 1.0, 0.3])
    def test_matches_matrix_exponential(self, m, start):
        p_up, p_down = availability_prob(m, start, 12.0)
        ref = oracles.markov_up_probability(m.failure_rate, m.repair_rate, start, 12.0)
        assert p_up == pytest.approx(ref, abs=1e-14)
        assert p_up + p_down == pytest.approx(1.0)

    def test_starts_at_initial_state(self):
        assert availability_prob(SHIPPED, 1.0, 0.0) == (1.0, 0.0)

    def test_relaxes_to_steady_state(self):
        p_up, _ = availability_prob(SHIPPED, 0.0, 1e7)
        assert p_up == pytest.approx(144 / 149)

    def test_negative_time(self):
        with pytest.raises(ValueError):
            availability_prob(SHIPPED, 1.0, -1.0)


class TestUnitsUp:
    @pytest.mark.parametrize("t", [1, 6, 12, 24])
    @pytest.mark.parametrize("A", range(6))
    @pytest.mark.parametrize("m", [PRINTED, SHIPPED])
    def test_matches_enumeration(self, m, A, t):
        pmf = units_up_pmf(5, A, m, t)
        ref = oracles.units_up_by_enumeration(5, A, m.failure_rate, m.repair_rate, t)
        np.testing.assert_allclose(pmf, ref, atol=1e-10, rtol=0)

    def test_time_zero_is_deterministic(self):
        pmf = units_up_pmf(5, 2, SHIPPED, 0.0)
        assert pmf[3] == pytest.approx(1.0)

    @settings(max_examples=200, deadline=None)
    @given(
        st.integers(0, 10),
        st.data(),
        st.floats(0, 500),
        st.floats(0, 500),
        st.floats(0, 1e5),
    )
    def test_is_a_distribution(self, T, data, lam, mu, t):
        A = data.draw(st.integers(0, T))
        pmf = units_up_pmf(T, A, MarkovParams(lam, mu), t)
        assert pmf.shape == (T + 1,)
        assert np.all(pmf >= -1e-15)
        assert pmf.sum() == pytest.approx(1.0, abs=1e-9)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            units_up_pmf(3, 4, SHIPPED, 1.0)


class TestIrradiance:
    def test_beta_moment_match(self):
        a, b = beta_params(0.5, 0.25)
        assert (a, b) == pytest.approx((1.5, 1.5))
        assert a / (a + b) == pytest.approx(0.5)
        assert a * b / ((a + b) ** 2 * (a + b + 1)) == pytest.approx(0.0625)

    @pytest.mark.parametrize("mean,std", [(0.0, 0.1), (1.0, 0.1), (0.5, 0.0), (0.5, 0.5), (0.2, 0.45)])
    def test_invalid_moments(self, mean, std):
        with pytest.raises(InvalidMomentsError):
            beta_params(mean, std)

    def test_binned_mean(self, case33):
        farm = case33.pv_farms[0]
        import dataclasses

        farm = dataclasses.replace(farm, irradiance_mean=np.full(24, 0.5), irradiance_std=np.full(24, 0.25))
        bins = sample_irradiance(farm, 12, 100_000, 10, np.random.default_rng(0))
        mean = sum(s * p for s, p in bins)
        assert mean == pytest.approx(0.5, abs=0.01)
        assert sum(p for _, p in bins) == pytest.approx(1.0)

    def test_night_is_a_single_dark_bin(self, case33):
        assert sample_irradiance(case33.pv_farms[0], 2, 1000, 10, np.random.default_rng(0)) == [(0.0, 1.0)]


class TestPVOutput:
    def test_hand_chain(self, case33):
        panel = case33.pv_farms[0].panel
        assert float(pv_output(panel, 1.0, 1)) == pytest.approx(ORACLE_PV_UNIT_KW, rel=1e-9)
        assert float(pv_output(panel, 1.0, 3)) == pytest.approx(3 * ORACLE_PV_UNIT_KW, rel=1e-9)

    def test_dark_and_failed(self, case33):
        panel = case33.pv_farms[0].panel
        assert float(pv_output(panel, 0.0, 5)) == 0.0
        assert float(pv_output(panel, 0.8, 0)) == 0.0

    @given(st.floats(0, 1))
    def test_non_negative_and_below_nameplate(self, s):
        panel = _panel()
        kw = float(pv_output(panel, s, 1))
        assert 0.0 <= kw <= panel.modules * panel.rated / 1000


_PANEL = {}


def _panel():
    if not _PANEL:
        from conftest import CASE_PATH, load_case

        _PANEL["p"] = load_case(CASE_PATH).pv_farms[0].panel
    return _PANEL["p"]


class TestScenarioTree:
    def test_farm_support_size(self, case33):
        farm = case33.pv_farms[2]
        tree = farm_scenarios(farm, 12, 2000, 10, np.random.default_rng(1))
        assert len(tree) <= (farm.unit_count + 1) * 10
        assert sum(p for _, _, p in tree) == pytest.approx(1.0, abs=1e-12)

    def test_joint_tree_normalised(self, case33):
        full = build_tree(case33.pv_farms, 13, rng=np.random.default_rng(2), elapsed=13)
        assert full.probability.sum() == pytest.approx(1.0, abs=1e-9)
        assert full.units_up.shape[1] == 5
        assert np.all(full.units_up <= 5)

    def test_joint_tree_exact_product_at_night(self, case33):
        full = build_tree(case33.pv_farms, 2, rng=np.random.default_rng(2), elapsed=2, max_joint=10**6)
        expected = 1.0
        for f in case33.pv_farms:
            expected *= np.count_nonzero(units_up_pmf(5, f.initially_failed, f.markov, 2))
        assert len(full) == expected

    def test_reproducible(self, case33):
        a = build_tree(case33.pv_farms, 12, rng=np.random.default_rng(4))
        b = build_tree(case33.pv_farms, 12, rng=np.random.default_rng(4))
        assert np.array_equal(a.units_up, b.units_up) and np.array_equal(a.probability, b.probability)

    def test_deterministic_set(self, case33):
        s = deterministic_set(case33.pv_farms, 12)
        assert len(s) == 1
        assert s.units_up[0].tolist() == [0, 5, 4, 3, 2]
        assert s.irradiance[0, 0] == case33.pv_farms[0].irradiance_mean[11]

    def test_set_validation(self):
        with pytest.raises(ValueError):
            ScenarioSet(1, [[1]], [[0.5]], [0.9])
        with pytest.raises(ValueError):
            ScenarioSet(1, [[1], [2]], [[0.5], [0.2]], [1.0, 0.0])


class TestKantorovich:
    @pytest.mark.parametrize("points,prob,keep", HAND_SETS)
    def test_hand_sets_match_exhaustive(self, points, prob, keep):
        sel, new_prob, dist = kantorovich_select(np.array(points, dtype=float), np.array(prob), keep)
        ref_sel, ref_prob, ref_dist = oracles.best_subset_by_enumeration(points, prob, keep)
        order = np.argsort(sel)
        assert sorted(sel) == ref_sel
        np.testing.assert_allclose(np.array(new_prob)[order], ref_prob, atol=1e-12)
        assert dist == pytest.approx(ref_dist, abs=1e-12)
        assert sum(new_prob) == pytest.approx(1.0, abs=1e-9)

    def test_keep_all_is_lossless(self):
        pts = np.array([[0.1], [0.5], [0.9]])
        sel, p, d = kantorovich_select(pts, np.array([0.2, 0.3, 0.5]), 3)
        assert d == 0.0
        assert sorted(sel) == [0, 1, 2]

    def test_duplicates_merge(self):
        pts = np.array([[0.0], [0.0], [1.0]])
        sel, p, _ = kantorovich_select(pts, np.array([0.3, 0.3, 0.4]), 2)
        merged = dict(zip(sel, p))
        assert merged[0] == pytest.approx(0.6)
        assert merged[2] == pytest.approx(0.4)

    def test_keep_out_of_range(self):
        with pytest.raises(ValueError):
            kantorovich_select(np.zeros((3, 1)), np.full(3, 1 / 3), 4)

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=2, max_size=7), st.data())
    def test_first_pick_is_optimal_and_greedy_never_beats_optimum(self, xs, data):
        n = len(xs)
        w = data.draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n))
        prob = np.array(w) / sum(w)
        keep = data.draw(st.integers(1, n))
        _, p, d = kantorovich_select(np.array(xs), prob, keep)
        _, _, d_opt = oracles.best_subset_by_enumeration(xs, prob, keep)
        assert d >= d_opt - 1e-12
        assert sum(p) == pytest.approx(1.0, abs=1e-9)
        if keep == 1:
            assert d == pytest.approx(d_opt, abs=1e-12)

    def test_reduce_scenario_set(self, case33):
        full = build_tree(case33.pv_farms, 12, rng=np.random.default_rng(0))
        red = kantorovich_reduce(full, 10, [5] * 5)
        assert len(red) == 10
        assert red.probability.sum() == pytest.approx(1.0, abs=1e-9)
        assert reduction_distance(full, 10, [5] * 5) > 0
        assert reduction_distance(full, len(full), [5] * 5) == pytest.approx(0.0)

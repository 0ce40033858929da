import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import ORACLE_LOSS_KW, ORACLE_VMIN, toy_case
from sdnr.netmodel import Topology, base_topology, nearest_radial
from sdnr.powerflow import (
    InjectionSet,
    NonRadialTopologyError,
    UnconvergedSolutionError,
    constraint_violations,
    max_voltage_deviation,
    solve,
    total_losses,
)


@pytest.fixture(scope="module")
def base_solution(case33):
    return solve(case33, base_topology(case33), InjectionSet(case33.peak_p, case33.peak_q))


def test_33_bus_matches_oracle(case33, base_solution):
    assert base_solution.converged
    assert base_solution.total_loss == pytest.approx(ORACLE_LOSS_KW, abs=1e-3)
    assert base_solution.voltage.min() == pytest.approx(ORACLE_VMIN, abs=1e-6)
    assert int(np.argmin(base_solution.voltage)) + 1 == 18


def test_total_losses_from_branch_currents(case33, base_solution):
    loss = total_losses(base_solution, case33, base_topology(case33))
    assert loss == pytest.approx(base_solution.total_loss, rel=1e-9)


def test_max_deviation_is_one_minus_vmin(base_solution):
    assert float(max_voltage_deviation(base_solution)) == pytest.approx(1 - ORACLE_VMIN, abs=1e-6)


def test_power_balance(case33, base_solution):
    # substation import = load + losses
    assert base_solution.grid_p == pytest.approx(case33.peak_p.sum() + base_solution.total_loss, rel=1e-6)


def test_zero_load_flat_profile(case33):
    sol = solve(case33, base_topology(case33), InjectionSet(np.zeros(33), np.zeros(33)))
    np.testing.assert_allclose(sol.voltage, 1.0)
    assert sol.total_loss == 0.0


def test_open_branches_carry_no_current(case33, base_solution):
    assert np.all(base_solution.branch_current[32:] == 0.0)


def test_non_radial_rejected(case33):
    with pytest.raises(NonRadialTopologyError):
        solve(case33, Topology(np.ones(37, bool)), InjectionSet(case33.peak_p, case33.peak_q))


def test_divergence_is_reported_not_raised(case33):
    sol = solve(case33, base_topology(case33), InjectionSet(case33.peak_p * 40, case33.peak_q * 40))
    assert not sol.converged
    with pytest.raises(UnconvergedSolutionError):
        total_losses(sol, case33, base_topology(case33))


def test_two_bus_by_hand():
    case = toy_case(n_bus=2, loads=[(0, 0), (300.0, 0.0)], branches=[(1, 1, 2, 2.0, 0.0, False)])
    sol = solve(case, Topology(np.ones(1, bool)), InjectionSet(case.peak_p, case.peak_q), tol=1e-12)
    # resistive line, unity pf: V2 solves V2 (1 - V2) = P R / V^2 in per unit
    r_pu = 2.0 / case.z_base
    p_pu = 0.3
    v2 = (1 + np.sqrt(1 - 4 * p_pu * r_pu)) / 2
    assert sol.voltage[1] == pytest.approx(v2, abs=1e-10)
    i_amp = p_pu / v2 * case.i_base
    assert sol.branch_current[0] == pytest.approx(i_amp, rel=1e-9)
    assert sol.total_loss == pytest.approx(3 * 2.0 * i_amp**2 / 1000, rel=1e-9)


def test_agrees_with_newton_on_a_small_feeder():
    branches = [(1, 1, 2, 0.4, 0.3, False), (2, 2, 3, 0.6, 0.4, False), (3, 2, 4, 0.8, 0.5, False), (4, 4, 5, 0.3, 0.2, False)]
    loads = [(0, 0), (300, 150), (200, 100), (250, 120), (150, 90)]
    case = toy_case(n_bus=5, loads=loads, branches=branches)
    sol = solve(case, Topology(np.ones(4, bool)), InjectionSet(case.peak_p, case.peak_q), tol=1e-12)
    ref = oracles.newton_voltages([p for p, _ in loads], [q for _, q in loads], [b[:5] for b in branches], set(), 12.66, 1000.0)
    np.testing.assert_allclose(sol.voltage, ref, atol=1e-8)


def test_batch_equals_columnwise(case33):
    topo = base_topology(case33)
    scale = np.array([0.5, 1.0, 1.3])
    batch = solve(case33, topo, InjectionSet(np.outer(case33.peak_p, scale), np.outer(case33.peak_q, scale)))
    for k, s in enumerate(scale):
        one = solve(case33, topo, InjectionSet(case33.peak_p * s, case33.peak_q * s))
        np.testing.assert_allclose(batch.voltage[:, k], one.voltage, atol=1e-6)
        assert batch.total_loss[k] == pytest.approx(one.total_loss, rel=1e-5)


def test_generation_raises_voltage(case33):
    p = case33.peak_p.copy()
    p[17] -= 500.0  # 500 kW injected at bus 18
    sol = solve(case33, base_topology(case33), InjectionSet(p, case33.peak_q))
    assert sol.voltage[17] > ORACLE_VMIN


def test_constraint_violations(case33, base_solution):
    kinds = {v.kind for v in constraint_violations(base_solution, case33)}
    assert kinds == {"voltage_low"}
    low = [v for v in constraint_violations(base_solution, case33) if v.element == 18]
    assert low[0].magnitude == pytest.approx(0.95 - ORACLE_VMIN, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.permutations(range(37)), st.floats(0.2, 1.2))
def test_conservation_on_random_trees(case33, perm, scale):
    topo = nearest_radial(case33, np.zeros(37, bool), priority=np.array(perm, dtype=float))
    sol = solve(case33, topo, InjectionSet(case33.peak_p * scale, case33.peak_q * scale))
    if not sol.converged:
        return
    assert sol.grid_p == pytest.approx(case33.peak_p.sum() * scale + sol.total_loss, rel=1e-5)
    assert np.all(sol.voltage <= 1.0 + 1e-9)
    assert np.all(sol.branch_current[~topo.closed] == 0)

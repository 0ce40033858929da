"""Objective evaluation for one hourly decision under a scenario set.

Four objectives are minimised together:

* OF1: expected interrupted load (kW), from the reliability tensor
* OF2: active losses (kW)
* OF3: worst bus-voltage deviation from 1 p.u.
* OF4: operating cost (grid energy, DG fuel and start/stop, DR, switching)

OF2, OF3 and the grid import are probability-weighted over scenarios. Constraint
violations are taken as the worst case over scenarios and folded into every
objective through quadratic penalties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from sdnr.devices import DGUnit, DRContract, ESSUnit  # noqa: F401  (re-exported)
from sdnr.netmodel import NetworkCase, Topology, hourly_loads, switching_count
from sdnr.powerflow import InjectionSet, Violation, solve
from sdnr.reliability import AvailabilityTensor, of1 as reliability_of1
from sdnr.scenarios import ScenarioSet

OBJECTIVE_NAMES = ("of1", "of2", "of3", "of4")
PENALTY_EQ = 1e6
PENALTY_INEQ = 1e6
DG_POWER_FACTOR = 0.9
DIVERGENCE_SENTINEL = 10.0
UNEVALUATED = 1e9


@dataclass(frozen=True)
class ObjectiveVector:
    of1: float
    of2: float
    of3: float
    of4: float

    def as_array(self) -> np.ndarray:
        return np.array([self.of1, self.of2, self.of3, self.of4])

    @classmethod
    def from_array(cls, values) -> "ObjectiveVector":
        return cls(*(float(v) for v in values))

    def as_dict(self) -> dict:
        return dict(zip(OBJECTIVE_NAMES, self.as_array().tolist()))


@dataclass(frozen=True)
class OperationalState:
    """What one hour hands to the next."""

    soc: np.ndarray  # kWh per ESS
    switch_ops_used: np.ndarray  # operations so far today, per branch
    previous_topology: Topology
    dg_on: np.ndarray  # bool per DG
    farm_failed: np.ndarray  # failed units per farm at t0

    @classmethod
    def initial(cls, case: NetworkCase, topology: Topology) -> "OperationalState":
        return cls(
            soc=np.array([e.soc_initial for e in case.ess_units], dtype=float),
            switch_ops_used=np.zeros(case.n_branch, dtype=np.int64),
            previous_topology=topology,
            dg_on=np.zeros(len(case.dg_units), dtype=bool),
            farm_failed=np.array([f.initially_failed for f in case.pv_farms], dtype=np.int64),
        )

    def exhausted(self, budget: int) -> np.ndarray:
        return self.switch_ops_used >= budget


@dataclass(frozen=True, eq=False)
class DecisionVector:
    """Hourly decision. ``ess_power`` is positive when discharging."""

    topology: Topology
    dg_commit: np.ndarray
    dg_power: np.ndarray
    dr_curtail: np.ndarray
    ess_power: np.ndarray
    dg_start: np.ndarray = field(default=None)
    dg_stop: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.dg_commit)
        if self.dg_start is None:
            object.__setattr__(self, "dg_start", np.zeros(n, dtype=bool))
        if self.dg_stop is None:
            object.__setattr__(self, "dg_stop", np.zeros(n, dtype=bool))

    def with_transitions(self, dg_on_before: np.ndarray) -> "DecisionVector":
        commit = np.asarray(self.dg_commit, dtype=bool)
        return replace(self, dg_start=commit & ~dg_on_before, dg_stop=~commit & dg_on_before)


def neutral_decision(case: NetworkCase, topology: Topology, state: OperationalState | None = None) -> DecisionVector:
    """Everything off: DG decommitted, no DR, ESS idle."""
    n_dg = len(case.dg_units)
    d = DecisionVector(
        topology=topology,
        dg_commit=np.zeros(n_dg, dtype=bool),
        dg_power=np.zeros(n_dg),
        dr_curtail=np.zeros(len(case.dr_contracts)),
        ess_power=np.zeros(len(case.ess_units)),
    )
    if state is not None:
        d = d.with_transitions(state.dg_on)
    return d


def dg_reactive(case: NetworkCase, dg_power: np.ndarray) -> np.ndarray:
    """Reactive output holding the DG power factor, clipped to its Q limits."""
    ratio = math.tan(math.acos(DG_POWER_FACTOR))
    q = np.asarray(dg_power) * ratio
    lo = np.array([g.q_min for g in case.dg_units])
    hi = np.array([g.q_max for g in case.dg_units])
    return np.clip(q, lo, hi) * (np.asarray(dg_power) > 0)


def net_injection(
    case: NetworkCase,
    decision: DecisionVector,
    load_p: np.ndarray,
    load_q: np.ndarray,
    pv_kw: np.ndarray | None = None,
) -> InjectionSet:
    """Net bus demand. ``pv_kw`` is ``(n_scenarios, n_farms)``; result is batched."""
    p = np.array(load_p, dtype=float)
    q = np.array(load_q, dtype=float)
    for k, dr in enumerate(case.dr_contracts):
        p[dr.node - 1] -= decision.dr_curtail[k]
    q_dg = dg_reactive(case, decision.dg_power) if case.dg_units else np.zeros(0)
    for k, g in enumerate(case.dg_units):
        p[g.node - 1] -= decision.dg_power[k]
        q[g.node - 1] -= q_dg[k]
    for k, e in enumerate(case.ess_units):
        p[e.node - 1] -= decision.ess_power[k]
    if pv_kw is None:
        pv_kw = np.zeros((1, len(case.pv_farms)))
    n_scen = pv_kw.shape[0]
    P = np.repeat(p[:, None], n_scen, axis=1)
    Q = np.repeat(q[:, None], n_scen, axis=1)
    for f, farm in enumerate(case.pv_farms):
        P[farm.node - 1] -= pv_kw[:, f]
    return InjectionSet(P, Q)


def of4_cost(
    decision: DecisionVector,
    grid_import: float,
    price_t: float,
    case: NetworkCase,
    previous_topology: Topology | None,
) -> float:
    """Grid energy + DG cost with start/stop + DR payments + switching."""
    cost = price_t * grid_import
    for k, g in enumerate(case.dg_units):
        on = float(bool(decision.dg_commit[k]))
        p = float(decision.dg_power[k])
        cost += g.a * on + g.b * p + g.c * p * p
        cost += g.su * float(decision.dg_start[k]) + g.sd * float(decision.dg_stop[k])
    for k, dr in enumerate(case.dr_contracts):
        cost += dr.price * float(decision.dr_curtail[k])
    if previous_topology is not None:
        cost += case.switch_price * switching_count(decision.topology, previous_topology)
    return float(cost)


def penalize(f: float, eq_violations=(), ineq_violations=(), p1: float = PENALTY_EQ, p2: float = PENALTY_INEQ) -> float:
    """Quadratic-penalty augmentation of one objective value."""
    if p1 <= 0 or p2 <= 0:
        raise ValueError("penalty weights must be positive")
    extra = p1 * sum(h * h for h in eq_violations) + p2 * sum(max(0.0, g) ** 2 for g in ineq_violations)
    return f + extra if extra else f


@dataclass(frozen=True, eq=False)
class Evaluation:
    objectives: ObjectiveVector  # raw
    penalized: ObjectiveVector
    violations: list
    grid_import: float  # expected kW
    v_min: float  # worst over scenarios
    v_max: float
    scenario_loss: np.ndarray
    scenario_deviation: np.ndarray
    scenario_import: np.ndarray

    @property
    def feasible(self) -> bool:
        return not self.violations


def _device_violations(case: NetworkCase, d: DecisionVector, state: OperationalState | None, load_p) -> list[Violation]:
    out = []
    tol = 1e-9
    for k, g in enumerate(case.dg_units):
        p = d.dg_power[k]
        if d.dg_commit[k]:
            if p < g.p_min - tol:
                out.append(Violation("dg_power", (g.p_min - p) / g.p_max, k + 1))
            elif p > g.p_max + tol:
                out.append(Violation("dg_power", (p - g.p_max) / g.p_max, k + 1))
        elif abs(p) > tol:
            out.append(Violation("dg_power", abs(p) / g.p_max, k + 1))
    for k, dr in enumerate(case.dr_contracts):
        cap = dr.max_fraction * load_p[dr.node - 1]
        c = d.dr_curtail[k]
        if c < -tol or c > cap + tol:
            out.append(Violation("dr", max(-c, c - cap) / max(load_p[dr.node - 1], 1.0), k + 1))
    for k, e in enumerate(case.ess_units):
        p = d.ess_power[k]
        limit = e.p_discharge_max if p > 0 else e.p_charge_max
        if abs(p) > limit + tol:
            out.append(Violation("ess_power", (abs(p) - limit) / limit, k + 1))
        if state is not None:
            soc = state.soc[k] - e.efficiency * p
            if soc < e.soc_min - tol or soc > e.soc_max + tol:
                out.append(Violation("ess_soc", max(e.soc_min - soc, soc - e.soc_max) / e.soc_max, k + 1))
    return out


def evaluate(
    decision: DecisionVector,
    case: NetworkCase,
    scenario_set: ScenarioSet,
    tensor: AvailabilityTensor | None,
    t: int,
    state: OperationalState | None = None,
    p1: float = PENALTY_EQ,
    p2: float = PENALTY_INEQ,
    pv_kw: np.ndarray | None = None,
) -> Evaluation:
    """Scenario-weighted objectives, worst-case violations and penalised image.

    ``pv_kw`` may carry a precomputed ``scenario_set.pv_power(case.pv_farms)``.
    """
    load_p, load_q = hourly_loads(case, t)
    if pv_kw is None:
        pv_kw = scenario_set.pv_power(case.pv_farms) if case.pv_farms else np.zeros((len(scenario_set), 0))
    inj = net_injection(case, decision, load_p, load_q, pv_kw)
    sol = solve(case, decision.topology, inj)
    prob = scenario_set.probability

    served = load_p.copy()
    for k, dr in enumerate(case.dr_contracts):
        served[dr.node - 1] -= decision.dr_curtail[k]
    f1 = reliability_of1(tensor, decision.topology, served, t, case) if tensor is not None else 0.0

    violations = _device_violations(case, decision, state, load_p)
    eq = []
    if sol.converged:
        loss = np.atleast_1d(sol.total_loss)
        v = sol.voltage
        dev = np.maximum(np.abs(1.0 - v.min(axis=0)), np.abs(1.0 - v.max(axis=0)))
        grid = np.atleast_1d(sol.grid_p)
        f2, f3, imp = float(prob @ loss), float(prob @ dev), float(prob @ grid)
        vmin, vmax = float(v.min()), float(v.max())
        low = (case.v_min - v).max(axis=1)
        high = (v - case.v_max).max(axis=1)
        for i in np.flatnonzero(low > 0):
            violations.append(Violation("voltage_low", float(low[i]), int(i) + 1))
        for i in np.flatnonzero(high > 0):
            violations.append(Violation("voltage_high", float(high[i]), int(i) + 1))
        over = (sol.branch_current.max(axis=1) - case.ampacity) / case.ampacity
        for k in np.flatnonzero(over > 0):
            violations.append(Violation("current", float(over[k]), int(k) + 1))
    else:
        n = len(prob)
        loss = dev = np.full(n, UNEVALUATED)
        grid = np.full(n, float(np.sum(load_p)))
        f2 = f3 = UNEVALUATED
        imp = float(np.sum(load_p))
        vmin, vmax = 0.0, 0.0
        violations.append(Violation("divergence", DIVERGENCE_SENTINEL, 0))
        eq.append(DIVERGENCE_SENTINEL)

    price = case.price_profile[t - 1]
    f4 = of4_cost(decision, imp, price, case, state.previous_topology if state is not None else None)
    raw = ObjectiveVector(f1, f2, f3, f4)
    ineq = [v.magnitude for v in violations if v.kind != "divergence"]
    pen = ObjectiveVector.from_array([penalize(x, eq, ineq, p1, p2) for x in raw.as_array()])
    return Evaluation(raw, pen, violations, imp, vmin, vmax, loss, dev, grid)


@dataclass(frozen=True)
class FuzzyBounds:
    f_min: np.ndarray
    f_max: np.ndarray

    @classmethod
    def from_values(cls, values: np.ndarray) -> "FuzzyBounds":
        values = np.atleast_2d(values)
        return cls(values.min(axis=0), values.max(axis=0))


def fuzzy_membership(f, bounds) -> np.ndarray | float:
    """Linear satisfaction: 1 at or below f_min, 0 at or above f_max.

    ``bounds`` is a (f_min, f_max) pair or :class:`FuzzyBounds`. A degenerate
    range (f_min == f_max) maps to 1.
    """
    if isinstance(bounds, FuzzyBounds):
        lo, hi = bounds.f_min, bounds.f_max
    else:
        lo, hi = bounds
    f = np.asarray(f, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    span = hi - lo
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        mu = np.where(span > 0, (hi - f) / np.where(span > 0, span, 1.0), 1.0)
    mu = np.clip(mu, 0.0, 1.0)
    return float(mu) if mu.ndim == 0 else mu


def dominates(a, b) -> bool:
    """Pareto dominance for minimisation."""
    a = a.as_array() if isinstance(a, ObjectiveVector) else np.asarray(a)
    b = b.as_array() if isinstance(b, ObjectiveVector) else np.asarray(b)
    return bool(np.all(a <= b) and np.any(a < b))

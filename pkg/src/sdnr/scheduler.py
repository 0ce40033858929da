"""Day-ahead rolling schedule: one optimisation per hour with carried state.

Each hour builds (or freezes) the PV scenario set, runs the crow search,
commits the best compromise and hands the storage levels, switch counters,
topology and DG commitment on to the next hour.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from sdnr._random import substream
from sdnr.netmodel import HOURS, NetworkCase, Topology, base_topology, is_radial
from sdnr.objectives import (
    OBJECTIVE_NAMES,
    DecisionVector,
    Evaluation,
    ObjectiveVector,
    OperationalState,
    evaluate,
    neutral_decision,
)
from sdnr.optimizer import ICSAConfig, ProblemContext, enforce_topology, fundamental_loops, run
from sdnr.reliability import DEFAULT_HORIZON, AvailabilityTensor, load_or_build
from sdnr.scenarios import ScenarioSet, build_tree, deterministic_set, kantorovich_reduce

__all__ = [
    "DayConfig",
    "DaySchedule",
    "HourResult",
    "OperationalState",
    "enforce_switch_budget",
    "run_day",
    "soc_update",
]

log = logging.getLogger(__name__)


class InvariantError(RuntimeError):
    """Carried state left its bounds; points at a repair bug."""


@dataclass(frozen=True)
class DayConfig:
    seed: int = 0
    mode: str = "icsa"
    failure_modeling: bool = True
    n_mc_samples: int = 1000
    horizon: int = DEFAULT_HORIZON
    scenario_keep: int = 10
    scenario_samples: int = 2000
    optimizer: ICSAConfig = field(default_factory=ICSAConfig)
    reliability_cache: str | None = None

    def __post_init__(self):
        if self.mode not in ("csa", "icsa"):
            raise ValueError(f"mode must be csa or icsa, got {self.mode!r}")
        for name in ("n_mc_samples", "horizon", "scenario_keep", "scenario_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class HourResult:
    hour: int
    decision: DecisionVector
    evaluation: Evaluation
    scenario_set: ScenarioSet
    fallback: bool
    repository_size: int
    evaluations: int
    soc_after: np.ndarray
    trace: list = field(default_factory=list)

    @property
    def objectives(self) -> ObjectiveVector:
        return self.evaluation.objectives


@dataclass(frozen=True, eq=False)
class DaySchedule:
    hours: list
    config: DayConfig

    def __len__(self):
        return len(self.hours)

    def objective_matrix(self) -> np.ndarray:
        """Raw objectives, (24, 4)."""
        return np.array([h.objectives.as_array() for h in self.hours])

    @property
    def totals(self) -> dict:
        return dict(zip(OBJECTIVE_NAMES, self.objective_matrix().sum(axis=0).tolist()))

    @property
    def means(self) -> dict:
        return dict(zip(OBJECTIVE_NAMES, self.objective_matrix().mean(axis=0).tolist()))

    @property
    def fallback_hours(self) -> list[int]:
        return [h.hour for h in self.hours if h.fallback]


def soc_update(state: OperationalState, decision: DecisionVector, case: NetworkCase, dt: float = 1.0) -> np.ndarray:
    """Next-hour SOC: ``soc + eta * (P_charge - P_discharge) * dt``.

    ``ess_power`` is positive when discharging. Raises :class:`InvariantError`
    if the result leaves the storage band.
    """
    soc = np.array(state.soc, dtype=float)
    for k, e in enumerate(case.ess_units):
        soc[k] -= e.efficiency * decision.ess_power[k] * dt
        if not e.soc_min - 1e-9 <= soc[k] <= e.soc_max + 1e-9:
            raise InvariantError(f"{e.name}: SOC {soc[k]:.6g} outside [{e.soc_min}, {e.soc_max}]")
    return soc


def enforce_switch_budget(state: OperationalState, candidate: Topology, case: NetworkCase) -> Topology:
    """Revert flips on exhausted switches, then restore radiality if needed."""
    return enforce_topology(case, candidate, state)


def _advance(state: OperationalState, decision: DecisionVector, case: NetworkCase) -> OperationalState:
    flipped = decision.topology.closed != state.previous_topology.closed
    used = state.switch_ops_used + flipped
    if np.any(used > case.switch_budget_per_day):
        raise InvariantError("switch budget exceeded")
    return replace(
        state,
        soc=soc_update(state, decision, case),
        switch_ops_used=used,
        previous_topology=decision.topology,
        dg_on=np.asarray(decision.dg_commit, dtype=bool).copy(),
    )


def hour_scenarios(case: NetworkCase, t: int, config: DayConfig, rng: np.random.Generator) -> ScenarioSet:
    """Reduced stochastic set, or the single frozen scenario without failure modelling."""
    if not config.failure_modeling:
        return deterministic_set(case.pv_farms, t)
    full = build_tree(case.pv_farms, t, n_samples=config.scenario_samples, rng=rng, elapsed=t)
    if len(full) <= config.scenario_keep:
        return full
    unit_counts = [f.unit_count for f in case.pv_farms]
    return kantorovich_reduce(full, config.scenario_keep, unit_counts)


def run_day(
    case: NetworkCase,
    config: DayConfig,
    tensor: AvailabilityTensor | None = None,
    initial_topology: Topology | None = None,
) -> DaySchedule:
    """Optimise hours 1..24 in sequence and return the committed schedule."""
    if tensor is None:
        tensor = load_or_build(
            case,
            config.seed,
            config.n_mc_samples,
            config.horizon,
            substream(config.seed, "reliability"),
            config.reliability_cache,
        )
    topology = base_topology(case) if initial_topology is None else initial_topology
    if not is_radial(topology, case):
        raise ValueError("initial topology must be radial")
    loops = fundamental_loops(case, base_topology(case))
    state = OperationalState.initial(case, topology)
    hours = []
    for t in range(1, HOURS + 1):
        scen = hour_scenarios(case, t, config, substream(config.seed, "scenarios", t))
        ctx = ProblemContext(case, scen, tensor, t, state, loops)
        result = run(ctx, config.optimizer, config.mode, rng=substream(config.seed, "optimizer", t))
        if result.feasible:
            decision = result.best.decision
            topo = enforce_switch_budget(state, decision.topology, case)
            if topo != decision.topology:
                decision = replace(decision, topology=topo)
                evaluation = evaluate(decision, case, scen, tensor, t, state)
            else:
                evaluation = result.best.evaluation
        else:
            log.warning("hour %d: no feasible solution, keeping previous topology", t)
            decision = neutral_decision(case, state.previous_topology, state)
            evaluation = evaluate(decision, case, scen, tensor, t, state)
        state = _advance(state, decision, case)
        hours.append(
            HourResult(
                hour=t,
                decision=decision,
                evaluation=evaluation,
                scenario_set=scen,
                fallback=not result.feasible,
                repository_size=len(result.repository),
                evaluations=result.evaluations,
                soc_after=state.soc.copy(),
                trace=result.trace,
            )
        )
    return DaySchedule(hours, config)

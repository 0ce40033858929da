"""Crow search (CSA) and its improved variant (ICSA) for hourly reconfiguration.

A crow position is a flat float vector laid out as

    [loop genes | DG commit genes | DG power genes | DR fraction genes | ESS genes]

Each loop gene picks the branch to open inside one fundamental loop of the base
configuration (one loop per tie line). Commit genes are thresholded at 0.5; DR
genes are the curtailed fraction of the node's load; ESS genes are signed
power, positive when discharging.

ICSA differs from CSA in two places: the awareness probability of the followed
crow is computed from the fuzzy quality of the memories involved, and the
escape move is a Levy flight (Mantegna steps) towards a repository leader
instead of a uniform jump.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from sdnr.netmodel import NetworkCase, Topology, base_topology, hourly_loads, is_radial, nearest_radial
from sdnr.objectives import (
    DecisionVector,
    Evaluation,
    FuzzyBounds,
    OperationalState,
    dominates,
    evaluate,
    fuzzy_membership,
)
from sdnr.reliability import AvailabilityTensor
from sdnr.scenarios import ScenarioSet

log = logging.getLogger(__name__)

IAP_FLOOR = 1e-6
GRID_DIVISIONS = 10


class EmptyRepositoryError(ValueError):
    pass


@dataclass(frozen=True)
class ICSAConfig:
    population: int = 30
    iterations: int = 100
    fl: float = 2.0
    ap: float = 0.1
    alpha_ap: float = 0.1
    tau: float = 1.5
    repository_capacity: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be at least 2")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.fl <= 0:
            raise ValueError("fl must be positive")
        if not 0 <= self.ap <= 1:
            raise ValueError("ap must lie in [0, 1]")
        if not 0 < self.alpha_ap <= 1:
            raise ValueError("alpha_ap must lie in (0, 1]")
        if not 1 < self.tau <= 2:
            raise ValueError("tau must lie in (1, 2]")
        if self.repository_capacity < 1:
            raise ValueError("repository_capacity must be at least 1")


# ---------------------------------------------------------------------------
# Encoding


def fundamental_loops(case: NetworkCase, topology: Topology | None = None) -> list[list[int]]:
    """Branch indices of the loop closed by each open branch, in cycle order.

    Each loop starts with the open branch and walks the tree path between its
    ends, so neighbouring genes map to neighbouring branches.
    """
    topology = base_topology(case) if topology is None else topology
    if not is_radial(topology, case):
        raise ValueError("loops are defined from a radial topology")
    adj = [[] for _ in range(case.n_bus)]
    for k in np.flatnonzero(topology.closed):
        adj[case.from_idx[k]].append((case.to_idx[k], k))
        adj[case.to_idx[k]].append((case.from_idx[k], k))
    parent = {0: (None, None)}
    order = [0]
    for node in order:
        for nxt, k in adj[node]:
            if nxt not in parent:
                parent[nxt] = (node, k)
                order.append(nxt)

    def path_to_root(node):
        nodes, branches = [node], []
        while parent[node][0] is not None:
            node, k = parent[node][0], parent[node][1]
            nodes.append(node)
            branches.append(int(k))
        return nodes, branches

    loops = []
    for tie in np.flatnonzero(~topology.closed):
        a_nodes, a_br = path_to_root(case.from_idx[tie])
        b_nodes, b_br = path_to_root(case.to_idx[tie])
        common = next(n for n in a_nodes if n in set(b_nodes))
        up_a = a_br[: a_nodes.index(common)]
        up_b = b_br[: b_nodes.index(common)]
        loops.append([int(tie)] + up_a + up_b[::-1])
    return loops


@dataclass(frozen=True, eq=False)
class SearchSpace:
    """Box bounds and gene layout for one case and hour."""

    case: NetworkCase
    loops: list
    lower: np.ndarray
    upper: np.ndarray
    load_p: np.ndarray

    @classmethod
    def build(cls, case: NetworkCase, t: int, loops=None) -> "SearchSpace":
        loops = fundamental_loops(case) if loops is None else loops
        load_p, _ = hourly_loads(case, t)
        lo, hi = [], []
        for loop in loops:
            lo.append(0.0)
            hi.append(float(len(loop)))
        for _ in case.dg_units:
            lo.append(0.0)
            hi.append(1.0)
        for g in case.dg_units:
            lo.append(g.p_min)
            hi.append(g.p_max)
        for dr in case.dr_contracts:
            lo.append(0.0)
            hi.append(dr.max_fraction)
        for e in case.ess_units:
            lo.append(-e.p_charge_max)
            hi.append(e.p_discharge_max)
        return cls(case, loops, np.array(lo), np.array(hi), load_p)

    @property
    def dim(self) -> int:
        return self.lower.size

    def slices(self):
        n_loop = len(self.loops)
        n_dg = len(self.case.dg_units)
        n_dr = len(self.case.dr_contracts)
        s_loop = slice(0, n_loop)
        s_commit = slice(n_loop, n_loop + n_dg)
        s_power = slice(s_commit.stop, s_commit.stop + n_dg)
        s_dr = slice(s_power.stop, s_power.stop + n_dr)
        s_ess = slice(s_dr.stop, self.dim)
        return s_loop, s_commit, s_power, s_dr, s_ess

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def random(self, rng: np.random.Generator) -> np.ndarray:
        return self.lower + rng.random(self.dim) * (self.upper - self.lower)


def _loop_choices(genes: np.ndarray, loops) -> list[int]:
    """Position inside each loop chosen by its gene, collisions resolved in
    loop order by moving to the nearest free position."""
    taken = set()
    choices = []
    for g, loop in zip(genes, loops):
        n = len(loop)
        pos = min(int(math.floor(g)), n - 1)
        if loop[pos] in taken:
            for step in range(1, n):
                cand = [pos - step, pos + step]
                free = [c for c in cand if 0 <= c < n and loop[c] not in taken]
                if free:
                    pos = free[0]
                    break
        taken.add(loop[pos])
        choices.append(pos)
    return choices


def decode(position: np.ndarray, space: SearchSpace) -> DecisionVector:
    """Map a crow position to a decision (topology not yet guaranteed radial)."""
    case = space.case
    s_loop, s_commit, s_power, s_dr, s_ess = space.slices()
    closed = np.ones(case.n_branch, dtype=bool)
    for loop, pos in zip(space.loops, _loop_choices(position[s_loop], space.loops)):
        closed[loop[pos]] = False
    commit = position[s_commit] > 0.5
    dr_load = np.array([space.load_p[dr.node - 1] for dr in case.dr_contracts])
    return DecisionVector(
        topology=Topology(closed),
        dg_commit=commit,
        dg_power=np.where(commit, position[s_power], 0.0),
        dr_curtail=position[s_dr] * dr_load if dr_load.size else np.zeros(0),
        ess_power=position[s_ess].copy(),
    )


def enforce_topology(case: NetworkCase, topology: Topology, state: OperationalState | None) -> Topology:
    """Radial topology closest to ``topology`` that respects locked switches.

    Switches that used up their daily budget, and non-switchable branches, are
    held at their previous state.
    """
    if state is None:
        if is_radial(topology, case):
            return topology
        return nearest_radial(case, topology.closed)
    prev = state.previous_topology.closed
    locked = state.exhausted(case.switch_budget_per_day) | ~case.switchable
    cand = topology.closed
    if is_radial(topology, case) and not np.any(locked & (cand != prev)):
        return topology
    preferred = np.where(locked, prev, cand)
    return nearest_radial(case, preferred, locked_closed=locked & prev, locked_open=locked & ~prev)


def repair(decision: DecisionVector, case: NetworkCase, state: OperationalState | None, load_p: np.ndarray) -> DecisionVector:
    """Bring a decoded decision inside every bound; total by construction."""
    topology = enforce_topology(case, decision.topology, state)

    commit = np.asarray(decision.dg_commit, dtype=bool)
    p_min = np.array([g.p_min for g in case.dg_units])
    p_max = np.array([g.p_max for g in case.dg_units])
    dg_power = np.where(commit, np.clip(decision.dg_power, p_min, p_max), 0.0)

    cap = np.array([dr.max_fraction * load_p[dr.node - 1] for dr in case.dr_contracts])
    dr = np.clip(decision.dr_curtail, 0.0, cap) if cap.size else np.zeros(0)

    ess = np.array(decision.ess_power, dtype=float)
    for k, e in enumerate(case.ess_units):
        soc = state.soc[k] if state is not None else e.soc_initial
        max_dis = min(e.p_discharge_max, max(0.0, (soc - e.soc_min) / e.efficiency))
        max_chg = min(e.p_charge_max, max(0.0, (e.soc_max - soc) / e.efficiency))
        ess[k] = min(max(ess[k], -max_chg), max_dis)

    out = DecisionVector(topology, commit, dg_power, dr, ess)
    dg_on = state.dg_on if state is not None else np.zeros(len(commit), dtype=bool)
    return out.with_transitions(dg_on)


# ---------------------------------------------------------------------------
# Moves


def mantegna_sigma(tau: float) -> float:
    """Scale of the numerator normal in Mantegna's algorithm."""
    num = math.gamma(1 + tau) * math.sin(math.pi * tau / 2)
    den = math.gamma((1 + tau) / 2) * tau * 2 ** ((tau - 1) / 2)
    return (num / den) ** (1 / tau)


def mantegna_step(tau: float, rng: np.random.Generator, size=None):
    """Levy-stable step ``r_a / |r_b|^(1/tau)`` with ``r_a ~ N(0, sigma^2)``, ``r_b ~ N(0, 1)``."""
    if not 1 < tau <= 2:
        raise ValueError("tau must lie in (1, 2]")
    r_a = rng.normal(0.0, mantegna_sigma(tau), size)
    r_b = rng.normal(0.0, 1.0, size)
    return r_a / np.abs(r_b) ** (1 / tau)


def levy_move(position, best_i, leader, fl, tau, rng, space: SearchSpace | None = None):
    z = mantegna_step(tau, rng, np.shape(position))
    new = position + fl * (best_i - position) + z * (leader - position)
    return space.clamp(new) if space is not None else new


def pursuit(position, target, fl, r):
    return position + r * fl * (target - position)


def csa_step(position_i, memory_i, memory_j, ap_j, config: ICSAConfig, space: SearchSpace, rng, leader=None, mode="icsa"):
    """One crow move: follow crow j's memory, or escape when j is aware.

    CSA escapes to a uniform random position; ICSA escapes with a Levy move
    towards ``leader`` (falls back to the crow's own memory).
    """
    if rng.random() >= ap_j:
        return space.clamp(pursuit(position_i, memory_j, config.fl, rng.random()))
    if mode == "csa":
        return space.random(rng)
    lead = memory_i if leader is None else leader
    return levy_move(position_i, memory_i, lead, config.fl, config.tau, rng, space)


def iap(mu_j: np.ndarray, mu_i: np.ndarray, alpha_ap: float, rng: np.random.Generator) -> float:
    """Awareness probability of crow j as seen by crow i, in [0, 1]."""
    u = rng.random()
    ratio = float(np.max(mu_j)) / max(float(np.min(mu_i)), IAP_FLOOR)
    return float(min(1.0, max(0.0, u * ratio * alpha_ap)))


def roulette_wheel(weights, rng: np.random.Generator) -> int:
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise EmptyRepositoryError("nothing to select from")
    c = np.cumsum(w)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), w.size - 1))


# ---------------------------------------------------------------------------
# Repository


@dataclass(eq=False)
class Entry:
    position: np.ndarray
    decision: DecisionVector
    evaluation: Evaluation

    @property
    def objectives(self) -> np.ndarray:
        return self.evaluation.penalized.as_array()


def _grid_cells(values: np.ndarray, divisions: int = GRID_DIVISIONS) -> np.ndarray:
    lo = values.min(axis=0)
    span = values.max(axis=0) - lo
    norm = np.divide(values - lo, span, out=np.zeros_like(values), where=span > 0)
    return np.minimum((norm * divisions).astype(np.int64), divisions - 1)


@dataclass(eq=False)
class Repository:
    """Bounded archive of mutually non-dominated entries (penalised objectives)."""

    capacity: int
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def values(self) -> np.ndarray:
        return np.array([e.objectives for e in self.entries], dtype=float).reshape(len(self.entries), -1)

    def crowding_weights(self) -> np.ndarray:
        """1 / occupancy of each entry's hypercube in a 10-per-axis grid."""
        if not self.entries:
            return np.zeros(0)
        cells = _grid_cells(self.values())
        _, inverse, counts = np.unique(cells, axis=0, return_inverse=True, return_counts=True)
        return 1.0 / counts[inverse.ravel()]

    def bounds(self, feasible_only: bool = False) -> FuzzyBounds:
        entries = self.feasible() if feasible_only else self.entries
        if not entries:
            entries = self.entries
        if not entries:
            raise EmptyRepositoryError("repository is empty")
        return FuzzyBounds.from_values(np.array([e.objectives for e in entries]))

    def feasible(self) -> list:
        return [e for e in self.entries if e.evaluation.feasible]


def update_repository(repo: Repository, candidate: Entry, rng: np.random.Generator | None = None) -> bool:
    """Insert ``candidate`` if nothing dominates or duplicates it; returns whether it was added."""
    f = candidate.objectives
    if repo.entries:
        vals = repo.values()
        le = np.all(vals <= f, axis=1)
        if np.any(le & np.any(vals < f, axis=1)) or np.any(np.all(vals == f, axis=1)):
            return False
        dominated = np.all(f <= vals, axis=1) & np.any(f < vals, axis=1)
        repo.entries = [e for e, d in zip(repo.entries, dominated) if not d]
    repo.entries.append(candidate)
    if len(repo.entries) > repo.capacity:
        cells = _grid_cells(repo.values())
        _, inverse, counts = np.unique(cells, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        crowded = np.flatnonzero(inverse == np.argmax(counts))
        victim = int(crowded[rng.integers(crowded.size)]) if rng is not None else int(crowded[0])
        del repo.entries[victim]
    return candidate in repo.entries


def roulette_select(repo: Repository, rng: np.random.Generator) -> Entry:
    if not repo.entries:
        raise EmptyRepositoryError("repository is empty")
    return repo.entries[roulette_wheel(repo.crowding_weights(), rng)]


def best_compromise(entries, bounds: FuzzyBounds | None = None) -> Entry:
    """Entry with the largest normalised membership sum; ties go to lower OF4."""
    entries = list(entries.entries if isinstance(entries, Repository) else entries)
    if not entries:
        raise EmptyRepositoryError("no entries to choose from")
    vals = np.array([e.objectives for e in entries])
    bounds = FuzzyBounds.from_values(vals) if bounds is None else bounds
    score = fuzzy_membership(vals, bounds).sum(axis=1) / vals.shape[1]
    order = np.lexsort((vals[:, 3], -np.round(score, 12)))
    return entries[int(order[0])]


# ---------------------------------------------------------------------------
# Driver


@dataclass(frozen=True, eq=False)
class ProblemContext:
    case: NetworkCase
    scenario_set: ScenarioSet
    tensor: AvailabilityTensor | None
    t: int
    state: OperationalState | None = None
    loops: list | None = None


@dataclass(eq=False)
class RunResult:
    repository: Repository
    best: Entry
    feasible: bool
    evaluations: int
    trace: list


def _membership_sum(values: np.ndarray, bounds: FuzzyBounds) -> float:
    return float(np.sum(fuzzy_membership(values, bounds)))


def run(
    context: ProblemContext,
    config: ICSAConfig,
    mode: str = "icsa",
    rng: np.random.Generator | None = None,
    callback=None,
) -> RunResult:
    """Optimise one hour and return the Pareto repository and its best compromise.

    ``mode`` is ``"csa"`` (fixed awareness probability, uniform escape) or
    ``"icsa"`` (memory-based awareness, Levy escape towards a repository leader).
    ``callback(iteration, repository)`` is called after every iteration.
    """
    if mode not in ("csa", "icsa"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    case = context.case
    space = SearchSpace.build(case, context.t, context.loops)
    pv_kw = (
        context.scenario_set.pv_power(case.pv_farms)
        if case.pv_farms
        else np.zeros((len(context.scenario_set), 0))
    )
    n_eval = 0

    def assess(x):
        nonlocal n_eval
        n_eval += 1
        d = repair(decode(x, space), case, context.state, space.load_p)
        ev = evaluate(d, case, context.scenario_set, context.tensor, context.t, context.state, pv_kw=pv_kw)
        return Entry(x, d, ev)

    repo = Repository(config.repository_capacity)
    positions = [space.random(rng) for _ in range(config.population)]
    memory = [assess(x) for x in positions]
    for m in memory:
        update_repository(repo, m, rng)
    trace = []

    for it in range(config.iterations):
        bounds = repo.bounds()
        mu = [fuzzy_membership(m.objectives, bounds) for m in memory]
        new_positions = []
        for i in range(config.population):
            j = int(rng.integers(config.population - 1))
            j += j >= i
            if mode == "csa":
                ap_j = config.ap
                leader = None
            else:
                ap_j = iap(mu[j], mu[i], config.alpha_ap, rng)
                leader = roulette_select(repo, rng).position
            new_positions.append(
                csa_step(positions[i], memory[i].position, memory[j].position, ap_j, config, space, rng, leader, mode)
            )
        positions = new_positions
        candidates = [assess(x) for x in positions]
        for c in candidates:
            update_repository(repo, c, rng)
        bounds = repo.bounds()
        for i, c in enumerate(candidates):
            old = memory[i].objectives
            new = c.objectives
            if dominates(new, old) or (
                not dominates(old, new) and _membership_sum(new, bounds) > _membership_sum(old, bounds)
            ):
                memory[i] = c
        trace.append({"iteration": it + 1, "repository": len(repo), "feasible": len(repo.feasible())})
        if callback is not None:
            callback(it + 1, repo)

    feasible = repo.feasible()
    if feasible:
        best = best_compromise(feasible)
    else:
        best = best_compromise(repo)
    return RunResult(repo, best, bool(feasible), n_eval, trace)

"""Backward/forward sweep power flow for radial feeders.

Works in per unit on the case bases (``base_kva``, ``base_kv``) with a
constant-power load model. For a tree rooted at the slack bus let ``D[j, k]``
be 1 when bus ``k`` lies in the subtree hanging below bus ``j``. The backward
sweep is then ``I_branch = D @ I_load`` and the forward sweep
``V = 1 - D.T @ (z * I_branch)``. ``D`` depends only on the topology and is
cached, which makes one sweep two small matrix products that also vectorise
over a batch of injection patterns (scenarios).
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from sdnr.netmodel import NetworkCase, Topology, is_radial

TOLERANCE = 1e-6
MAX_ITER = 100
_CACHE_SIZE = 4096


class NonRadialTopologyError(ValueError):
    pass


class UnconvergedSolutionError(ValueError):
    pass


@dataclass(frozen=True)
class InjectionSet:
    """Net per-bus demand: positive P/Q is consumption (kW, kVAr).

    Arrays are ``(n_bus,)`` or ``(n_bus, n_batch)``.
    """

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape:
            raise ValueError("p and q must have the same shape")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("injections must be finite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)


@dataclass(frozen=True)
class PowerFlowSolution:
    """Sweep result. Batched solves carry a trailing batch axis on each array."""

    voltage: np.ndarray  # |V| p.u. per bus
    voltage_complex: np.ndarray
    branch_current: np.ndarray  # A per branch, 0 on open branches
    total_loss: np.ndarray | float  # kW
    grid_p: np.ndarray | float  # kW drawn at the substation
    grid_q: np.ndarray | float  # kVAr drawn at the substation
    converged: bool
    iterations: int


@dataclass(frozen=True)
class _Tree:
    parent_branch: np.ndarray  # branch index feeding each bus, -1 at the slack
    subtree: np.ndarray  # D, (n_bus, n_bus)
    z: np.ndarray  # per-unit impedance of the feeding branch, 0 at the slack
    dlf: np.ndarray  # D.T @ diag(z) @ D


_tree_cache: OrderedDict = OrderedDict()


def _tree(case: NetworkCase, topology: Topology) -> _Tree:
    key = (id(case), topology.closed.tobytes())
    hit = _tree_cache.get(key)
    if hit is not None and hit[0] is case:
        _tree_cache.move_to_end(key)
        return hit[1]

    n = case.n_bus
    adj = [[] for _ in range(n)]
    for k in np.flatnonzero(topology.closed):
        f, t = case.from_idx[k], case.to_idx[k]
        adj[f].append((t, k))
        adj[t].append((f, k))
    parent = np.full(n, -1, dtype=np.intp)
    parent_branch = np.full(n, -1, dtype=np.intp)
    order = [0]
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    for node in order:
        for nxt, k in adj[node]:
            if not seen[nxt]:
                seen[nxt] = True
                parent[nxt] = node
                parent_branch[nxt] = k
                order.append(nxt)

    subtree = np.eye(n)
    for node in reversed(order[1:]):
        subtree[parent[node]] += subtree[node]
    z = np.zeros(n, dtype=complex)
    fed = parent_branch >= 0
    pb = parent_branch[fed]
    z[fed] = (case.resistance[pb] + 1j * case.reactance[pb]) / case.z_base
    dlf = subtree.T @ (z[:, None] * subtree)
    tree = _Tree(parent_branch, subtree, z, dlf)

    _tree_cache[key] = (case, tree)
    if len(_tree_cache) > _CACHE_SIZE:
        _tree_cache.popitem(last=False)
    return tree


def solve(
    case: NetworkCase,
    topology: Topology,
    inj: InjectionSet,
    tol: float = TOLERANCE,
    max_iter: int = MAX_ITER,
) -> PowerFlowSolution:
    """Run the sweep to a fixed point on a radial topology.

    Non-convergence is reported through ``converged=False``.
    """
    if not is_radial(topology, case):
        raise NonRadialTopologyError(f"topology is not radial: {topology!r}")
    tree = _tree(case, topology)
    s = (inj.p + 1j * inj.q) / case.base_kva
    if s.shape[0] != case.n_bus:
        raise ValueError("injection size does not match the number of buses")

    v = np.ones(s.shape, dtype=complex)
    converged = False
    iterations = 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for iterations in range(1, max_iter + 1):
            i_load = np.conj(s / v)
            v_new = 1.0 - tree.dlf @ i_load
            if not np.all(np.isfinite(v_new)):
                v = v_new
                break
            delta = np.max(np.abs(v_new - v))
            v = v_new
            if delta < tol:
                converged = True
                break
        i_load = np.conj(s / v)
        i_branch_bus = tree.subtree @ i_load  # current into each bus from its parent

    fed = tree.parent_branch >= 0
    current = np.zeros((case.n_branch,) + s.shape[1:])
    current[tree.parent_branch[fed]] = np.abs(i_branch_bus[fed]) * case.i_base
    loss = np.sum(tree.z.real[:, None] * np.abs(i_branch_bus.reshape(case.n_bus, -1)) ** 2, axis=0)
    loss = loss * case.base_kva
    s_grid = v[0] * np.conj(i_branch_bus[0]) * case.base_kva
    if s.ndim == 1:
        loss = float(loss[0])
        s_grid = complex(s_grid)
    return PowerFlowSolution(
        voltage=np.abs(v),
        voltage_complex=v,
        branch_current=current,
        total_loss=loss,
        grid_p=np.real(s_grid),
        grid_q=np.imag(s_grid),
        converged=bool(converged),
        iterations=iterations,
    )


def total_losses(sol: PowerFlowSolution, case: NetworkCase, topology: Topology) -> float:
    """Three-phase active loss in kW, summed as 3 R |I|^2 over closed branches."""
    if not sol.converged:
        raise UnconvergedSolutionError("power flow did not converge")
    closed = topology.closed
    r = case.resistance[closed]
    i = sol.branch_current[closed]
    if i.ndim > 1:
        r = r[:, None]
    return np.sum(3.0 * r * i**2, axis=0) / 1000.0


def max_voltage_deviation(sol: PowerFlowSolution, v_ref: float = 1.0):
    v = sol.voltage
    return np.maximum(np.abs(v_ref - v.min(axis=0)), np.abs(v_ref - v.max(axis=0)))


@dataclass(frozen=True)
class Violation:
    kind: str  # voltage_low | voltage_high | current | divergence
    magnitude: float
    element: int  # 1-based bus or branch id, 0 when not tied to an element


def constraint_violations(sol: PowerFlowSolution, case: NetworkCase) -> list[Violation]:
    """Voltage-band and ampacity exceedances of a single (non-batched) solution."""
    out = []
    v = sol.voltage
    for i in np.flatnonzero(v < case.v_min):
        out.append(Violation("voltage_low", float(case.v_min - v[i]), int(i) + 1))
    for i in np.flatnonzero(v > case.v_max):
        out.append(Violation("voltage_high", float(v[i] - case.v_max), int(i) + 1))
    over = sol.branch_current - case.ampacity
    for k in np.flatnonzero(over > 0):
        out.append(Violation("current", float(over[k]), int(k) + 1))
    return out

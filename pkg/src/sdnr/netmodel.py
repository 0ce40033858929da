"""Grid data model: buses, branches, topologies and case-file ingestion.

Bus and branch ids in case files are 1-based and contiguous; everything held in
arrays is 0-based (bus ``id`` lives at index ``id - 1``).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

from sdnr.devices import (
    DGUnit,
    DRContract,
    ESSUnit,
    MarkovParams,
    PVFarm,
    PVPanelParams,
)

PATTERNS = ("residential", "commercial", "industrial", "none")
HOURS = 24


class CaseError(Exception):
    """Base class for problems with a case file."""


class CaseSchemaError(CaseError):
    """Missing field, wrong type or out-of-range value."""


class DanglingReferenceError(CaseError):
    """A branch or device references a bus that does not exist."""


class DisconnectedNetworkError(CaseError):
    """The graph with every branch closed does not reach all buses."""


@dataclass(frozen=True)
class Bus:
    id: int
    peak_active: float
    peak_reactive: float
    demand_pattern: str = "none"


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    resistance: float
    reactance: float
    ampacity: float
    length: float = 1.0
    switchable: bool = True
    normally_open: bool = False


@dataclass(frozen=True, eq=False)
class NetworkCase:
    """Immutable grid description. Hashes by identity so it can key caches."""

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    demand_profiles: dict[str, np.ndarray]
    price_profile: np.ndarray
    dg_units: tuple[DGUnit, ...] = ()
    pv_farms: tuple[PVFarm, ...] = ()
    ess_units: tuple[ESSUnit, ...] = ()
    dr_contracts: tuple[DRContract, ...] = ()
    v_min: float = 0.95
    v_max: float = 1.05
    switch_price: float = 0.0
    switch_budget_per_day: int = 4
    base_kv: float = 12.66
    base_kva: float = 1000.0
    branch_failure_rate: float = 0.128  # failures / (year km)
    branch_mttr: float = 45.0  # minutes
    name: str = "case"
    digest: str = field(default="", compare=False)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @cached_property
    def from_idx(self) -> np.ndarray:
        return np.array([b.from_bus - 1 for b in self.branches], dtype=np.intp)

    @cached_property
    def to_idx(self) -> np.ndarray:
        return np.array([b.to_bus - 1 for b in self.branches], dtype=np.intp)

    @cached_property
    def resistance(self) -> np.ndarray:
        return np.array([b.resistance for b in self.branches])

    @cached_property
    def reactance(self) -> np.ndarray:
        return np.array([b.reactance for b in self.branches])

    @cached_property
    def ampacity(self) -> np.ndarray:
        return np.array([b.ampacity for b in self.branches])

    @cached_property
    def switchable(self) -> np.ndarray:
        return np.array([b.switchable for b in self.branches], dtype=bool)

    @cached_property
    def peak_p(self) -> np.ndarray:
        return np.array([b.peak_active for b in self.buses])

    @cached_property
    def peak_q(self) -> np.ndarray:
        return np.array([b.peak_reactive for b in self.buses])

    @cached_property
    def z_base(self) -> float:
        """Impedance base in ohm."""
        return self.base_kv**2 * 1000.0 / self.base_kva

    @cached_property
    def i_base(self) -> float:
        """Current base in A."""
        return self.base_kva / (np.sqrt(3.0) * self.base_kv)


@dataclass(frozen=True, eq=False)
class Topology:
    """Open/closed state of every branch for one hour."""

    closed: np.ndarray

    def __post_init__(self):
        arr = np.array(self.closed, dtype=bool)
        arr.setflags(write=False)
        object.__setattr__(self, "closed", arr)

    def __eq__(self, other):
        return isinstance(other, Topology) and np.array_equal(self.closed, other.closed)

    def __hash__(self):
        return hash(self.closed.tobytes())

    def __len__(self):
        return self.closed.size

    @property
    def open_ids(self) -> list[int]:
        """1-based ids of open branches."""
        return [int(i) + 1 for i in np.flatnonzero(~self.closed)]

    @classmethod
    def from_open(cls, case: NetworkCase, open_ids) -> "Topology":
        closed = np.ones(case.n_branch, dtype=bool)
        for bid in open_ids:
            if not 1 <= bid <= case.n_branch:
                raise ValueError(f"branch id {bid} out of range 1..{case.n_branch}")
            closed[bid - 1] = False
        return cls(closed)

    def __repr__(self):
        return f"Topology(open={self.open_ids})"


def base_topology(case: NetworkCase) -> Topology:
    """Topology with the normally-open (tie) branches open."""
    return Topology(np.array([not b.normally_open for b in case.branches]))


# ---------------------------------------------------------------------------
# Case loading


def _require(d: dict, key: str, kind, where: str):
    if not isinstance(d, dict) or key not in d:
        raise CaseSchemaError(f"{where}: missing field '{key}'")
    val = d[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise CaseSchemaError(f"{where}.{key}: expected a number, got {val!r}")
        return float(val)
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise CaseSchemaError(f"{where}.{key}: expected an integer, got {val!r}")
        return val
    if kind is bool:
        if not isinstance(val, bool):
            raise CaseSchemaError(f"{where}.{key}: expected true/false, got {val!r}")
        return val
    if kind is list:
        if not isinstance(val, list):
            raise CaseSchemaError(f"{where}.{key}: expected a list")
        return val
    if kind is dict:
        if not isinstance(val, dict):
            raise CaseSchemaError(f"{where}.{key}: expected a mapping")
        return val
    if kind is str:
        if not isinstance(val, str):
            raise CaseSchemaError(f"{where}.{key}: expected a string")
        return val
    raise TypeError(kind)


def _vector(values, where: str, length: int = HOURS) -> np.ndarray:
    if not isinstance(values, list) or len(values) != length:
        raise CaseSchemaError(f"{where}: expected a list of {length} numbers")
    try:
        arr = np.array(values, dtype=float)
    except (TypeError, ValueError) as exc:
        raise CaseSchemaError(f"{where}: non-numeric entry") from exc
    if not np.all(np.isfinite(arr)):
        raise CaseSchemaError(f"{where}: non-finite entry")
    return arr


def _check_node(node: int, n_bus: int, where: str):
    if not 1 <= node <= n_bus:
        raise DanglingReferenceError(f"{where}: bus {node} does not exist (1..{n_bus})")


def _parse_buses(raw) -> tuple[Bus, ...]:
    if not isinstance(raw, list) or not raw:
        raise CaseSchemaError("buses: expected a non-empty list")
    buses = []
    for k, b in enumerate(raw):
        where = f"buses[{k}]"
        bus = Bus(
            id=_require(b, "id", int, where),
            peak_active=_require(b, "peak_active", float, where),
            peak_reactive=_require(b, "peak_reactive", float, where),
            demand_pattern=b.get("demand_pattern", "none") if isinstance(b, dict) else "none",
        )
        if bus.demand_pattern not in PATTERNS:
            raise CaseSchemaError(f"{where}.demand_pattern: unknown pattern {bus.demand_pattern!r}")
        if bus.peak_active < 0 or bus.peak_reactive < 0:
            raise CaseSchemaError(f"{where}: peak demand must be non-negative")
        buses.append(bus)
    buses.sort(key=lambda b: b.id)
    ids = [b.id for b in buses]
    if ids != list(range(1, len(buses) + 1)):
        raise CaseSchemaError("buses: ids must be unique and contiguous from 1")
    return tuple(buses)


def _parse_branches(raw, n_bus: int) -> tuple[Branch, ...]:
    if not isinstance(raw, list) or not raw:
        raise CaseSchemaError("branches: expected a non-empty list")
    branches = []
    for k, b in enumerate(raw):
        where = f"branches[{k}]"
        br = Branch(
            id=_require(b, "id", int, where),
            from_bus=_require(b, "from_bus", int, where),
            to_bus=_require(b, "to_bus", int, where),
            resistance=_require(b, "resistance", float, where),
            reactance=_require(b, "reactance", float, where),
            ampacity=_require(b, "ampacity", float, where),
            length=float(b.get("length", 1.0)),
            switchable=bool(b.get("switchable", True)),
            normally_open=bool(b.get("normally_open", False)),
        )
        _check_node(br.from_bus, n_bus, where + ".from_bus")
        _check_node(br.to_bus, n_bus, where + ".to_bus")
        if br.from_bus == br.to_bus:
            raise CaseSchemaError(f"{where}: self-loop on bus {br.from_bus}")
        if br.resistance < 0:
            raise CaseSchemaError(f"{where}: resistance must be non-negative")
        if br.ampacity <= 0:
            raise CaseSchemaError(f"{where}: ampacity must be positive")
        if br.length <= 0:
            raise CaseSchemaError(f"{where}: length must be positive")
        branches.append(br)
    branches.sort(key=lambda b: b.id)
    ids = [b.id for b in branches]
    if ids != list(range(1, len(branches) + 1)):
        raise CaseSchemaError("branches: ids must be unique and contiguous from 1")
    return tuple(branches)


def _parse_pv(raw: dict, k: int, n_bus: int) -> PVFarm:
    where = f"devices.pv[{k}]"
    node = _require(raw, "node", int, where)
    _check_node(node, n_bus, where + ".node")
    mk = _require(raw, "markov", dict, where)
    panel = _require(raw, "panel", dict, where)
    irr = _require(raw, "irradiance", dict, where)
    pw = where + ".panel"
    try:
        farm = PVFarm(
            name=str(raw.get("name", f"PV{k + 1}")),
            node=node,
            unit_count=_require(raw, "unit_count", int, where),
            initially_failed=_require(raw, "initially_failed", int, where),
            unit_rating=_require(raw, "unit_rating", float, where),
            markov=MarkovParams(
                _require(mk, "failure_rate", float, where + ".markov"),
                _require(mk, "repair_rate", float, where + ".markov"),
            ),
            panel=PVPanelParams(
                T_at=_require(panel, "T_at", float, pw),
                NOCT=_require(panel, "NOCT", float, pw),
                V_oc=_require(panel, "V_oc", float, pw),
                V_mp=_require(panel, "V_mp", float, pw),
                I_sc=_require(panel, "I_sc", float, pw),
                I_mp=_require(panel, "I_mp", float, pw),
                K_vt=_require(panel, "K_vt", float, pw),
                K_ct=_require(panel, "K_ct", float, pw),
                modules=_require(panel, "modules", int, pw),
                rated=_require(panel, "rated", float, pw),
            ),
            irradiance_mean=_vector(irr.get("mean"), where + ".irradiance.mean"),
            irradiance_std=_vector(irr.get("std"), where + ".irradiance.std"),
        )
    except ValueError as exc:
        raise CaseSchemaError(f"{where}: {exc}") from exc
    if np.any(farm.irradiance_mean < 0) or np.any(farm.irradiance_mean > 1):
        raise CaseSchemaError(f"{where}.irradiance.mean: values must lie in [0, 1]")
    if np.any(farm.irradiance_std < 0):
        raise CaseSchemaError(f"{where}.irradiance.std: values must be non-negative")
    return farm


def _parse_devices(raw: dict, n_bus: int):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise CaseSchemaError("devices: expected a mapping")
    fields = {
        "dg": (DGUnit, ("a", "b", "c", "su", "sd", "p_min", "p_max", "q_min", "q_max")),
        "ess": (
            ESSUnit,
            ("soc_min", "soc_max", "soc_initial", "p_charge_max", "p_discharge_max", "efficiency"),
        ),
        "dr": (DRContract, ("max_fraction", "price")),
    }
    out = {}
    for kind, (cls, names) in fields.items():
        items = []
        for k, d in enumerate(raw.get(kind) or []):
            where = f"devices.{kind}[{k}]"
            node = _require(d, "node", int, where)
            _check_node(node, n_bus, where + ".node")
            kwargs = {n: _require(d, n, float, where) for n in names}
            if kind != "dr":
                kwargs["name"] = str(d.get("name", f"{kind.upper()}{k + 1}"))
            try:
                items.append(cls(node=node, **kwargs))
            except ValueError as exc:
                raise CaseSchemaError(f"{where}: {exc}") from exc
        out[kind] = tuple(items)
    out["pv"] = tuple(_parse_pv(d, k, n_bus) for k, d in enumerate(raw.get("pv") or []))
    return out


def build_case(doc: dict, digest: str = "") -> NetworkCase:
    """Validate a parsed case document and build the :class:`NetworkCase`."""
    if not isinstance(doc, dict):
        raise CaseSchemaError("case document must be a mapping")
    buses = _parse_buses(doc.get("buses"))
    n_bus = len(buses)
    branches = _parse_branches(doc.get("branches"), n_bus)

    profiles = {}
    raw_profiles = doc.get("profiles") or {}
    if not isinstance(raw_profiles, dict):
        raise CaseSchemaError("profiles: expected a mapping pattern -> 24 values")
    for pat, vals in raw_profiles.items():
        if pat not in PATTERNS:
            raise CaseSchemaError(f"profiles: unknown pattern {pat!r}")
        profiles[pat] = _vector(vals, f"profiles.{pat}")
    for b in buses:
        if b.demand_pattern != "none" and b.demand_pattern not in profiles:
            raise CaseSchemaError(f"profiles: no profile for pattern {b.demand_pattern!r}")
    prices = _vector(doc.get("prices"), "prices") if "prices" in doc else np.zeros(HOURS)

    limits = doc.get("limits") or {}
    v_min = float(limits.get("v_min", 0.95))
    v_max = float(limits.get("v_max", 1.05))
    if not 0 < v_min < v_max:
        raise CaseSchemaError("limits: require 0 < v_min < v_max")
    budget = limits.get("switch_budget", 4)
    if isinstance(budget, bool) or not isinstance(budget, int) or budget < 0:
        raise CaseSchemaError("limits.switch_budget: expected a non-negative integer")

    rel = doc.get("branch_reliability") or {}
    devices = _parse_devices(doc.get("devices"), n_bus)

    case = NetworkCase(
        buses=buses,
        branches=branches,
        demand_profiles=profiles,
        price_profile=prices,
        dg_units=devices["dg"],
        pv_farms=devices["pv"],
        ess_units=devices["ess"],
        dr_contracts=devices["dr"],
        v_min=v_min,
        v_max=v_max,
        switch_price=float(limits.get("switch_price", 0.0)),
        switch_budget_per_day=budget,
        base_kv=float(doc.get("base_kv", 12.66)),
        base_kva=float(doc.get("base_kva", 1000.0)),
        branch_failure_rate=float(rel.get("failure_rate", 0.128)),
        branch_mttr=float(rel.get("mttr", 45.0)),
        name=str(doc.get("name", "case")),
        digest=digest,
    )
    if not is_connected(np.ones(case.n_branch, dtype=bool), case):
        raise DisconnectedNetworkError("network is not connected even with every branch closed")
    return case


def load_case(path) -> NetworkCase:
    """Read and validate a YAML case file."""
    path = Path(path)
    text = path.read_bytes()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise CaseSchemaError(f"{path}: not a valid case document: {exc}") from exc
    return build_case(doc, digest=hashlib.sha256(text).hexdigest())


# ---------------------------------------------------------------------------
# Loads and topology checks


def hourly_loads(case: NetworkCase, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus (P kW, Q kVAr) at hour ``t`` (1..24)."""
    if not 1 <= t <= HOURS:
        raise ValueError(f"hour must be in 1..24, got {t}")
    mult = np.array(
        [
            1.0 if b.demand_pattern == "none" else case.demand_profiles[b.demand_pattern][t - 1]
            for b in case.buses
        ]
    )
    return case.peak_p * mult, case.peak_q * mult


def _find(parent: list[int], i: int) -> int:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def is_connected(closed: np.ndarray, case: NetworkCase) -> bool:
    parent = list(range(case.n_bus))
    components = case.n_bus
    for k in np.flatnonzero(closed):
        a = _find(parent, case.from_idx[k])
        b = _find(parent, case.to_idx[k])
        if a != b:
            parent[a] = b
            components -= 1
    return components == 1


def is_radial(topology: Topology, case: NetworkCase) -> bool:
    """Spanning-tree test: N_bus - 1 closed branches that connect every bus."""
    closed = topology.closed
    if closed.size != case.n_branch:
        raise ValueError("topology size does not match the case")
    if int(closed.sum()) != case.n_bus - 1:
        return False
    return is_connected(closed, case)


def radiality_matrix_oracle(topology: Topology, case: NetworkCase) -> bool:
    """Matrix-power radiality test, (I + M)^(N-1) > 0 elementwise.

    Boolean (saturating) arithmetic keeps entries in {0, 1}. Meant for tests.
    """
    n = case.n_bus
    closed = topology.closed
    if int(closed.sum()) != n - 1:
        return False
    m = np.eye(n, dtype=np.int64)
    idx = np.flatnonzero(closed)
    m[case.from_idx[idx], case.to_idx[idx]] = 1
    m[case.to_idx[idx], case.from_idx[idx]] = 1
    result = np.eye(n, dtype=np.int64)
    power = n - 1
    base = m
    while power:
        if power & 1:
            result = np.minimum(result @ base, 1)
        base = np.minimum(base @ base, 1)
        power >>= 1
    return bool(np.all(result > 0))


def switching_count(current: Topology, previous: Topology) -> int:
    if len(current) != len(previous):
        raise ValueError("topologies have different branch counts")
    return int(np.count_nonzero(current.closed != previous.closed))


def nearest_radial(
    case: NetworkCase,
    preferred_closed: np.ndarray,
    locked_closed: np.ndarray | None = None,
    locked_open: np.ndarray | None = None,
    priority: np.ndarray | None = None,
) -> Topology:
    """Spanning tree that keeps as many ``preferred_closed`` branches as possible.

    Kruskal over weights: locked-closed first, then preferred, then the rest.
    Locked-open branches are never used. ``priority`` breaks ties inside each
    weight class (lower first). Raises ValueError when the locks make a
    spanning tree impossible.
    """
    nb = case.n_branch
    locked_closed = np.zeros(nb, bool) if locked_closed is None else locked_closed
    locked_open = np.zeros(nb, bool) if locked_open is None else locked_open
    priority = np.zeros(nb) if priority is None else priority
    weight = np.where(locked_closed, 0, np.where(preferred_closed, 1, 2))
    order = np.lexsort((np.arange(nb), priority, weight))
    parent = list(range(case.n_bus))
    closed = np.zeros(nb, dtype=bool)
    used = 0
    for k in order:
        if locked_open[k]:
            continue
        a = _find(parent, case.from_idx[k])
        b = _find(parent, case.to_idx[k])
        if a == b:
            if locked_closed[k]:
                raise ValueError("locked-closed branches form a cycle")
            continue
        parent[a] = b
        closed[k] = True
        used += 1
        if used == case.n_bus - 1:
            break
    if used != case.n_bus - 1:
        raise ValueError("no spanning tree exists under the given locks")
    return Topology(closed)

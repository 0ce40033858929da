"""Renewable uncertainty: unit availability, irradiance, PV power and scenario trees.

Each PV farm holds ``T`` identical units. Unit availability follows a
continuous two-state Markov chain anchored at the day's initial state (``A``
units failed at t0). Irradiance at each hour is beta distributed from its
historical mean and standard deviation. A farm's scenarios are pairs
(units up, irradiance bin); farms are combined into joint scenarios that are
then cut down with Kantorovich forward selection.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from sdnr.devices import MarkovParams, PVFarm, PVPanelParams

HOURS_PER_YEAR = 8760.0
BETA_PARAM_CAP = 1e8
DEFAULT_SAMPLES = 2000
DEFAULT_BINS = 10
DEFAULT_JOINT_DRAWS = 500
DEFAULT_KEEP = 10


class InvalidMomentsError(ValueError):
    """Mean/std pair outside the region a beta distribution can match."""


def availability_prob(m: MarkovParams, p_up_at_0: float, t: float) -> tuple[float, float]:
    """(P_up, P_down) after ``t`` hours from the given initial up-probability."""
    if t < 0:
        raise ValueError("t must be non-negative")
    lam = m.failure_rate / HOURS_PER_YEAR
    mu = m.repair_rate / HOURS_PER_YEAR
    total = lam + mu
    if total == 0:
        return float(p_up_at_0), 1.0 - float(p_up_at_0)
    steady = mu / total
    p_up = steady + (p_up_at_0 - steady) * np.exp(-total * t)
    return float(p_up), float(1.0 - p_up)


def units_up_pmf(T: int, A: int, m: MarkovParams, t: float) -> np.ndarray:
    """Probability of ``B = 0..T`` units available at ``t`` given ``A`` failed at t0.

    ``T - A`` units start up and survive with ``p_uu``; ``A`` start down and are
    repaired with ``p_du``. The double binomial sum below counts ``i`` survivors
    of the first group and ``B - i`` repaired units of the second.
    """
    if not 0 <= A <= T:
        raise ValueError("require 0 <= A <= T")
    p_uu, p_ud = availability_prob(m, 1.0, t)
    p_du, p_dd = availability_prob(m, 0.0, t)
    up0 = T - A
    pmf = np.zeros(T + 1)
    for b in range(T + 1):
        total = 0.0
        for i in range(max(0, b - A), min(b, up0) + 1):
            total += (
                comb(up0, i)
                * comb(A, b - i)
                * p_uu**i
                * p_du ** (b - i)
                * p_ud ** (up0 - i)
                * p_dd ** (A - b + i)
            )
        pmf[b] = total
    return pmf


def beta_params(mean: float, std: float) -> tuple[float, float]:
    """Moment-matched (alpha, beta) of a beta distribution."""
    var = std * std
    if not (0 < mean < 1) or std <= 0 or var >= mean * (1 - mean):
        raise InvalidMomentsError(f"no beta distribution with mean {mean} and std {std}")
    b = (1 - mean) * (mean * (1 - mean) / var - 1)
    a = mean * b / (1 - mean)
    if a > BETA_PARAM_CAP or b > BETA_PARAM_CAP:
        raise InvalidMomentsError(f"std {std} too small for a usable beta fit")
    return a, b


def sample_irradiance(
    farm: PVFarm, t: int, n_samples: int, n_bins: int, rng: np.random.Generator
) -> list[tuple[float, float]]:
    """Binned beta samples as (bin midpoint, frequency) pairs for hour ``t``."""
    if not n_samples >= n_bins >= 1:
        raise ValueError("require n_samples >= n_bins >= 1")
    mean = farm.irradiance_mean[t - 1]
    if mean == 0:
        return [(0.0, 1.0)]
    a, b = beta_params(mean, farm.irradiance_std[t - 1])
    draws = rng.beta(a, b, n_samples)
    counts, edges = np.histogram(draws, bins=n_bins, range=(0.0, 1.0))
    mids = 0.5 * (edges[:-1] + edges[1:])
    return [(float(mids[i]), counts[i] / n_samples) for i in np.flatnonzero(counts)]


def pv_output(panel: PVPanelParams, s, units_up):
    """Farm output in kW at per-unit irradiance ``s`` with ``units_up`` units running."""
    s = np.asarray(s, dtype=float)
    cell_temp = panel.T_at + s * (panel.NOCT - 20.0) / 0.8
    voltage = panel.V_oc - panel.K_vt * cell_temp
    current = s * (panel.I_sc + panel.K_ct * (cell_temp - 25.0))
    fill = (panel.V_mp * panel.I_mp) / (panel.V_oc * panel.I_sc)
    per_unit_kw = panel.modules * fill * voltage * current / 1000.0
    return np.maximum(per_unit_kw * np.asarray(units_up), 0.0)


@dataclass(frozen=True)
class Scenario:
    units_up: tuple[int, ...]
    irradiance: tuple[float, ...]
    probability: float


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """Joint scenarios for one hour, stored column-wise.

    ``units_up`` and ``irradiance`` are ``(n_scenarios, n_farms)``.
    """

    hour: int
    units_up: np.ndarray
    irradiance: np.ndarray
    probability: np.ndarray

    def __post_init__(self):
        units = np.asarray(self.units_up, dtype=np.int64).reshape(len(self.probability), -1)
        irr = np.asarray(self.irradiance, dtype=float).reshape(units.shape)
        prob = np.asarray(self.probability, dtype=float)
        if prob.size == 0:
            raise ValueError("scenario set is empty")
        if np.any(prob <= 0):
            raise ValueError("scenario probabilities must be positive")
        if abs(prob.sum() - 1.0) > 1e-9:
            raise ValueError(f"scenario probabilities sum to {prob.sum()}, not 1")
        object.__setattr__(self, "units_up", units)
        object.__setattr__(self, "irradiance", irr)
        object.__setattr__(self, "probability", prob)

    def __len__(self):
        return self.probability.size

    @property
    def scenarios(self) -> list[Scenario]:
        return [
            Scenario(tuple(int(u) for u in self.units_up[k]), tuple(map(float, self.irradiance[k])), float(p))
            for k, p in enumerate(self.probability)
        ]

    def outcomes(self, unit_counts) -> np.ndarray:
        """Outcome vectors r(w): per farm (units_up / T, irradiance), all in [0, 1]."""
        scale = np.maximum(np.asarray(unit_counts, dtype=float), 1.0)
        cols = []
        for f in range(self.units_up.shape[1]):
            cols.append(self.units_up[:, f] / scale[f])
            cols.append(self.irradiance[:, f])
        return np.column_stack(cols) if cols else np.zeros((len(self), 0))

    def pv_power(self, farms) -> np.ndarray:
        """PV output per farm and scenario, kW, ``(n_scenarios, n_farms)``."""
        out = np.zeros(self.units_up.shape)
        for f, farm in enumerate(farms):
            out[:, f] = pv_output(farm.panel, self.irradiance[:, f], self.units_up[:, f])
        return out


def farm_scenarios(
    farm: PVFarm, t: int, n_samples: int, n_bins: int, rng: np.random.Generator, elapsed: float | None = None
) -> list[tuple[int, float, float]]:
    """One farm's (units_up, irradiance, probability) tree for hour ``t``."""
    elapsed = t if elapsed is None else elapsed
    pmf = units_up_pmf(farm.unit_count, farm.initially_failed, farm.markov, elapsed)
    bins = sample_irradiance(farm, t, n_samples, n_bins, rng)
    return [(b, s, pb * ps) for b, pb in enumerate(pmf) if pb > 0 for s, ps in bins]


def build_tree(
    farms,
    t: int,
    n_samples: int = DEFAULT_SAMPLES,
    n_bins: int = DEFAULT_BINS,
    rng: np.random.Generator | None = None,
    max_joint: int = DEFAULT_JOINT_DRAWS,
    elapsed: float | None = None,
) -> ScenarioSet:
    """Joint scenario set over all farms.

    The exact cross product is used when it has at most ``max_joint`` members;
    otherwise ``max_joint`` joint outcomes are drawn from the per-farm
    distributions and duplicates are merged with frequency weights.
    """
    if not farms:
        raise ValueError("need at least one PV farm")
    rng = np.random.default_rng() if rng is None else rng
    trees = [farm_scenarios(f, t, n_samples, n_bins, rng, elapsed) for f in farms]
    sizes = [len(tr) for tr in trees]
    if np.prod(sizes, dtype=float) <= max_joint:
        grids = np.meshgrid(*[np.arange(n) for n in sizes], indexing="ij")
        picks = np.column_stack([g.ravel() for g in grids])
        prob = np.ones(len(picks))
        for f, tr in enumerate(trees):
            prob *= np.array([x[2] for x in tr])[picks[:, f]]
    else:
        draws = np.column_stack(
            [rng.choice(len(tr), size=max_joint, p=_normalised([x[2] for x in tr])) for tr in trees]
        )
        picks, counts = np.unique(draws, axis=0, return_counts=True)
        prob = counts / max_joint
    keep = prob > 0
    picks, prob = picks[keep], prob[keep]
    units = np.column_stack([np.array([x[0] for x in tr])[picks[:, f]] for f, tr in enumerate(trees)])
    irr = np.column_stack([np.array([x[1] for x in tr])[picks[:, f]] for f, tr in enumerate(trees)])
    return ScenarioSet(t, units, irr, prob / prob.sum())


def deterministic_set(farms, t: int) -> ScenarioSet:
    """Single scenario: units frozen at their t0 state, mean irradiance."""
    units = [[f.unit_count - f.initially_failed for f in farms]]
    irr = [[f.irradiance_mean[t - 1] for f in farms]]
    return ScenarioSet(t, np.array(units), np.array(irr), np.array([1.0]))


def _normalised(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p / p.sum()


def kantorovich_select(points: np.ndarray, prob: np.ndarray, keep: int):
    """Forward selection of ``keep`` scenarios.

    Returns ``(selected, new_prob, distance)`` where ``selected`` lists indices
    in selection order, ``new_prob`` holds the redistributed probabilities of
    the selected scenarios (same order), and ``distance`` is the Kantorovich
    distance between the original and the reduced distribution.
    """
    n = len(prob)
    if not 1 <= keep <= n:
        raise ValueError(f"keep must be in 1..{n}, got {keep}")
    points = np.asarray(points, dtype=float).reshape(n, -1)
    prob = np.asarray(prob, dtype=float)
    dist = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    # cost[k, u]: distance from scenario k to the selected set plus candidate u
    cost = dist.copy()
    remaining = np.ones(n, dtype=bool)
    selected = []
    for _ in range(keep):
        weighted = prob[:, None] * cost
        np.fill_diagonal(weighted, 0.0)
        d = np.where(remaining, (weighted * remaining[:, None]).sum(axis=0), np.inf)
        s = int(np.argmin(d))
        selected.append(s)
        remaining[s] = False
        cost = np.minimum(cost, cost[:, [s]])

    sel = np.array(selected)
    nearest = sel[np.argmin(dist[:, sel], axis=1)]
    nearest[sel] = sel
    new_prob = np.array([prob[nearest == s].sum() for s in sel])
    distance = float(np.sum(prob * dist[np.arange(n), nearest]))
    return selected, new_prob, distance


def kantorovich_reduce(scenario_set: ScenarioSet, keep: int, unit_counts=None) -> ScenarioSet:
    """Reduce to ``keep`` scenarios and move dropped mass to the nearest survivor."""
    if unit_counts is None:
        unit_counts = np.maximum(scenario_set.units_up.max(axis=0), 1)
    points = scenario_set.outcomes(unit_counts)
    selected, new_prob, _ = kantorovich_select(points, scenario_set.probability, keep)
    order = np.argsort(selected)
    sel = np.array(selected)[order]
    new_prob = new_prob[order]
    return ScenarioSet(
        scenario_set.hour,
        scenario_set.units_up[sel],
        scenario_set.irradiance[sel],
        new_prob / new_prob.sum(),
    )


def reduction_distance(scenario_set: ScenarioSet, keep: int, unit_counts) -> float:
    points = scenario_set.outcomes(unit_counts)
    return kantorovich_select(points, scenario_set.probability, keep)[2]

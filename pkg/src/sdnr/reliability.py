"""Monte Carlo branch availability and expected interrupted load (OF1).

Every branch alternates exponential up and down periods over a horizon of
``N_T`` hours. For each scheduling hour and sample a random index into that
horizon is drawn, and the branch state at that index is recorded. The
resulting tensor is built once per day, before any optimisation, and only read
afterwards.

Sense convention: ``a = 1`` means the branch is *under repair* at that sample,
so OF1 is the expected load cut off by outages and is minimised.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from sdnr._random import child_seeds
from sdnr.netmodel import HOURS, NetworkCase, Topology

log = logging.getLogger(__name__)

HOURS_PER_YEAR = 8760.0
DEFAULT_HORIZON = 8760
DEFAULT_SAMPLES = 1000


@dataclass(frozen=True)
class BranchReliabilityParams:
    failure_rate: float  # failures / year for this branch
    mttf: float  # hours
    mttr: float  # minutes

    def __post_init__(self):
        if min(self.failure_rate, self.mttf, self.mttr) < 0:
            raise ValueError("reliability parameters must be non-negative")

    @classmethod
    def for_branch(cls, rate_per_km: float, length_km: float, mttr_min: float):
        rate = rate_per_km * length_km
        mttf = np.inf if rate == 0 else HOURS_PER_YEAR / rate
        return cls(failure_rate=rate, mttf=mttf, mttr=mttr_min)

    @property
    def mttr_hours(self) -> float:
        return self.mttr / 60.0


def exponential_duration(mean: float, u: np.ndarray | float):
    """``-mean * ln(u)``; ``u`` is in (0, 1]."""
    with np.errstate(invalid="ignore"):
        return -mean * np.log(u)


def whole_hours(x):
    """Round to the nearest integer hour (halves up), at least one hour."""
    return np.maximum(1, np.floor(np.asarray(x, dtype=float) + 0.5))


def _uniform_open0(rng: np.random.Generator, size=None):
    # (0, 1]: keeps log() finite and ceil(u * N_T) >= 1
    return 1.0 - rng.random(size)


def sample_cycles(
    params: BranchReliabilityParams, horizon: int, rng: np.random.Generator
) -> list[tuple[bool, int]]:
    """Alternating (is_up, hours) segments covering exactly ``horizon`` hours."""
    if horizon < 1:
        raise ValueError("horizon must be at least one hour")
    segments = []
    elapsed = 0
    up = True
    while elapsed < horizon:
        mean = params.mttf if up else params.mttr_hours
        if up and not np.isfinite(mean):
            duration = horizon - elapsed
        else:
            duration = int(whole_hours(exponential_duration(mean, _uniform_open0(rng))))
        duration = min(duration, horizon - elapsed)
        segments.append((up, duration))
        elapsed += duration
        up = not up
    return segments


def segments_to_down(segments: list[tuple[bool, int]]) -> np.ndarray:
    """Boolean per-hour repair state (index 0 is hour 1)."""
    return np.concatenate([np.full(d, not up, dtype=bool) for up, d in segments])


def _down_intervals(params: BranchReliabilityParams, horizon: int, n: int, rng):
    """Vectorised trajectories: list of (start, end) 1-based inclusive down-hour arrays."""
    intervals = []
    if params.failure_rate == 0 or not np.isfinite(params.mttf):
        return intervals
    clock = np.zeros(n)
    while True:
        active = clock < horizon
        if not active.any():
            break
        up = whole_hours(exponential_duration(params.mttf, _uniform_open0(rng, n)))
        down = whole_hours(exponential_duration(params.mttr_hours, _uniform_open0(rng, n)))
        start = clock + up + 1
        end = clock + up + down
        start = np.where(active, start, np.inf)
        intervals.append((start, end))
        clock = np.where(active, end, clock)
    return intervals


@dataclass(frozen=True, eq=False)
class AvailabilityTensor:
    """``a[br, t, s]`` with 1 = branch ``br`` under repair at hour ``t`` in sample ``s``."""

    a: np.ndarray  # uint8, (n_branch, 24, n_samples)
    horizon: int

    @property
    def n_samples(self) -> int:
        return self.a.shape[2]

    @cached_property
    def unavailability(self) -> np.ndarray:
        """Mean over samples, (n_branch, 24)."""
        return self.a.mean(axis=2)


def build_tensor(
    case: NetworkCase,
    n_samples: int = DEFAULT_SAMPLES,
    horizon: int = DEFAULT_HORIZON,
    rng: np.random.Generator | None = None,
    params: list[BranchReliabilityParams] | None = None,
) -> AvailabilityTensor:
    """Sample the repair-state tensor. Each branch gets its own sub-stream."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    if params is None:
        params = [
            BranchReliabilityParams.for_branch(case.branch_failure_rate, b.length, case.branch_mttr)
            for b in case.branches
        ]
    a = np.zeros((case.n_branch, HOURS, n_samples), dtype=np.uint8)
    for k, seed in enumerate(child_seeds(rng, case.n_branch)):
        brng = np.random.default_rng(seed)
        intervals = _down_intervals(params[k], horizon, n_samples, brng)
        idx = np.ceil(_uniform_open0(brng, (HOURS, n_samples)) * horizon)
        down = np.zeros((HOURS, n_samples), dtype=bool)
        for start, end in intervals:
            down |= (idx >= start) & (idx <= end)
        a[k] = down
    return AvailabilityTensor(a, horizon)


def of1(tensor: AvailabilityTensor, topology: Topology, loads: np.ndarray, t: int, case: NetworkCase) -> float:
    """Expected interrupted load (kW): receiving-bus load times repair probability,
    summed over closed branches."""
    if tensor.a.shape[0] != len(topology):
        raise ValueError("tensor and topology disagree on the number of branches")
    if len(loads) != case.n_bus:
        raise ValueError("loads must have one entry per bus")
    if not 1 <= t <= HOURS:
        raise ValueError(f"hour must be in 1..24, got {t}")
    x = topology.closed
    return float(np.sum(np.asarray(loads)[case.to_idx] * x * tensor.unavailability[:, t - 1]))


def cache_path(cache_dir, case: NetworkCase, seed: int, n_samples: int, horizon: int) -> Path:
    key = f"{case.digest[:16] or case.name}_s{seed}_n{n_samples}_h{horizon}.npz"
    return Path(cache_dir) / key


def load_or_build(
    case: NetworkCase,
    seed: int,
    n_samples: int,
    horizon: int,
    rng: np.random.Generator,
    cache_dir=None,
) -> AvailabilityTensor:
    """Build the tensor, reusing a cached copy keyed by (case, seed, N_s, N_T)."""
    if cache_dir is None:
        return build_tensor(case, n_samples, horizon, rng)
    path = cache_path(cache_dir, case, seed, n_samples, horizon)
    if path.exists():
        with np.load(path) as data:
            log.info("reliability tensor loaded from %s", path)
            return AvailabilityTensor(data["a"], int(data["horizon"]))
    tensor = build_tensor(case, n_samples, horizon, rng)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez_compressed(tmp, a=tensor.a, horizon=horizon)
    tmp.replace(path)
    return tensor

"""Device records attached to a network case.

These are plain immutable data holders; the physics that uses them lives in
:mod:`sdnr.scenarios` (PV) and :mod:`sdnr.objectives` (DG, ESS, DR).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MarkovParams:
    """Two-state up/down model of a renewable unit, rates in 1/year."""

    failure_rate: float
    repair_rate: float

    def __post_init__(self):
        if self.failure_rate < 0 or self.repair_rate < 0:
            raise ValueError("Markov rates must be non-negative")


@dataclass(frozen=True)
class PVPanelParams:
    T_at: float
    NOCT: float
    V_oc: float
    V_mp: float
    I_sc: float
    I_mp: float
    K_vt: float
    K_ct: float
    modules: int
    rated: float

    def __post_init__(self):
        if not self.V_mp < self.V_oc:
            raise ValueError("V_mp must be below V_oc")
        if not self.I_mp < self.I_sc:
            raise ValueError("I_mp must be below I_sc")


@dataclass(frozen=True, eq=False)
class PVFarm:
    name: str
    node: int
    unit_count: int
    initially_failed: int
    unit_rating: float  # kW
    markov: MarkovParams
    panel: PVPanelParams
    irradiance_mean: np.ndarray  # (24,)
    irradiance_std: np.ndarray  # (24,)

    def __post_init__(self):
        if not 0 <= self.initially_failed <= self.unit_count:
            raise ValueError(f"{self.name}: initially_failed must lie in [0, unit_count]")


@dataclass(frozen=True)
class DGUnit:
    name: str
    node: int
    a: float
    b: float
    c: float
    su: float
    sd: float
    p_min: float
    p_max: float
    q_min: float
    q_max: float

    def __post_init__(self):
        if self.p_min > self.p_max:
            raise ValueError(f"{self.name}: p_min > p_max")
        if min(self.a, self.b, self.c, self.su, self.sd) < 0:
            raise ValueError(f"{self.name}: cost coefficients must be non-negative")


@dataclass(frozen=True)
class ESSUnit:
    name: str
    node: int
    soc_min: float
    soc_max: float
    soc_initial: float
    p_charge_max: float
    p_discharge_max: float
    efficiency: float

    def __post_init__(self):
        if not self.soc_min < self.soc_max:
            raise ValueError(f"{self.name}: soc_min must be below soc_max")
        if not self.soc_min <= self.soc_initial <= self.soc_max:
            raise ValueError(f"{self.name}: soc_initial outside [soc_min, soc_max]")
        if self.p_charge_max <= 0 or self.p_discharge_max <= 0:
            raise ValueError(f"{self.name}: power limits must be positive")
        if not 0 < self.efficiency <= 1:
            raise ValueError(f"{self.name}: efficiency must lie in (0, 1]")


@dataclass(frozen=True)
class DRContract:
    node: int
    max_fraction: float
    price: float

    def __post_init__(self):
        if not 0 <= self.max_fraction <= 1:
            raise ValueError("DR max_fraction must lie in [0, 1]")

"""Static problem data for park-level integrated energy system planning.

Holds the equipment catalog, feeders, storage, tariffs, loads and horizon,
plus the investment / operation decision records and the discounting
arithmetic every other module consumes.  All types are immutable after
construction and safe to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np


class Carrier(str, Enum):
    ELECTRICITY = "electricity"
    HEAT = "heat"
    COOLING = "cooling"
    GAS = "gas"


#: carriers that appear as demands; gas is an input only
LOAD_CARRIERS: tuple[Carrier, ...] = (Carrier.ELECTRICITY, Carrier.HEAT, Carrier.COOLING)


class EquipmentKind(str, Enum):
    CCHP = "CCHP"
    GB = "GB"
    EC = "EC"


#: admissible (input, output) conversion pairs per equipment kind
_KIND_PAIRS = {
    EquipmentKind.CCHP: {
        (Carrier.GAS, Carrier.ELECTRICITY),
        (Carrier.GAS, Carrier.HEAT),
        (Carrier.GAS, Carrier.COOLING),
    },
    EquipmentKind.GB: {(Carrier.GAS, Carrier.HEAT)},
    EquipmentKind.EC: {(Carrier.ELECTRICITY, Carrier.COOLING)},
}

_KIND_INPUT = {
    EquipmentKind.CCHP: Carrier.GAS,
    EquipmentKind.GB: Carrier.GAS,
    EquipmentKind.EC: Carrier.ELECTRICITY,
}


class StorageKind(str, Enum):
    BESS = "BESS"
    TESS = "TESS"


#: which demand carrier each storage kind buffers
STORAGE_CARRIER = {StorageKind.BESS: Carrier.ELECTRICITY, StorageKind.TESS: Carrier.HEAT}

EXPLICIT_POWER = "explicit"
HALF_ENERGY_POWER = "half_energy"


@dataclass(frozen=True)
class EquipmentOption:
    """One investable conversion unit.

    ``capacity`` bounds the input-side power draw (MW); outputs are
    ``conversion[(input, output)] * input``.
    """

    id: str
    kind: EquipmentKind
    capacity: float
    conversion: Mapping[tuple[Carrier, Carrier], float]
    invest_cost: float

    @property
    def input_carrier(self) -> Carrier:
        return _KIND_INPUT[self.kind]

    def efficiency(self, output: Carrier) -> float:
        return float(self.conversion.get((self.input_carrier, output), 0.0))


@dataclass(frozen=True)
class FeederSpec:
    """One distribution line from the external substation."""

    id: str
    capacity: float
    efficiency: float = 1.0


@dataclass(frozen=True)
class StorageSpec:
    """Energy storage option (battery or thermal).

    ``power_rule`` is ``explicit`` when the power capacity is an independent
    investment (battery inverters are priced) and ``half_energy`` when the
    power limit is fixed at half the energy capacity (thermal stores).
    ``initial_soc`` is the stored-energy fraction at the first hour; it
    defaults to ``soc_min``.
    """

    kind: StorageKind
    cost_energy: float
    cost_power: float
    soc_min: float
    soc_max: float
    eta_ch: float
    eta_dis: float
    max_charge_cycles: Optional[float] = None
    power_rule: str = EXPLICIT_POWER
    initial_soc: Optional[float] = None

    @property
    def carrier(self) -> Carrier:
        return STORAGE_CARRIER[self.kind]

    @property
    def start_soc(self) -> float:
        return self.soc_min if self.initial_soc is None else self.initial_soc


@dataclass(frozen=True)
class Horizon:
    """Operational horizon made of weighted typical days.

    ``typical_day_weights`` are days-per-year occurrences and must sum to
    365; hours are split evenly across the listed days.
    """

    period: int
    typical_day_weights: tuple[float, ...]
    planning_years: int = 1
    discount_rate: float = 0.0

    @property
    def n_days(self) -> int:
        return len(self.typical_day_weights)

    @property
    def day_length(self) -> int:
        return self.period // self.n_days

    def day_of_hour(self, t: int) -> int:
        return t // self.day_length

    def day_slice(self, day: int) -> slice:
        return slice(day * self.day_length, (day + 1) * self.day_length)

    def hour_weights(self) -> np.ndarray:
        """Per-hour annualized cost weight: typical-day weight times the
        discounted sum of planning years."""
        a = annuity(self.planning_years, self.discount_rate)
        w = np.empty(self.period)
        for t in range(self.period):
            w[t] = self.typical_day_weights[self.day_of_hour(t)] * a
        return w


@dataclass(frozen=True)
class TariffSeries:
    """Hourly time-of-use prices for purchased electricity and gas."""

    elec_price: np.ndarray
    gas_price: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "elec_price", _freeze(self.elec_price))
        object.__setattr__(self, "gas_price", _freeze(self.gas_price))


@dataclass(frozen=True)
class LoadProfile:
    """Nominal hourly demand and shed penalty per demand carrier."""

    nominal: Mapping[Carrier, np.ndarray]
    shed_penalty: Mapping[Carrier, np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "nominal", {c: _freeze(v) for c, v in self.nominal.items()})
        object.__setattr__(self, "shed_penalty", {c: _freeze(v) for c, v in self.shed_penalty.items()})

    def nominal_matrix(self) -> np.ndarray:
        return np.stack([self.nominal[c] for c in LOAD_CARRIERS])


def _freeze(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PlanningInstance:
    """Full input to any planning run."""

    equipment: tuple[EquipmentOption, ...]
    feeders: tuple[FeederSpec, ...]
    storage: tuple[StorageSpec, ...]
    horizon: Horizon
    tariffs: TariffSeries
    loads: LoadProfile

    @property
    def substation_efficiency(self) -> float:
        """Conversion rate substation -> park; all feeders must agree on it."""
        return self.feeders[0].efficiency if self.feeders else 1.0

    @property
    def component_ids(self) -> tuple[str, ...]:
        """Equipment then feeders, in catalog order; fixes variable indexing."""
        return tuple(e.id for e in self.equipment) + tuple(f.id for f in self.feeders)

    def equipment_by_id(self, eid: str) -> EquipmentOption:
        for e in self.equipment:
            if e.id == eid:
                return e
        raise KeyError(eid)

    def storage_by_kind(self, kind: StorageKind) -> StorageSpec:
        for s in self.storage:
            if s.kind == kind:
                return s
        raise KeyError(kind)

    @property
    def feeder_total_capacity(self) -> float:
        return float(sum(f.capacity for f in self.feeders))


@dataclass(frozen=True)
class InvestmentDecision:
    """First-stage answer: binary builds plus continuous storage sizing."""

    build: Mapping[str, int]
    ess_energy: Mapping[StorageKind, float]
    ess_power: Mapping[StorageKind, float]

    @staticmethod
    def empty(instance: PlanningInstance) -> "InvestmentDecision":
        return InvestmentDecision(
            build={e.id: 0 for e in instance.equipment},
            ess_energy={s.kind: 0.0 for s in instance.storage},
            ess_power={s.kind: 0.0 for s in instance.storage},
        )

    def built(self, eid: str) -> int:
        return int(self.build.get(eid, 0))

    def energy(self, kind: StorageKind) -> float:
        return float(self.ess_energy.get(kind, 0.0))

    def power(self, kind: StorageKind) -> float:
        return float(self.ess_power.get(kind, 0.0))

    def invest_cost(self, instance: PlanningInstance) -> float:
        total = sum(e.invest_cost * self.built(e.id) for e in instance.equipment)
        for s in instance.storage:
            total += s.cost_energy * self.energy(s.kind) + s.cost_power * self.power(s.kind)
        return float(total)


@dataclass(frozen=True)
class ScenarioOperation:
    """Hourly dispatch for one scenario copy."""

    substation: np.ndarray
    equipment: Mapping[str, np.ndarray]
    charge: Mapping[StorageKind, np.ndarray]
    discharge: Mapping[StorageKind, np.ndarray]
    energy: Mapping[StorageKind, np.ndarray]
    charge_state: Mapping[StorageKind, np.ndarray]
    shed: Optional[Mapping[Carrier, np.ndarray]] = None

    def gas_use(self, instance: PlanningInstance) -> np.ndarray:
        total = np.zeros_like(self.substation)
        for e in instance.equipment:
            if e.input_carrier == Carrier.GAS and e.id in self.equipment:
                total = total + self.equipment[e.id]
        return total


@dataclass(frozen=True)
class OperationPlan:
    """Dispatch for the normal copy (0) and the contingency copy (1)."""

    scenario0: Optional[ScenarioOperation]
    scenario1: Optional[ScenarioOperation]


@dataclass(frozen=True)
class CostBreakdown:
    invest: float
    operate: float
    shed: float

    @property
    def total(self) -> float:
        return self.invest + self.operate + self.shed


def discount_factor(planning_years: int, discount_rate: float) -> float:
    """365 days/year summed over the planning period at the discount rate."""
    if planning_years < 1:
        raise ValueError("planning_years must be >= 1")
    if discount_rate < 0:
        raise ValueError("discount_rate must be >= 0")
    return math.fsum(365.0 / (1.0 + discount_rate) ** yr for yr in range(planning_years))


def annuity(planning_years: int, discount_rate: float) -> float:
    """Discounted year count; hour weights are typical-day weight times this."""
    return discount_factor(planning_years, discount_rate) / 365.0


def evaluate_cost(instance: PlanningInstance, decision: InvestmentDecision, plan: OperationPlan) -> CostBreakdown:
    """Price a plan: investment, weighted normal-copy energy purchases, and
    weighted contingency-copy shed penalties."""
    horizon = instance.horizon
    w = horizon.hour_weights()

    operate = 0.0
    if plan.scenario0 is not None:
        s0 = plan.scenario0
        if len(s0.substation) != horizon.period:
            raise ValueError("scenario-0 dispatch length does not match the horizon")
        gas = s0.gas_use(instance)
        operate = float(np.sum(w * (s0.substation * instance.tariffs.elec_price + gas * instance.tariffs.gas_price)))

    shed_cost = 0.0
    if plan.scenario1 is not None and plan.scenario1.shed is not None:
        for c in LOAD_CARRIERS:
            series = plan.scenario1.shed.get(c)
            if series is None:
                continue
            if len(series) != horizon.period:
                raise ValueError("shed series length does not match the horizon")
            shed_cost += float(np.sum(w * series * instance.loads.shed_penalty[c]))

    return CostBreakdown(invest=decision.invest_cost(instance), operate=operate, shed=shed_cost)


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    location: str = ""

    def __str__(self):
        loc = f" [{self.location}]" if self.location else ""
        return f"{self.code}{loc}: {self.message}"


def validate_instance(instance: PlanningInstance) -> list[Diagnostic]:
    """Check every type invariant; returns one diagnostic per violation.

    Violations are reported, never raised, so callers can collect a full
    report before rejecting an input file.
    """
    out: list[Diagnostic] = []
    h = instance.horizon

    if h.period <= 0 or h.period % 24 != 0:
        out.append(Diagnostic("HORIZON_PERIOD", f"period {h.period} is not a positive multiple of 24", "horizon"))
    if h.n_days == 0 or h.period % h.n_days != 0:
        out.append(Diagnostic("HORIZON_DAYS", "period must split evenly across typical days", "horizon"))
    if abs(sum(h.typical_day_weights) - 365.0) > 1e-9:
        out.append(Diagnostic("HORIZON_WEIGHTS", "typical-day weights must sum to 365", "horizon"))
    if h.planning_years < 1:
        out.append(Diagnostic("HORIZON_YEARS", "planning_years must be >= 1", "horizon"))
    if h.discount_rate < 0:
        out.append(Diagnostic("HORIZON_RATE", "discount_rate must be >= 0", "horizon"))

    seen_ids: set[str] = set()
    for e in instance.equipment:
        loc = f"equipment/{e.id}"
        if e.id in seen_ids:
            out.append(Diagnostic("DUPLICATE_ID", "identifier reused", loc))
        seen_ids.add(e.id)
        if e.capacity <= 0:
            out.append(Diagnostic("EQUIP_CAPACITY", "capacity must be > 0", loc))
        if e.invest_cost < 0:
            out.append(Diagnostic("EQUIP_COST", "invest_cost must be >= 0", loc))
        allowed = _KIND_PAIRS[e.kind]
        for pair, eff in e.conversion.items():
            if pair not in allowed:
                out.append(Diagnostic("EQUIP_CONVERSION_PAIRS", f"conversion {pair[0].value}->{pair[1].value} not valid for {e.kind.value}", loc))
            if not (0.0 < eff <= 2.0):
                out.append(Diagnostic("EQUIP_EFFICIENCY", f"efficiency {eff} outside (0, 2]", loc))
        if not e.conversion:
            out.append(Diagnostic("EQUIP_CONVERSION_PAIRS", "no conversion pairs given", loc))

    for f in instance.feeders:
        loc = f"feeders/{f.id}"
        if f.id in seen_ids:
            out.append(Diagnostic("DUPLICATE_ID", "identifier reused", loc))
        seen_ids.add(f.id)
        if f.capacity <= 0:
            out.append(Diagnostic("FEEDER_CAPACITY", "capacity must be > 0", loc))
        if not (0.0 < f.efficiency <= 1.0):
            out.append(Diagnostic("FEEDER_EFFICIENCY", "efficiency outside (0, 1]", loc))
    if len({f.efficiency for f in instance.feeders}) > 1:
        out.append(Diagnostic("FEEDER_EFFICIENCY_MIXED", "all feeders must share the substation conversion rate", "feeders"))

    kinds_seen: set[StorageKind] = set()
    for s in instance.storage:
        loc = f"storage/{s.kind.value}"
        if s.kind in kinds_seen:
            out.append(Diagnostic("DUPLICATE_ID", "storage kind repeated", loc))
        kinds_seen.add(s.kind)
        if not (0.0 <= s.soc_min < s.soc_max <= 1.0):
            out.append(Diagnostic("STORAGE_SOC_ORDER", f"need 0 <= soc_min < soc_max <= 1, got [{s.soc_min}, {s.soc_max}]", loc))
        if not (0.0 < s.eta_ch <= 1.0 and 0.0 < s.eta_dis <= 1.0 and s.eta_ch * s.eta_dis <= 1.0):
            out.append(Diagnostic("STORAGE_EFFICIENCY", "charge/discharge efficiencies must lie in (0, 1]", loc))
        if s.kind == StorageKind.BESS and s.max_charge_cycles is not None and s.max_charge_cycles <= 0:
            out.append(Diagnostic("STORAGE_CYCLES", "max_charge_cycles must be > 0 when present", loc))
        if s.initial_soc is not None and not (0.0 <= s.initial_soc <= 1.0):
            out.append(Diagnostic("STORAGE_INITIAL_SOC", "initial_soc must lie in [0, 1]", loc))
        if s.power_rule not in (EXPLICIT_POWER, HALF_ENERGY_POWER):
            out.append(Diagnostic("STORAGE_POWER_RULE", f"unknown power rule {s.power_rule!r}", loc))
        if s.cost_energy < 0 or s.cost_power < 0:
            out.append(Diagnostic("STORAGE_COST", "storage costs must be >= 0", loc))

    for name, series in (("electricity", instance.tariffs.elec_price), ("gas", instance.tariffs.gas_price)):
        if len(series) != h.period:
            out.append(Diagnostic("TARIFF_LENGTH", f"{name} tariff length {len(series)} != period {h.period}", "tariffs"))
        elif np.any(series < 0):
            out.append(Diagnostic("TARIFF_SIGN", f"{name} tariff has negative entries", "tariffs"))

    price_ceiling = None
    if len(instance.tariffs.elec_price) == h.period and len(instance.tariffs.gas_price) == h.period:
        price_ceiling = np.maximum(instance.tariffs.elec_price, instance.tariffs.gas_price)

    for c in LOAD_CARRIERS:
        loc = f"loads/{c.value}"
        nominal = instance.loads.nominal.get(c)
        penalty = instance.loads.shed_penalty.get(c)
        if nominal is None or penalty is None:
            out.append(Diagnostic("LOAD_MISSING", "nominal and shed_penalty required for every demand carrier", loc))
            continue
        if len(nominal) != h.period or len(penalty) != h.period:
            out.append(Diagnostic("LOAD_LENGTH", "load series length does not match the period", loc))
            continue
        if np.any(nominal < 0):
            out.append(Diagnostic("LOAD_SIGN", "nominal load has negative entries", loc))
        if price_ceiling is not None and np.any(penalty <= price_ceiling):
            out.append(Diagnostic("PENALTY_DOMINANCE", "shed penalty must exceed every purchase price at every hour", loc))

    return out

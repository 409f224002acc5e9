"""Sequential Monte-Carlo reliability assessment of a fixed plan.

Synthesizes chronological years by tiling the typical days according to
their weights, samples two-state component availability and normally
fluctuating loads, dispatches each day with shedding minimized first, and
aggregates expected energy not supplied, loss-of-load expectation, and
loss-of-load frequency per demand carrier.

Years use per-stream substreams keyed on (seed, year, stream), so paired
runs of two plans see identical failure and load histories and the
aggregation order never changes the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .dispatch import min_shed_dispatch
from .model import (
    LOAD_CARRIERS,
    Carrier,
    EquipmentKind,
    Horizon,
    InvestmentDecision,
    LoadProfile,
    PlanningInstance,
    StorageKind,
    TariffSeries,
)
from .solver import SolveOptions

SHED_TOLERANCE_MW = 1e-6


@dataclass(frozen=True)
class TwoStateModel:
    """Markov availability model: per-hour failure and repair intensities."""

    failure_rate: float
    repair_rate: float

    def __post_init__(self):
        if self.failure_rate < 0 or self.repair_rate <= 0:
            raise ValueError("need failure_rate >= 0 and repair_rate > 0")

    @property
    def unavailability(self) -> float:
        return self.failure_rate / (self.failure_rate + self.repair_rate)


@dataclass(frozen=True)
class LoadFluctuationModel:
    """Relative normal fluctuation per demand carrier (e.g. 0.05 for +/-5%)."""

    sigma: Mapping[Carrier, float]

    def of(self, carrier: Carrier) -> float:
        return float(self.sigma.get(carrier, 0.0))


@dataclass(frozen=True)
class ReliabilityModels:
    components: Mapping[str, TwoStateModel]
    loads: LoadFluctuationModel


@dataclass
class ReliabilityIndices:
    """Per-carrier annual indices with 95% confidence half-widths."""

    eens: dict[Carrier, float]
    lole: dict[Carrier, float]
    lolf: dict[Carrier, float]
    eens_ci: dict[Carrier, float]
    lole_ci: dict[Carrier, float]
    lolf_ci: dict[Carrier, float]
    years: int
    seed: int

    def rows(self) -> list[tuple[str, str, float, float]]:
        out = []
        for c in LOAD_CARRIERS:
            out.append((c.value, "EENS", self.eens[c], self.eens_ci[c]))
            out.append((c.value, "LOLE", self.lole[c], self.lole_ci[c]))
            out.append((c.value, "LOLF", self.lolf[c], self.lolf_ci[c]))
        return out


def sample_availability(model: TwoStateModel, hours: int, rng: np.random.Generator) -> np.ndarray:
    """One 0/1 availability path starting in the up state.

    Equivalent to an hourly Bernoulli chain with transition probabilities
    1 - exp(-rate); sampled as alternating geometric dwell times so quiet
    components cost almost nothing.
    """
    state = np.ones(hours, dtype=np.int8)
    if model.failure_rate <= 0.0 or hours == 0:
        return state
    p_fail = 1.0 - math.exp(-model.failure_rate)
    p_repair = 1.0 - math.exp(-model.repair_rate)
    pos = 0
    while pos < hours:
        up = int(rng.geometric(p_fail))
        pos += up
        if pos >= hours:
            break
        down = int(rng.geometric(p_repair))
        state[pos : min(pos + down, hours)] = 0
        pos += down
    return state


def sample_loads(nominal: np.ndarray, fluctuation: LoadFluctuationModel, rng_by_carrier: Mapping[Carrier, np.random.Generator]) -> np.ndarray:
    """Multiplicative normal perturbation of a (carrier, hour) profile, truncated at zero."""
    out = np.empty_like(nominal)
    for i, c in enumerate(LOAD_CARRIERS):
        sigma = fluctuation.of(c)
        if sigma <= 0.0:
            out[i] = nominal[i]
            continue
        noise = rng_by_carrier[c].standard_normal(nominal.shape[1])
        out[i] = np.maximum(0.0, nominal[i] * (1.0 + sigma * noise))
    return out


def year_day_sequence(horizon: Horizon) -> list[int]:
    """Typical-day index per calendar day, apportioned by weight to 365 days."""
    weights = np.asarray(horizon.typical_day_weights, dtype=float)
    raw = weights / weights.sum() * 365.0
    counts = np.floor(raw).astype(int)
    remainder = 365 - int(counts.sum())
    order = np.argsort(-(raw - counts))
    for i in range(remainder):
        counts[order[i % len(counts)]] += 1
    seq: list[int] = []
    for day, n in enumerate(counts):
        seq.extend([day] * int(n))
    return seq


def _day_instance(instance: PlanningInstance, day: int) -> PlanningInstance:
    """One-typical-day slice of the instance for daily dispatch.

    The cycle budget is a fleet-wear investment constraint, not an hourly
    operating limit, so it is dropped inside the simulation.
    """
    sl = instance.horizon.day_slice(day)
    horizon = Horizon(
        period=instance.horizon.day_length,
        typical_day_weights=(365.0,),
        planning_years=1,
        discount_rate=0.0,
    )
    tariffs = TariffSeries(instance.tariffs.elec_price[sl], instance.tariffs.gas_price[sl])
    loads = LoadProfile(
        nominal={c: instance.loads.nominal[c][sl] for c in LOAD_CARRIERS},
        shed_penalty={c: instance.loads.shed_penalty[c][sl] for c in LOAD_CARRIERS},
    )
    storage = tuple(replace(s, max_charge_cycles=None) for s in instance.storage)
    return PlanningInstance(
        equipment=instance.equipment,
        feeders=instance.feeders,
        storage=storage,
        horizon=horizon,
        tariffs=tariffs,
        loads=loads,
    )


def _static_capacity(instance: PlanningInstance, decision: InvestmentDecision) -> dict[Carrier, float]:
    """Conservative all-up supply capability per carrier, storage ignored.

    Electric chillers are assumed to draw their full rating, so a day that
    passes this screen cannot shed under any dispatch."""
    heat = 0.0
    cool = 0.0
    elec = instance.substation_efficiency * instance.feeder_total_capacity
    for e in instance.equipment:
        if not decision.built(e.id):
            continue
        heat += e.efficiency(Carrier.HEAT) * e.capacity
        cool += e.efficiency(Carrier.COOLING) * e.capacity
        elec += e.efficiency(Carrier.ELECTRICITY) * e.capacity
        if e.kind == EquipmentKind.EC:
            elec -= e.capacity
    return {Carrier.ELECTRICITY: elec, Carrier.HEAT: heat, Carrier.COOLING: cool}


def _rng(seed: int, year: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(year), int(stream)]))


def assess(
    decision: InvestmentDecision,
    instance: PlanningInstance,
    models: ReliabilityModels,
    years: int = 500,
    seed: int = 0,
    *,
    shed_tolerance: float = SHED_TOLERANCE_MW,
    options: SolveOptions | None = None,
) -> ReliabilityIndices:
    """Simulate the plan for the given number of years and aggregate indices.

    Days with every built component up and loads inside the static capacity
    screen cannot shed and are skipped (storage idles through them); all
    other days run the shedding-minimizing dispatch with the storage state
    carried across days.
    """
    options = options or SolveOptions(rel_gap=1e-6)
    horizon = instance.horizon
    day_len = horizon.day_length
    day_seq = year_day_sequence(horizon)
    n_days = len(day_seq)
    year_hours = n_days * day_len
    comps = instance.component_ids

    day_instances = {d: _day_instance(instance, d) for d in set(day_seq)}
    caps = _static_capacity(instance, decision)
    nominal_by_day = {d: instance.loads.nominal_matrix()[:, horizon.day_slice(d)] for d in set(day_seq)}

    active_idx = [
        i
        for i, cid in enumerate(comps)
        if (cid in {f.id for f in instance.feeders}) or decision.built(cid)
    ]

    eens_y = {c: np.zeros(years) for c in LOAD_CARRIERS}
    lole_y = {c: np.zeros(years) for c in LOAD_CARRIERS}
    lolf_y = {c: np.zeros(years) for c in LOAD_CARRIERS}

    for year in range(years):
        availability = np.ones((len(comps), year_hours), dtype=np.int8)
        for i, cid in enumerate(comps):
            model = models.components.get(cid)
            if model is None:
                continue
            availability[i] = sample_availability(model, year_hours, _rng(seed, year, i))

        nominal_year = np.concatenate([nominal_by_day[d] for d in day_seq], axis=1)
        load_rngs = {c: _rng(seed, year, 1000 + k) for k, c in enumerate(LOAD_CARRIERS)}
        loads_year = sample_loads(nominal_year, models.loads, load_rngs)

        shed_year = {c: np.zeros(year_hours) for c in LOAD_CARRIERS}
        soc = {s.kind: s.start_soc * decision.energy(s.kind) for s in instance.storage}

        for d in range(n_days):
            sl = slice(d * day_len, (d + 1) * day_len)
            day_states = availability[:, sl]
            day_loads = loads_year[:, sl]

            all_up = bool(day_states[active_idx].all()) if active_idx else True
            within_caps = all(float(day_loads[i].max(initial=0.0)) <= caps[c] + 1e-9 for i, c in enumerate(LOAD_CARRIERS))
            if all_up and within_caps:
                continue  # cannot shed; storage idles, state carries over unchanged

            day_inst = day_instances[day_seq[d]]
            result = min_shed_dispatch(
                day_inst,
                decision,
                day_loads,
                day_states.astype(float),
                normal_copy=False,
                initial_energy=dict(soc),
                options=options,
            )
            if not result.feasible:
                raise RuntimeError("daily dispatch infeasible; the contingency copy should always shed instead")
            for i, c in enumerate(LOAD_CARRIERS):
                shed_year[c][sl] = result.shed[c]
            for kind, value in result.final_energy.items():
                cap = decision.energy(kind)
                soc[kind] = min(max(value, 0.0), cap if cap > 0 else 0.0)

        for c in LOAD_CARRIERS:
            shed = shed_year[c]
            positive = shed > shed_tolerance
            eens_y[c][year] = float(shed[positive].sum())
            lole_y[c][year] = float(positive.sum())
            lolf_y[c][year] = float(np.count_nonzero(np.diff(np.concatenate(([0], positive.astype(np.int8)))) == 1))

    def mean_ci(arr: np.ndarray) -> tuple[float, float]:
        mean = float(arr.mean())
        if years > 1:
            half = 1.96 * float(arr.std(ddof=1)) / math.sqrt(years)
        else:
            half = 0.0
        return mean, half

    eens, lole, lolf = {}, {}, {}
    eens_ci, lole_ci, lolf_ci = {}, {}, {}
    for c in LOAD_CARRIERS:
        eens[c], eens_ci[c] = mean_ci(eens_y[c])
        lole[c], lole_ci[c] = mean_ci(lole_y[c])
        lolf[c], lolf_ci[c] = mean_ci(lolf_y[c])

    return ReliabilityIndices(eens, lole, lolf, eens_ci, lole_ci, lolf_ci, years, seed)

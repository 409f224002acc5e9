"""Energy-hub constraint and objective blocks.

One block builder emits the hourly dispatch model of the park for either the
normal copy (scenario 0, no shedding, banded storage state of charge) or the
contingency copy (scenario 1, shedding allowed, storage usable over its full
energy range).  Investment, loads, operating states and storage charge flags
can each be fixed numbers or model expressions, so the same code serves the
deterministic planner, the master problem cuts, the recourse subproblems,
the dual reformulations and the Monte-Carlo hourly dispatch.

Conventions: equipment variables measure input-side power draw, outputs are
conversion-efficiency times input; balances are inequalities (supply may
exceed demand, excess is implicitly priced through fuel cost).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .model import (
    HALF_ENERGY_POWER,
    LOAD_CARRIERS,
    Carrier,
    CostBreakdown,
    EquipmentOption,
    InvestmentDecision,
    OperationPlan,
    PlanningInstance,
    ScenarioOperation,
    StorageKind,
    evaluate_cost,
)
from .solver import (
    BINARY,
    EQ,
    GE,
    INFEASIBLE,
    LE,
    MINIMIZE,
    OPTIMAL,
    LinExpr,
    ModelBuilder,
    SolveOptions,
    SolveResult,
    VariableHandle,
    lsum,
    solve,
)

ExprLike = LinExpr | VariableHandle | float


def _expr(value: ExprLike) -> LinExpr:
    return LinExpr.coerce(value)


def _scaled(factor: float, value: ExprLike) -> LinExpr:
    return _expr(value) * factor


def charge_big_m(instance: PlanningInstance) -> float:
    """Bound on any plausible storage power: total import plus generation capacity."""
    return float(instance.feeder_total_capacity + sum(e.capacity for e in instance.equipment)) or 1.0


@dataclass(frozen=True)
class InvestTerms:
    """Investment quantities as they enter a block: numbers or expressions."""

    equip: Mapping[str, ExprLike]
    energy: Mapping[StorageKind, ExprLike]
    power: Mapping[StorageKind, ExprLike]

    @staticmethod
    def fixed(instance: PlanningInstance, decision: InvestmentDecision) -> "InvestTerms":
        return InvestTerms(
            equip={e.id: float(decision.built(e.id)) for e in instance.equipment},
            energy={s.kind: decision.energy(s.kind) for s in instance.storage},
            power={s.kind: decision.power(s.kind) for s in instance.storage},
        )

    @staticmethod
    def variables(mb: ModelBuilder, instance: PlanningInstance) -> "InvestTerms":
        """Create first-stage handles: binary builds, storage sizing with
        energy >= power, thermal stores powered at half their energy capacity."""
        equip = {e.id: mb.add_variable(f"X[{e.id}]", BINARY) for e in instance.equipment}
        energy: dict[StorageKind, ExprLike] = {}
        power: dict[StorageKind, ExprLike] = {}
        for s in instance.storage:
            xe = mb.add_variable(f"XE[{s.kind.value}]", lb=0.0)
            energy[s.kind] = xe
            if s.power_rule == HALF_ENERGY_POWER:
                power[s.kind] = _expr(xe) * 0.5
            else:
                xp = mb.add_variable(f"XP[{s.kind.value}]", lb=0.0)
                mb.add_constraint(_expr(xe) - xp, GE, 0.0, name=f"xset[{s.kind.value}]", tag=("x_set", s.kind.value))
                power[s.kind] = xp
        return InvestTerms(equip=equip, energy=energy, power=power)

    def extract(self, instance: PlanningInstance, result: SolveResult) -> InvestmentDecision:
        build = {eid: int(round(result.value_expr(_expr(v)))) for eid, v in self.equip.items()}
        energy = {k: max(0.0, result.value_expr(_expr(v))) for k, v in self.energy.items()}
        power = {k: max(0.0, result.value_expr(_expr(v))) for k, v in self.power.items()}
        return InvestmentDecision(build=build, ess_energy=energy, ess_power=power)

    def cost_expr(self, instance: PlanningInstance) -> LinExpr:
        total = LinExpr()
        for e in instance.equipment:
            total = total + _scaled(e.invest_cost, self.equip[e.id])
        for s in instance.storage:
            total = total + _scaled(s.cost_energy, self.energy[s.kind]) + _scaled(s.cost_power, self.power[s.kind])
        return total


LoadsLike = np.ndarray | Mapping[Carrier, np.ndarray] | Callable[[Carrier, int], ExprLike]
StatesLike = Optional[np.ndarray | Mapping[str, np.ndarray] | Callable[[str, int], ExprLike]]


def _load_fn(instance: PlanningInstance, loads: LoadsLike) -> Callable[[Carrier, int], LinExpr]:
    if callable(loads):
        return lambda c, t: _expr(loads(c, t))
    if isinstance(loads, np.ndarray):
        mat = loads
        return lambda c, t: _expr(float(mat[LOAD_CARRIERS.index(c), t]))
    mapping = loads
    return lambda c, t: _expr(float(mapping[c][t]))


def _state_fn(instance: PlanningInstance, states: StatesLike) -> Callable[[str, int], LinExpr]:
    if states is None:
        return lambda cid, t: _expr(1.0)
    if callable(states):
        return lambda cid, t: _expr(states(cid, t))
    if isinstance(states, np.ndarray):
        ids = instance.component_ids
        mat = states
        return lambda cid, t: _expr(float(mat[ids.index(cid), t]))
    mapping = states
    return lambda cid, t: _expr(float(mapping[cid][t]))


@dataclass(frozen=True)
class FormulationMode:
    """How the exogenous quantities enter a scenario block.

    The normal copy never sheds; the contingency copy always may.  ``states``
    applies to the contingency copy only.  ``z_fixed`` freezes the charge
    flags (used when dualizing the inner dispatch for a known recourse);
    otherwise binary charge-state variables are created.
    """

    invest: InvestTerms
    loads: LoadsLike
    states: StatesLike = None
    allow_shed: bool = False
    z_fixed: Optional[Mapping[StorageKind, np.ndarray]] = None
    cyclic_soc: bool = False
    initial_energy: Optional[Mapping[StorageKind, float]] = None


@dataclass
class ConstraintBlock:
    """Handles created for one scenario copy, plus bookkeeping for big-M work."""

    scenario: int
    substation: list[VariableHandle]
    equipment: dict[str, list[VariableHandle]]
    charge: dict[StorageKind, list[VariableHandle]]
    discharge: dict[StorageKind, list[VariableHandle]]
    energy: dict[StorageKind, list[VariableHandle]]
    z_charge: dict[StorageKind, list[VariableHandle]]
    shed: dict[Carrier, list[VariableHandle]]
    var_ub: dict[VariableHandle, float]

    def primal_handles(self) -> list[VariableHandle]:
        out = list(self.substation)
        for hs in self.equipment.values():
            out.extend(hs)
        for group in (self.charge, self.discharge, self.energy):
            for hs in group.values():
                out.extend(hs)
        for hs in self.shed.values():
            out.extend(hs)
        return out


def build_scenario0_block(mb: ModelBuilder, mode: FormulationMode, instance: PlanningInstance, tag: object = 0) -> ConstraintBlock:
    """Normal-operation copy: balances without shedding, storage kept inside
    its state-of-charge band, charge throughput capped by the cycle budget."""
    if mode.allow_shed:
        raise ValueError("the normal copy does not shed load")
    return _build_block(mb, mode, instance, scenario=0, tag=tag)


def build_scenario1_block(mb: ModelBuilder, mode: FormulationMode, instance: PlanningInstance, tag: object = 0) -> ConstraintBlock:
    """Contingency copy: failed components produce nothing, shedding closes
    the balances, and storage may sweep its full energy range."""
    if not mode.allow_shed:
        raise ValueError("the contingency copy must allow shedding")
    return _build_block(mb, mode, instance, scenario=1, tag=tag)


def _build_block(mb: ModelBuilder, mode: FormulationMode, instance: PlanningInstance, scenario: int, tag: object) -> ConstraintBlock:
    T = instance.horizon.period
    load_of = _load_fn(instance, mode.loads)
    state_of = _state_fn(instance, mode.states if scenario == 1 else None)
    big_m = charge_big_m(instance)
    sc = scenario

    var_ub: dict[VariableHandle, float] = {}

    def reg(handle: VariableHandle, ub: float) -> VariableHandle:
        var_ub[handle] = ub
        return handle

    feeder_cap = instance.feeder_total_capacity
    substation = [reg(mb.add_variable(f"Psub[{sc},{t},{tag}]"), feeder_cap) for t in range(T)]
    equipment = {
        e.id: [reg(mb.add_variable(f"P[{e.id},{sc},{t},{tag}]"), e.capacity) for t in range(T)]
        for e in instance.equipment
    }

    charge: dict[StorageKind, list[VariableHandle]] = {}
    discharge: dict[StorageKind, list[VariableHandle]] = {}
    energy: dict[StorageKind, list[VariableHandle]] = {}
    z_charge: dict[StorageKind, list[VariableHandle]] = {}
    for s in instance.storage:
        k = s.kind
        xe = mode.invest.energy[k]
        xp = mode.invest.power[k]
        power_cap = _expr(xp).const if not _expr(xp).terms else big_m
        energy_cap = _expr(xe).const if not _expr(xe).terms else big_m
        charge[k] = [reg(mb.add_variable(f"Pch[{k.value},{sc},{t},{tag}]"), power_cap) for t in range(T)]
        discharge[k] = [reg(mb.add_variable(f"Pdis[{k.value},{sc},{t},{tag}]"), power_cap) for t in range(T)]
        energy[k] = [reg(mb.add_variable(f"E[{k.value},{sc},{t},{tag}]"), energy_cap) for t in range(T)]
        if mode.z_fixed is None:
            z_charge[k] = [mb.add_variable(f"Z[{k.value},{sc},{t},{tag}]", BINARY) for t in range(T)]

    shed: dict[Carrier, list[VariableHandle]] = {}
    if scenario == 1:
        for c in LOAD_CARRIERS:
            shed[c] = []
            for t in range(T):
                le = load_of(c, t)
                ub = le.const + sum(max(v, 0.0) for v in le.terms.values())
                shed[c].append(reg(mb.add_variable(f"shed[{c.value},{t},{tag}]"), ub))

    sub_eff = instance.substation_efficiency

    # hourly supply-demand balances (>= demand)
    for t in range(T):
        supply: dict[Carrier, LinExpr] = {c: LinExpr() for c in LOAD_CARRIERS}
        supply[Carrier.ELECTRICITY] = supply[Carrier.ELECTRICITY] + _expr(substation[t]) * sub_eff
        for e in instance.equipment:
            p = equipment[e.id][t]
            for out_c in LOAD_CARRIERS:
                eff = e.efficiency(out_c)
                if eff:
                    supply[out_c] = supply[out_c] + _expr(p) * eff
            if e.input_carrier in LOAD_CARRIERS:
                supply[e.input_carrier] = supply[e.input_carrier] - p
        for s in instance.storage:
            k = s.kind
            supply[s.carrier] = supply[s.carrier] - charge[k][t] + discharge[k][t]
        for c in LOAD_CARRIERS:
            expr = supply[c]
            if scenario == 1:
                expr = expr + shed[c][t]
            mb.add_constraint(expr - load_of(c, t), GE, 0.0, name=f"bal[{c.value},{sc},{t},{tag}]", tag=("bal", sc, c.value, t))

    # capacity limits scaled by investment and, in the contingency copy, by operating state
    for e in instance.equipment:
        x = mode.invest.equip[e.id]
        for t in range(T):
            cap = _scaled(e.capacity, x)
            if scenario == 1:
                st = state_of(e.id, t)
                if st.terms and _expr(x).terms:
                    raise ValueError("operating state and investment cannot both be symbolic")
                cap = _scaled(e.capacity * (_expr(x).const if not _expr(x).terms else 1.0), st) if st.terms else cap * st.const
            mb.add_constraint(_expr(equipment[e.id][t]) - cap, LE, 0.0, name=f"cap[{e.id},{sc},{t},{tag}]", tag=("eq_cap", sc, e.id, t))

    for t in range(T):
        if scenario == 1:
            cap_expr = lsum(_scaled(f.capacity, state_of(f.id, t)) for f in instance.feeders)
        else:
            cap_expr = _expr(feeder_cap)
        mb.add_constraint(_expr(substation[t]) - cap_expr, LE, 0.0, name=f"sub[{sc},{t},{tag}]", tag=("sub_cap", sc, t))

    # storage block: cycle budget, state-of-charge limits, charge/discharge caps, energy recursion
    for s in instance.storage:
        k = s.kind
        xe, xp = mode.invest.energy[k], mode.invest.power[k]

        if s.max_charge_cycles is not None:
            mb.add_constraint(lsum(charge[k]) - _scaled(s.max_charge_cycles, xe), LE, 0.0, name=f"cycle[{k.value},{sc},{tag}]", tag=("cycle", sc, k.value))

        for t in range(T):
            if scenario == 0:
                mb.add_constraint(_expr(energy[k][t]) - _scaled(s.soc_min, xe), GE, 0.0, name=f"soclo[{k.value},{t},{tag}]", tag=("soc_lo", sc, k.value, t))
                mb.add_constraint(_expr(energy[k][t]) - _scaled(s.soc_max, xe), LE, 0.0, name=f"sochi[{k.value},{t},{tag}]", tag=("soc_hi", sc, k.value, t))
            else:
                mb.add_constraint(_expr(energy[k][t]) - _expr(xe), LE, 0.0, name=f"ecap[{k.value},{t},{tag}]", tag=("e_cap", sc, k.value, t))

            if mode.z_fixed is not None:
                zt = float(mode.z_fixed[k][t])
                mb.add_constraint(_expr(charge[k][t]) - _scaled(zt, xp), LE, 0.0, name=f"chcap[{k.value},{sc},{t},{tag}]", tag=("ch_cap", sc, k.value, t))
                mb.add_constraint(_expr(discharge[k][t]) - _scaled(1.0 - zt, xp), LE, 0.0, name=f"discap[{k.value},{sc},{t},{tag}]", tag=("dis_cap", sc, k.value, t))
            else:
                z = z_charge[k][t]
                mb.add_constraint(_expr(charge[k][t]) - _expr(z) * big_m, LE, 0.0, name=f"chM[{k.value},{sc},{t},{tag}]", tag=("ch_bigm", sc, k.value, t))
                mb.add_constraint(_expr(discharge[k][t]) + _expr(z) * big_m, LE, big_m, name=f"disM[{k.value},{sc},{t},{tag}]", tag=("dis_bigm", sc, k.value, t))
                mb.add_constraint(_expr(charge[k][t]) - _expr(xp), LE, 0.0, name=f"chcap[{k.value},{sc},{t},{tag}]", tag=("ch_cap", sc, k.value, t))
                mb.add_constraint(_expr(discharge[k][t]) - _expr(xp), LE, 0.0, name=f"discap[{k.value},{sc},{t},{tag}]", tag=("dis_cap", sc, k.value, t))

        if mode.initial_energy is not None and k in mode.initial_energy:
            init = _expr(float(mode.initial_energy[k]))
        else:
            init = _scaled(s.start_soc, xe)
        mb.add_constraint(_expr(energy[k][0]) - init, EQ, 0.0, name=f"einit[{k.value},{sc},{tag}]", tag=("e_init", sc, k.value))
        for t in range(1, T):
            step = _expr(energy[k][t]) - energy[k][t - 1] - _expr(charge[k][t - 1]) * s.eta_ch + _expr(discharge[k][t - 1]) * (1.0 / s.eta_dis)
            mb.add_constraint(step, EQ, 0.0, name=f"ebal[{k.value},{sc},{t},{tag}]", tag=("e_bal", sc, k.value, t))
        if mode.cyclic_soc:
            wrap = _expr(energy[k][T - 1]) + _expr(charge[k][T - 1]) * s.eta_ch - _expr(discharge[k][T - 1]) * (1.0 / s.eta_dis) - energy[k][0]
            mb.add_constraint(wrap, EQ, 0.0, name=f"ecyc[{k.value},{sc},{tag}]", tag=("e_cyc", sc, k.value))

    return ConstraintBlock(
        scenario=scenario,
        substation=substation,
        equipment=equipment,
        charge=charge,
        discharge=discharge,
        energy=energy,
        z_charge=z_charge,
        shed=shed,
        var_ub=var_ub,
    )


def objective_terms(instance: PlanningInstance, invest: InvestTerms | None = None, block0: ConstraintBlock | None = None, block1: ConstraintBlock | None = None) -> dict[str, LinExpr]:
    """Investment, weighted purchase, and weighted shed-penalty expressions."""
    w = instance.horizon.hour_weights()
    out: dict[str, LinExpr] = {}
    out["f_inv"] = invest.cost_expr(instance) if invest is not None else LinExpr()

    f_ope = LinExpr()
    if block0 is not None:
        for t in range(instance.horizon.period):
            f_ope = f_ope + _expr(block0.substation[t]) * (w[t] * instance.tariffs.elec_price[t])
            for e in instance.equipment:
                if e.input_carrier == Carrier.GAS:
                    f_ope = f_ope + _expr(block0.equipment[e.id][t]) * (w[t] * instance.tariffs.gas_price[t])
    out["f_ope0"] = f_ope

    f_shed = LinExpr()
    if block1 is not None and block1.shed:
        for c in LOAD_CARRIERS:
            pen = instance.loads.shed_penalty[c]
            for t in range(instance.horizon.period):
                f_shed = f_shed + _expr(block1.shed[c][t]) * (w[t] * pen[t])
    out["f_shed1"] = f_shed
    return out


def fuel_cost_expr(instance: PlanningInstance, block: ConstraintBlock) -> LinExpr:
    """Weighted purchase cost of an arbitrary copy (used as a tie-breaker
    when only shedding is priced)."""
    w = instance.horizon.hour_weights()
    expr = LinExpr()
    for t in range(instance.horizon.period):
        expr = expr + _expr(block.substation[t]) * (w[t] * instance.tariffs.elec_price[t])
        for e in instance.equipment:
            if e.input_carrier == Carrier.GAS:
                expr = expr + _expr(block.equipment[e.id][t]) * (w[t] * instance.tariffs.gas_price[t])
    return expr


def extract_operation(instance: PlanningInstance, block: ConstraintBlock, result: SolveResult, z_fixed: Optional[Mapping[StorageKind, np.ndarray]] = None) -> ScenarioOperation:
    T = instance.horizon.period

    def series(handles) -> np.ndarray:
        return np.array([result.value(h) for h in handles])

    zs: dict[StorageKind, np.ndarray] = {}
    for s in instance.storage:
        k = s.kind
        if block.z_charge.get(k):
            zs[k] = np.array([round(result.value(h)) for h in block.z_charge[k]], dtype=float)
        elif z_fixed is not None:
            zs[k] = np.asarray(z_fixed[k], dtype=float)
        else:
            zs[k] = np.zeros(T)

    return ScenarioOperation(
        substation=series(block.substation),
        equipment={eid: series(hs) for eid, hs in block.equipment.items()},
        charge={k: series(hs) for k, hs in block.charge.items()},
        discharge={k: series(hs) for k, hs in block.discharge.items()},
        energy={k: series(hs) for k, hs in block.energy.items()},
        charge_state=zs,
        shed={c: series(hs) for c, hs in block.shed.items()} if block.shed else None,
    )


@dataclass
class DispatchResult:
    feasible: bool
    objective: float
    plan: Optional[OperationPlan]
    shed: Optional[Mapping[Carrier, np.ndarray]]
    cost: Optional[CostBreakdown]
    final_energy: dict[StorageKind, float]


def min_shed_dispatch(
    instance: PlanningInstance,
    decision: InvestmentDecision,
    load_series: np.ndarray,
    state_series: Optional[np.ndarray] = None,
    *,
    normal_copy: bool = True,
    initial_energy: Optional[Mapping[StorageKind, float]] = None,
    options: SolveOptions | None = None,
) -> DispatchResult:
    """Cost-optimal dispatch against fixed loads and operating states.

    With ``normal_copy`` the model carries both copies and the objective is
    normal-copy purchases plus contingency-copy shed penalty, which is the
    per-scenario value the worst-case search optimizes.  Without it only the
    contingency copy is built and its own fuel cost joins the objective as a
    tie-breaker; penalty dominance then makes the dispatch shed-minimal
    first, which is the behavior the reliability simulation needs.
    """
    mb = ModelBuilder()
    invest = InvestTerms.fixed(instance, decision)

    block0 = None
    if normal_copy:
        mode0 = FormulationMode(invest=invest, loads=load_series, allow_shed=False, initial_energy=initial_energy)
        block0 = build_scenario0_block(mb, mode0, instance)
    mode1 = FormulationMode(invest=invest, loads=load_series, states=state_series, allow_shed=True, initial_energy=initial_energy)
    block1 = build_scenario1_block(mb, mode1, instance)

    terms = objective_terms(instance, invest=None, block0=block0, block1=block1)
    objective = terms["f_ope0"] + terms["f_shed1"]
    if not normal_copy:
        objective = objective + fuel_cost_expr(instance, block1)
    mb.set_objective(objective, MINIMIZE)

    result = solve(mb.build(), options or SolveOptions(rel_gap=1e-9))
    if result.status == INFEASIBLE:
        return DispatchResult(False, math.inf, None, None, None, {})
    if result.status != OPTIMAL:
        raise RuntimeError(f"dispatch solve ended with status {result.status}: {result.message}")

    op0 = extract_operation(instance, block0, result) if block0 is not None else None
    op1 = extract_operation(instance, block1, result)
    plan = OperationPlan(scenario0=op0, scenario1=op1)
    cost = evaluate_cost(instance, decision, plan)

    final_energy: dict[StorageKind, float] = {}
    for s in instance.storage:
        k = s.kind
        if k in op1.energy and len(op1.energy[k]):
            final_energy[k] = float(
                op1.energy[k][-1] + s.eta_ch * op1.charge[k][-1] - op1.discharge[k][-1] / s.eta_dis
            )

    value = terms["f_ope0"].const + sum(c * result.value(h) for h, c in terms["f_ope0"].terms.items())
    value += terms["f_shed1"].const + sum(c * result.value(h) for h, c in terms["f_shed1"].terms.items())
    return DispatchResult(True, float(value), plan, op1.shed, cost, final_energy)

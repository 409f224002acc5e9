"""Outer planning loop and baseline planners.

The robust planner alternates a master problem (pick investments against all
scenarios cut so far, yielding a lower bound) with the worst-case search of
:mod:`iesplan.inner` (price the candidate plan against the full uncertainty
set, yielding an upper bound and the next scenario to cut).  Deterministic
and single-outage-secure baselines share the same block builders.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dispatch import (
    ConstraintBlock,
    FormulationMode,
    InvestTerms,
    build_scenario0_block,
    build_scenario1_block,
    extract_operation,
    objective_terms,
)
from .inner import SD, InnerResult, InnerTraceRow, solve_subproblem
from .model import (
    CostBreakdown,
    InvestmentDecision,
    OperationPlan,
    PlanningInstance,
    evaluate_cost,
)
from .solver import (
    GE,
    INFEASIBLE,
    LE,
    MINIMIZE,
    OPTIMAL,
    LinExpr,
    ModelBuilder,
    ModelSpec,
    SolveOptions,
    lsum,
    solve,
)
from .uncertainty import (
    ContingencyRealization,
    LoadRealization,
    UncertaintyBudgets,
    scenario_fingerprint,
)


class InfeasiblePlanningError(RuntimeError):
    """No investment in the catalog can satisfy the requested constraints."""


@dataclass(frozen=True)
class CutBlock:
    """One fixed scenario appended to the master: fresh second-stage copies
    are created for it on every master rebuild."""

    index: int
    contingency: ContingencyRealization
    load: LoadRealization

    def fingerprint(self) -> bytes:
        return scenario_fingerprint(self.contingency, self.load)


@dataclass
class OuterTraceRow:
    q: int
    lb: float
    ub: float
    mp_time: float
    sp_time: float
    scenario: str


@dataclass
class SolveTrace:
    outer: list[OuterTraceRow] = field(default_factory=list)
    inner: list[list[InnerTraceRow]] = field(default_factory=list)


@dataclass
class RobustResult:
    decision: Optional[InvestmentDecision]
    objective: float
    lower_bound: float
    converged: bool
    stalled: bool
    iterations: int
    trace: SolveTrace
    worst_contingency: Optional[ContingencyRealization] = None
    worst_load: Optional[LoadRealization] = None


def build_master(instance: PlanningInstance, cuts: Sequence[CutBlock]) -> tuple[ModelSpec, InvestTerms, object]:
    """Master problem: minimize investment plus an epigraph variable bounded
    below by the recourse cost of every cut scenario, each with its own
    second-stage variable copies."""
    mb = ModelBuilder()
    invest = InvestTerms.variables(mb, instance)
    psi = mb.add_variable("psi", lb=0.0)

    for cut in cuts:
        mode0 = FormulationMode(invest=invest, loads=cut.load.realized, allow_shed=False)
        block0 = build_scenario0_block(mb, mode0, instance, tag=f"q{cut.index}")
        mode1 = FormulationMode(invest=invest, loads=cut.load.realized, states=cut.contingency.state, allow_shed=True)
        block1 = build_scenario1_block(mb, mode1, instance, tag=f"q{cut.index}")
        terms = objective_terms(instance, invest=None, block0=block0, block1=block1)
        mb.add_constraint(LinExpr({psi: 1.0}) - terms["f_ope0"] - terms["f_shed1"], GE, 0.0, name=f"epi[q{cut.index}]")

    cost = invest.cost_expr(instance) + psi
    mb.set_objective(cost, MINIMIZE)
    return mb.build(), invest, psi


@dataclass
class PlanOutcome:
    decision: InvestmentDecision
    plan: OperationPlan
    cost: CostBreakdown


def solve_deterministic(instance: PlanningInstance, options: SolveOptions | None = None) -> PlanOutcome:
    """Minimum-cost plan against the nominal profile with no contingencies."""
    options = options or SolveOptions(rel_gap=1e-9)
    mb = ModelBuilder()
    invest = InvestTerms.variables(mb, instance)
    mode0 = FormulationMode(invest=invest, loads=instance.loads.nominal_matrix(), allow_shed=False)
    block0 = build_scenario0_block(mb, mode0, instance)
    terms = objective_terms(instance, invest=invest, block0=block0)
    mb.set_objective(terms["f_inv"] + terms["f_ope0"], MINIMIZE)

    result = solve(mb.build(), options)
    if result.status == INFEASIBLE:
        raise InfeasiblePlanningError("no catalog selection can serve the nominal loads")
    if result.status != OPTIMAL:
        raise RuntimeError(f"deterministic solve ended with status {result.status}: {result.message}")

    decision = invest.extract(instance, result)
    plan = OperationPlan(scenario0=extract_operation(instance, block0, result), scenario1=None)
    return PlanOutcome(decision, plan, evaluate_cost(instance, decision, plan))


def solve_n1(instance: PlanningInstance, options: SolveOptions | None = None) -> PlanOutcome:
    """Cheapest plan that rides through the sustained outage of any single
    component with no shedding at all."""
    options = options or SolveOptions(rel_gap=1e-9)
    mb = ModelBuilder()
    invest = InvestTerms.variables(mb, instance)
    nominal = instance.loads.nominal_matrix()
    mode0 = FormulationMode(invest=invest, loads=nominal, allow_shed=False)
    block0 = build_scenario0_block(mb, mode0, instance)

    comps = instance.component_ids
    T = instance.horizon.period
    for i, cid in enumerate(comps):
        states = np.ones((len(comps), T))
        states[i, :] = 0.0
        mode1 = FormulationMode(invest=invest, loads=nominal, states=states, allow_shed=True)
        block1 = build_scenario1_block(mb, mode1, instance, tag=f"n1:{cid}")
        for shed_handles in block1.shed.values():
            for h in shed_handles:
                mb.add_constraint(LinExpr({h: 1.0}), LE, 0.0, name=f"noshed[{cid},{h.name}]")

    terms = objective_terms(instance, invest=invest, block0=block0)
    mb.set_objective(terms["f_inv"] + terms["f_ope0"], MINIMIZE)

    result = solve(mb.build(), options)
    if result.status == INFEASIBLE:
        raise InfeasiblePlanningError("no catalog selection survives every single-component outage")
    if result.status != OPTIMAL:
        raise RuntimeError(f"single-outage solve ended with status {result.status}: {result.message}")

    decision = invest.extract(instance, result)
    plan = OperationPlan(scenario0=extract_operation(instance, block0, result), scenario1=None)
    return PlanOutcome(decision, plan, evaluate_cost(instance, decision, plan))


def solve_robust(
    instance: PlanningInstance,
    budgets: UncertaintyBudgets,
    *,
    eps: float = 1e-4,
    eps_relative: bool = False,
    max_outer: int = 30,
    inner_method: str = SD,
    inner_eps: float = 1e-4,
    inner_max_iter: int = 30,
    merge_exclusive: bool = True,
    options: SolveOptions | None = None,
) -> RobustResult:
    """Two-stage robust plan by the outer generation loop.

    Per iteration: solve the master (lower bound, candidate plan), price the
    candidate's worst case (upper bound), stop once the bounds meet, else cut
    the maximizing scenario.  Because both uncertainty sets are finite the
    loop terminates; a repeated scenario means bounds are numerically as
    tight as they will get and is reported as a stall.
    """
    problems = budgets.validate(instance.component_ids)
    if problems:
        raise ValueError("invalid budgets: " + "; ".join(problems))
    options = options or SolveOptions(rel_gap=1e-9)

    cuts: list[CutBlock] = []
    seen: set[bytes] = set()
    lb, ub = -math.inf, math.inf
    incumbent: Optional[InvestmentDecision] = None
    worst: tuple[Optional[ContingencyRealization], Optional[LoadRealization]] = (None, None)
    trace = SolveTrace()
    converged = False
    stalled = False
    q = 0

    def tol() -> float:
        return eps * max(1.0, abs(ub)) if eps_relative else eps

    while q < max_outer:
        q += 1
        t0 = time.perf_counter()
        spec, invest, psi = build_master(instance, cuts)
        mp_res = solve(spec, options)
        mp_time = time.perf_counter() - t0
        if mp_res.status == INFEASIBLE:
            raise InfeasiblePlanningError("master infeasible: the catalog cannot cover a cut scenario")
        if mp_res.status != OPTIMAL:
            raise RuntimeError(f"master solve ended with status {mp_res.status}: {mp_res.message}")
        lb = max(lb, mp_res.objective)
        decision = invest.extract(instance, mp_res)

        if ub - lb <= tol():
            trace.outer.append(OuterTraceRow(q, lb, ub, mp_time, 0.0, "-"))
            converged = True
            break

        t1 = time.perf_counter()
        inner = solve_subproblem(
            instance,
            budgets,
            decision,
            method=inner_method,
            eps=inner_eps,
            max_iter=inner_max_iter,
            merge_exclusive=merge_exclusive,
            options=options,
        )
        sp_time = time.perf_counter() - t1
        trace.inner.append(inner.trace)

        fp = b""
        label = "nominal"
        if inner.contingency is not None and inner.load is not None:
            fp = scenario_fingerprint(inner.contingency, inner.load)
            label = hashlib.sha1(fp).hexdigest()[:12]

        if math.isfinite(inner.value):
            candidate = decision.invest_cost(instance) + inner.value
            if candidate < ub:
                ub = candidate
                incumbent = decision
                worst = (inner.contingency, inner.load)

        trace.outer.append(OuterTraceRow(q, lb, ub, mp_time, sp_time, label))

        if ub - lb <= tol():
            converged = True
            break

        if inner.contingency is None or inner.load is None:
            stalled = True
            break
        if fp in seen:
            stalled = True
            break
        seen.add(fp)
        cuts.append(CutBlock(len(cuts) + 1, inner.contingency, inner.load))

    return RobustResult(
        decision=incumbent,
        objective=ub,
        lower_bound=lb,
        converged=converged,
        stalled=stalled,
        iterations=q,
        trace=trace,
        worst_contingency=worst[0],
        worst_load=worst[1],
    )

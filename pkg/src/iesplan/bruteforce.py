"""Exhaustive reference answers for small planning problems.

Enumerates every scenario of the uncertainty sets (and, for full planning,
every build vector) and dispatches each one directly.  Intended as the
ground truth the generation-based solvers are checked against; explodes by
design on anything that is not tiny.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dispatch import min_shed_dispatch
from .model import InvestmentDecision, PlanningInstance
from .solver import SolveOptions
from .uncertainty import (
    ContingencyRealization,
    LoadRealization,
    UncertaintyBudgets,
    enumerate_scenarios,
)


@dataclass
class WorstCase:
    value: float
    contingency: Optional[ContingencyRealization]
    load: Optional[LoadRealization]
    scenarios_checked: int
    dispatches: int


def worst_case_value(
    instance: PlanningInstance,
    budgets: UncertaintyBudgets,
    decision: InvestmentDecision,
    limit: int = 200_000,
    options: SolveOptions | None = None,
) -> WorstCase:
    """Max over all enumerated scenarios of the fixed plan's dispatch cost.

    Scenarios that only differ in start indicators or in deviations with a
    zero deviation magnitude dispatch identically, so results are cached on
    the realized loads and states.
    """
    options = options or SolveOptions(rel_gap=1e-9)
    cache: dict[bytes, float] = {}
    best = WorstCase(-math.inf, None, None, 0, 0)
    for contingency, load in enumerate_scenarios(budgets, instance.component_ids, instance.horizon, instance.loads, limit=limit):
        best.scenarios_checked += 1
        key = load.realized.tobytes() + b"#" + contingency.state.tobytes()
        value = cache.get(key)
        if value is None:
            result = min_shed_dispatch(instance, decision, load.realized, contingency.state, options=options)
            value = result.objective if result.feasible else math.inf
            cache[key] = value
            best.dispatches += 1
        if value > best.value:
            best.value = value
            best.contingency = contingency
            best.load = load
    return best


@dataclass
class ExhaustiveOptimum:
    decision: InvestmentDecision
    objective: float
    per_build: dict[tuple[int, ...], float]


def exhaustive_robust_optimum(
    instance: PlanningInstance,
    budgets: UncertaintyBudgets,
    limit: int = 200_000,
    options: SolveOptions | None = None,
) -> ExhaustiveOptimum:
    """Robust optimum by brute force: every build vector against every scenario.

    Only defined for catalogs without storage, where the first stage is a
    pure binary vector.
    """
    if instance.storage:
        raise ValueError("exhaustive search requires an instance without storage sizing")
    ids = [e.id for e in instance.equipment]
    per_build: dict[tuple[int, ...], float] = {}
    best_decision = None
    best_value = math.inf
    for bits in itertools.product((0, 1), repeat=len(ids)):
        decision = InvestmentDecision(build=dict(zip(ids, bits)), ess_energy={}, ess_power={})
        worst = worst_case_value(instance, budgets, decision, limit=limit, options=options)
        total = decision.invest_cost(instance) + worst.value
        per_build[bits] = total
        if total < best_value:
            best_value = total
            best_decision = decision
    return ExhaustiveOptimum(best_decision, best_value, per_build)

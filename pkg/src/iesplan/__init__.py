"""Robust equipment selection and sizing for park-level integrated energy systems.

Plans electricity/heat/cooling supply portfolios (CCHP units, gas boilers,
electric chillers, substation feeders, battery and thermal storage) that stay
feasible under budgeted load deviations and equipment contingencies, and
evaluates any plan's reliability by sequential Monte-Carlo simulation.
"""

__version__ = "0.1.0"

from .model import (
    Carrier,
    CostBreakdown,
    Diagnostic,
    EquipmentKind,
    EquipmentOption,
    FeederSpec,
    Horizon,
    InvestmentDecision,
    LoadProfile,
    OperationPlan,
    PlanningInstance,
    StorageKind,
    StorageSpec,
    TariffSeries,
    annuity,
    discount_factor,
    evaluate_cost,
    validate_instance,
)
from .uncertainty import (
    ContingencyRealization,
    LoadRealization,
    UncertaintyBudgets,
    budgets_from_instance,
    check_contingency,
    check_load,
    enumerate_scenarios,
    realize_load,
)
from .dispatch import DispatchResult, min_shed_dispatch
from .robust import (
    InfeasiblePlanningError,
    PlanOutcome,
    RobustResult,
    solve_deterministic,
    solve_n1,
    solve_robust,
)
from .inner import solve_subproblem
from .reliability import (
    LoadFluctuationModel,
    ReliabilityIndices,
    ReliabilityModels,
    TwoStateModel,
    assess,
)
from .io import InstanceBundle, load_instance, parse_instance, serialize_instance

__all__ = [
    "Carrier",
    "ContingencyRealization",
    "CostBreakdown",
    "Diagnostic",
    "DispatchResult",
    "EquipmentKind",
    "EquipmentOption",
    "FeederSpec",
    "Horizon",
    "InfeasiblePlanningError",
    "InstanceBundle",
    "InvestmentDecision",
    "LoadFluctuationModel",
    "LoadProfile",
    "LoadRealization",
    "OperationPlan",
    "PlanOutcome",
    "PlanningInstance",
    "ReliabilityIndices",
    "ReliabilityModels",
    "RobustResult",
    "StorageKind",
    "StorageSpec",
    "TariffSeries",
    "TwoStateModel",
    "UncertaintyBudgets",
    "annuity",
    "assess",
    "budgets_from_instance",
    "check_contingency",
    "check_load",
    "discount_factor",
    "enumerate_scenarios",
    "evaluate_cost",
    "load_instance",
    "min_shed_dispatch",
    "parse_instance",
    "realize_load",
    "serialize_instance",
    "solve_deterministic",
    "solve_n1",
    "solve_robust",
    "solve_subproblem",
    "validate_instance",
]

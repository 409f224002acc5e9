"""Instance files, plan files, and trace emission.

The instance document is YAML with a fixed schema; unknown keys are
rejected so typos fail loudly.  Serialization is canonical (fixed key
order, plain Python scalars), which makes serialize -> parse -> serialize
byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import platform
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
import yaml

from .model import (
    LOAD_CARRIERS,
    Carrier,
    CostBreakdown,
    EquipmentKind,
    EquipmentOption,
    FeederSpec,
    Horizon,
    InvestmentDecision,
    LoadProfile,
    PlanningInstance,
    StorageKind,
    StorageSpec,
    TariffSeries,
)
from .reliability import LoadFluctuationModel, ReliabilityModels, TwoStateModel
from .uncertainty import PER_COMPONENT, UncertaintyBudgets


class InstanceFormatError(ValueError):
    """The instance document violates the schema."""


def _require_keys(mapping: Mapping, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise InstanceFormatError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(mapping)
    if missing:
        raise InstanceFormatError(f"{where}: missing keys {sorted(missing)}")


def _floats(value, where: str) -> list[float]:
    if not isinstance(value, (list, tuple)):
        raise InstanceFormatError(f"{where}: expected a list of numbers")
    return [float(v) for v in value]


class InstanceBundle:
    """Parsed instance plus the optional budget and reliability sections."""

    def __init__(self, instance: PlanningInstance, budgets: Optional[UncertaintyBudgets], reliability: Optional[ReliabilityModels]):
        self.instance = instance
        self.budgets = budgets
        self.reliability = reliability


def parse_instance(text: str) -> InstanceBundle:
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise InstanceFormatError("instance document must be a mapping")
    _require_keys(doc, {"horizon", "tariffs", "loads", "equipment", "feeders", "storage", "budgets", "reliability"}, {"horizon", "tariffs", "loads"}, "top level")

    h = doc["horizon"]
    _require_keys(h, {"period", "typical_day_weights", "planning_years", "discount_rate"}, {"period", "typical_day_weights"}, "horizon")
    horizon = Horizon(
        period=int(h["period"]),
        typical_day_weights=tuple(float(w) for w in h["typical_day_weights"]),
        planning_years=int(h.get("planning_years", 1)),
        discount_rate=float(h.get("discount_rate", 0.0)),
    )

    t = doc["tariffs"]
    _require_keys(t, {"electricity", "gas"}, {"electricity", "gas"}, "tariffs")
    tariffs = TariffSeries(np.array(_floats(t["electricity"], "tariffs/electricity")), np.array(_floats(t["gas"], "tariffs/gas")))

    ld = doc["loads"]
    _require_keys(ld, {"nominal", "shed_penalty"}, {"nominal", "shed_penalty"}, "loads")
    nominal = {}
    penalty = {}
    for c in LOAD_CARRIERS:
        nominal[c] = np.array(_floats(ld["nominal"].get(c.value, []), f"loads/nominal/{c.value}"))
        penalty[c] = np.array(_floats(ld["shed_penalty"].get(c.value, []), f"loads/shed_penalty/{c.value}"))
    loads = LoadProfile(nominal=nominal, shed_penalty=penalty)

    equipment = []
    for i, row in enumerate(doc.get("equipment", []) or []):
        where = f"equipment[{i}]"
        _require_keys(row, {"id", "kind", "capacity", "invest_cost", "conversion"}, {"id", "kind", "capacity", "invest_cost", "conversion"}, where)
        try:
            kind = EquipmentKind(row["kind"])
        except ValueError as exc:
            raise InstanceFormatError(f"{where}: unknown kind {row['kind']!r}") from exc
        conv = {}
        for out_name, eff in row["conversion"].items():
            try:
                out_c = Carrier(out_name)
            except ValueError as exc:
                raise InstanceFormatError(f"{where}: unknown output carrier {out_name!r}") from exc
            input_c = Carrier.GAS if kind in (EquipmentKind.CCHP, EquipmentKind.GB) else Carrier.ELECTRICITY
            conv[(input_c, out_c)] = float(eff)
        equipment.append(EquipmentOption(id=str(row["id"]), kind=kind, capacity=float(row["capacity"]), conversion=conv, invest_cost=float(row["invest_cost"])))

    feeders = []
    for i, row in enumerate(doc.get("feeders", []) or []):
        where = f"feeders[{i}]"
        _require_keys(row, {"id", "capacity", "efficiency"}, {"id", "capacity"}, where)
        feeders.append(FeederSpec(id=str(row["id"]), capacity=float(row["capacity"]), efficiency=float(row.get("efficiency", 1.0))))

    storage = []
    for i, row in enumerate(doc.get("storage", []) or []):
        where = f"storage[{i}]"
        _require_keys(
            row,
            {"kind", "cost_energy", "cost_power", "soc_min", "soc_max", "eta_ch", "eta_dis", "max_charge_cycles", "power_rule", "initial_soc"},
            {"kind", "cost_energy", "soc_min", "soc_max", "eta_ch", "eta_dis"},
            where,
        )
        try:
            kind = StorageKind(row["kind"])
        except ValueError as exc:
            raise InstanceFormatError(f"{where}: unknown storage kind {row['kind']!r}") from exc
        storage.append(
            StorageSpec(
                kind=kind,
                cost_energy=float(row["cost_energy"]),
                cost_power=float(row.get("cost_power", 0.0)),
                soc_min=float(row["soc_min"]),
                soc_max=float(row["soc_max"]),
                eta_ch=float(row["eta_ch"]),
                eta_dis=float(row["eta_dis"]),
                max_charge_cycles=(float(row["max_charge_cycles"]) if row.get("max_charge_cycles") is not None else None),
                power_rule=str(row.get("power_rule", "explicit")),
                initial_soc=(float(row["initial_soc"]) if row.get("initial_soc") is not None else None),
            )
        )

    instance = PlanningInstance(
        equipment=tuple(equipment),
        feeders=tuple(feeders),
        storage=tuple(storage),
        horizon=horizon,
        tariffs=tariffs,
        loads=loads,
    )

    budgets = None
    if doc.get("budgets") is not None:
        b = doc["budgets"]
        _require_keys(b, {"gamma_n", "gamma_i", "gamma_d", "gamma_l", "delta_load", "interval_scope"}, set(), "budgets")
        delta = None
        if b.get("delta_load") is not None:
            dl = b["delta_load"]
            if "relative" in dl:
                _require_keys(dl, {"relative"}, {"relative"}, "budgets/delta_load")
                frac = float(dl["relative"])
                delta = {c: frac * loads.nominal[c] for c in LOAD_CARRIERS}
            else:
                _require_keys(dl, {c.value for c in LOAD_CARRIERS}, set(), "budgets/delta_load")
                delta = {c: np.array(_floats(dl.get(c.value, [0.0] * horizon.period), f"budgets/delta_load/{c.value}")) for c in LOAD_CARRIERS}

        def _per_component(value):
            if isinstance(value, Mapping):
                return {str(k): int(v) for k, v in value.items()}
            return int(value or 0)

        budgets = UncertaintyBudgets(
            gamma_n=int(b.get("gamma_n", 0)),
            gamma_i=_per_component(b.get("gamma_i", 0)),
            gamma_d=_per_component(b.get("gamma_d", 0)),
            gamma_l=int(b.get("gamma_l", 0)),
            delta_load=delta,
            interval_scope=str(b.get("interval_scope", PER_COMPONENT)),
        )

    reliability = None
    if doc.get("reliability") is not None:
        r = doc["reliability"]
        _require_keys(r, {"components", "load_sigma"}, {"components"}, "reliability")
        comps = {}
        for cid, row in (r["components"] or {}).items():
            _require_keys(row, {"failure_rate", "repair_rate"}, {"failure_rate", "repair_rate"}, f"reliability/components/{cid}")
            comps[str(cid)] = TwoStateModel(float(row["failure_rate"]), float(row["repair_rate"]))
        sigma = {}
        for name, value in (r.get("load_sigma") or {}).items():
            try:
                sigma[Carrier(name)] = float(value)
            except ValueError as exc:
                raise InstanceFormatError(f"reliability/load_sigma: unknown carrier {name!r}") from exc
        reliability = ReliabilityModels(components=comps, loads=LoadFluctuationModel(sigma))

    return InstanceBundle(instance, budgets, reliability)


def load_instance(path) -> InstanceBundle:
    return parse_instance(Path(path).read_text(encoding="utf-8"))


def serialize_instance(instance: PlanningInstance, budgets: Optional[UncertaintyBudgets] = None, reliability: Optional[ReliabilityModels] = None) -> str:
    """Canonical YAML rendering; byte-stable under parse/serialize round trips."""
    doc: dict[str, Any] = {}
    doc["horizon"] = {
        "period": int(instance.horizon.period),
        "typical_day_weights": [float(w) for w in instance.horizon.typical_day_weights],
        "planning_years": int(instance.horizon.planning_years),
        "discount_rate": float(instance.horizon.discount_rate),
    }
    doc["tariffs"] = {
        "electricity": [float(v) for v in instance.tariffs.elec_price],
        "gas": [float(v) for v in instance.tariffs.gas_price],
    }
    doc["loads"] = {
        "nominal": {c.value: [float(v) for v in instance.loads.nominal[c]] for c in LOAD_CARRIERS},
        "shed_penalty": {c.value: [float(v) for v in instance.loads.shed_penalty[c]] for c in LOAD_CARRIERS},
    }
    doc["equipment"] = [
        {
            "id": e.id,
            "kind": e.kind.value,
            "capacity": float(e.capacity),
            "invest_cost": float(e.invest_cost),
            "conversion": {out.value: float(eff) for (_, out), eff in sorted(e.conversion.items(), key=lambda kv: kv[0][1].value)},
        }
        for e in instance.equipment
    ]
    doc["feeders"] = [{"id": f.id, "capacity": float(f.capacity), "efficiency": float(f.efficiency)} for f in instance.feeders]
    doc["storage"] = [
        {
            "kind": s.kind.value,
            "cost_energy": float(s.cost_energy),
            "cost_power": float(s.cost_power),
            "soc_min": float(s.soc_min),
            "soc_max": float(s.soc_max),
            "eta_ch": float(s.eta_ch),
            "eta_dis": float(s.eta_dis),
            "max_charge_cycles": (float(s.max_charge_cycles) if s.max_charge_cycles is not None else None),
            "power_rule": s.power_rule,
            "initial_soc": (float(s.initial_soc) if s.initial_soc is not None else None),
        }
        for s in instance.storage
    ]
    if budgets is not None:
        comps = instance.component_ids

        def _scope(value):
            if isinstance(value, Mapping):
                return {cid: int(value[cid]) for cid in comps if cid in value}
            return int(value)

        doc["budgets"] = {
            "gamma_n": int(budgets.gamma_n),
            "gamma_i": _scope(budgets.gamma_i),
            "gamma_d": _scope(budgets.gamma_d),
            "gamma_l": int(budgets.gamma_l),
            "delta_load": (
                {c.value: [float(v) for v in budgets.delta(c, instance.horizon.period)] for c in LOAD_CARRIERS}
                if budgets.delta_load is not None
                else None
            ),
            "interval_scope": budgets.interval_scope,
        }
    if reliability is not None:
        doc["reliability"] = {
            "components": {
                cid: {"failure_rate": float(m.failure_rate), "repair_rate": float(m.repair_rate)}
                for cid, m in reliability.components.items()
            },
            "load_sigma": {c.value: float(reliability.loads.of(c)) for c in LOAD_CARRIERS},
        }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=100)


def write_instance(path, instance: PlanningInstance, budgets: Optional[UncertaintyBudgets] = None, reliability: Optional[ReliabilityModels] = None) -> None:
    Path(path).write_text(serialize_instance(instance, budgets, reliability), encoding="utf-8")


# ---------------------------------------------------------------------------
# plan and result files
# ---------------------------------------------------------------------------


def serialize_plan(decision: InvestmentDecision, cost: Optional[CostBreakdown] = None) -> str:
    doc: dict[str, Any] = {
        "build": {k: int(v) for k, v in sorted(decision.build.items())},
        "ess_energy": {k.value: float(v) for k, v in sorted(decision.ess_energy.items(), key=lambda kv: kv[0].value)},
        "ess_power": {k.value: float(v) for k, v in sorted(decision.ess_power.items(), key=lambda kv: kv[0].value)},
    }
    if cost is not None:
        doc["cost"] = {"invest": float(cost.invest), "operate": float(cost.operate), "shed": float(cost.shed), "total": float(cost.total)}
    return yaml.safe_dump(doc, sort_keys=False)


def write_plan(path, decision: InvestmentDecision, cost: Optional[CostBreakdown] = None) -> None:
    Path(path).write_text(serialize_plan(decision, cost), encoding="utf-8")


def read_plan(path) -> InvestmentDecision:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    return InvestmentDecision(
        build={str(k): int(v) for k, v in (doc.get("build") or {}).items()},
        ess_energy={StorageKind(k): float(v) for k, v in (doc.get("ess_energy") or {}).items()},
        ess_power={StorageKind(k): float(v) for k, v in (doc.get("ess_power") or {}).items()},
    )


def write_outer_trace_csv(path, trace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["q", "lower_bound", "upper_bound", "mp_time_s", "sp_time_s", "scenario"])
        for row in trace.outer:
            w.writerow([row.q, f"{row.lb:.6f}", "inf" if row.ub == float("inf") else f"{row.ub:.6f}", f"{row.mp_time:.4f}", f"{row.sp_time:.4f}", row.scenario])


def write_inner_trace_csv(path, trace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["outer_q", "r", "lb", "ub", "mps_time_s", "sps_time_s", "mps_binary_vars"])
        for q, rows in enumerate(trace.inner, start=1):
            for row in rows:
                lb = "-inf" if row.lb == float("-inf") else f"{row.lb:.6f}"
                ub = "inf" if row.ub == float("inf") else f"{row.ub:.6f}"
                w.writerow([q, row.r, lb, ub, f"{row.mps_time:.4f}", f"{row.sps_time:.4f}", row.mps_binaries])


def write_reliability_csv(path, indices) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["carrier", "index", "value", "ci95_halfwidth"])
        for carrier, name, value, ci in indices.rows():
            w.writerow([carrier, name, f"{value:.6f}", f"{ci:.6f}"])


def write_scenario_text(path, contingency, load) -> None:
    Path(path).write_text(contingency.to_text() + "\n" + load.to_text() + "\n", encoding="utf-8")


def write_manifest(path, config: Mapping[str, Any]) -> None:
    """Run manifest: resolved configuration, its hash, and tool versions."""
    import scipy

    from . import __version__

    payload = yaml.safe_dump(dict(config), sort_keys=True)
    doc = {
        "config": dict(config),
        "config_sha256": hashlib.sha256(payload.encode()).hexdigest(),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "iesplan": __version__,
        },
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")

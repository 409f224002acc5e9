"""Command-line front end.

Subcommands: validate, plan, assess, compare, sweep.  Configuration
precedence is CLI flags over config-file values over built-in defaults.
Every run writes a manifest (resolved config, its hash, tool versions) so
results can be reproduced exactly.

Exit codes: 0 success/converged, 1 input or usage error, 2 planner did not
converge within its iteration cap.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .inner import KKT, SD
from .io import (
    InstanceFormatError,
    load_instance,
    read_plan,
    write_inner_trace_csv,
    write_manifest,
    write_outer_trace_csv,
    write_plan,
    write_reliability_csv,
    write_scenario_text,
)
from .model import LOAD_CARRIERS, CostBreakdown, StorageKind, validate_instance
from .reliability import assess
from .robust import InfeasiblePlanningError, solve_deterministic, solve_n1, solve_robust
from .solver import SolveOptions
from .uncertainty import UncertaintyBudgets, budgets_from_instance

DEFAULTS = {
    "mode": "deterministic",
    "inner": SD,
    "gamma_n": None,
    "gamma_i": None,
    "gamma_d": None,
    "gamma_l": None,
    "years": 200,
    "seed": 0,
    "eps": 1e-4,
    "time_limit": None,
    "out": "runs",
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iesplan", description=__doc__)
    p.add_argument("--version", action="version", version=f"iesplan {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--instance", required=True, help="instance YAML file")
        sp.add_argument("--config", help="YAML file of flag defaults (flags win)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--mode", choices=["deterministic", "robust", "n1"])
        sp.add_argument("--inner", choices=[SD, KKT], help="inner reformulation (robust mode)")
        sp.add_argument("--gamma-n", type=int, dest="gamma_n")
        sp.add_argument("--gamma-i", type=int, dest="gamma_i")
        sp.add_argument("--gamma-d", type=int, dest="gamma_d")
        sp.add_argument("--gamma-l", type=int, dest="gamma_l")
        sp.add_argument("--years", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--eps", type=float)
        sp.add_argument("--time-limit", type=float, dest="time_limit")

    sp = sub.add_parser("validate", help="check an instance file and report diagnostics")
    sp.add_argument("--instance", required=True)

    for name, doc in (
        ("plan", "solve one planning problem and write plan/trace files"),
        ("assess", "Monte-Carlo reliability indices of a plan"),
        ("compare", "plan under several modes, assess each with a common seed"),
        ("sweep", "re-plan along a budget parameter and tabulate the results"),
    ):
        sp = sub.add_parser(name, help=doc)
        common(sp)
        if name == "assess":
            sp.add_argument("--plan", required=True, help="plan YAML from a previous run")
        if name == "compare":
            sp.add_argument("--modes", default="deterministic,robust", help="comma list of modes")
        if name == "sweep":
            sp.add_argument("--param", choices=["gamma_d", "gamma_l"], default="gamma_d")
            sp.add_argument("--values", required=True, help="comma list of integer budget values")
    return p


def _resolve_config(args: argparse.Namespace) -> dict:
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            merged.update({k: v for k, v in (yaml.safe_load(fh) or {}).items() if k in DEFAULTS})
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    merged["command"] = args.command
    merged["instance"] = args.instance
    return merged


def _budgets(bundle, cfg) -> UncertaintyBudgets:
    base = bundle.budgets or UncertaintyBudgets()
    instance = bundle.instance
    comps = instance.component_ids
    gamma_n = cfg["gamma_n"] if cfg["gamma_n"] is not None else base.gamma_n
    gamma_l = cfg["gamma_l"] if cfg["gamma_l"] is not None else base.gamma_l
    gamma_i = cfg["gamma_i"] if cfg["gamma_i"] is not None else base.gamma_i
    gamma_d = cfg["gamma_d"] if cfg["gamma_d"] is not None else base.gamma_d
    return UncertaintyBudgets(
        gamma_n=gamma_n,
        gamma_i=gamma_i if isinstance(gamma_i, dict) else {c: int(gamma_i or 0) for c in comps},
        gamma_d=gamma_d if isinstance(gamma_d, dict) else {c: int(gamma_d or 0) for c in comps},
        gamma_l=gamma_l,
        delta_load=base.delta_load,
        interval_scope=base.interval_scope,
    )


def _run_mode(mode: str, bundle, cfg, out: Path):
    instance = bundle.instance
    options = SolveOptions(rel_gap=1e-9, time_limit=cfg["time_limit"], seed=cfg["seed"])
    if mode == "deterministic":
        outcome = solve_deterministic(instance, options)
        return outcome.decision, outcome.cost, True
    if mode == "n1":
        outcome = solve_n1(instance, options)
        return outcome.decision, outcome.cost, True
    budgets = _budgets(bundle, cfg)
    result = solve_robust(
        instance,
        budgets,
        eps=cfg["eps"],
        inner_method=cfg["inner"],
        options=options,
    )
    if result.decision is None:
        raise InfeasiblePlanningError("robust planner found no feasible plan")
    write_outer_trace_csv(out / f"trace_outer_{mode}.csv", result.trace)
    write_inner_trace_csv(out / f"trace_inner_{mode}.csv", result.trace)
    if result.worst_contingency is not None:
        write_scenario_text(out / f"worst_scenario_{mode}.txt", result.worst_contingency, result.worst_load)
    # investment is exact; the remainder of the robust objective is the worst-case recourse value
    invest = result.decision.invest_cost(instance)
    cost = CostBreakdown(invest=invest, operate=result.objective - invest, shed=0.0)
    return result.decision, cost, result.converged


def cmd_validate(args) -> int:
    try:
        bundle = load_instance(args.instance)
    except (InstanceFormatError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    diags = validate_instance(bundle.instance)
    if bundle.budgets is not None:
        for msg in bundle.budgets.validate(bundle.instance.component_ids):
            print(f"BUDGETS: {msg}")
    for d in diags:
        print(str(d))
    if diags:
        return 1
    print("instance ok")
    return 0


def cmd_plan(args) -> int:
    cfg = _resolve_config(args)
    bundle = load_instance(cfg["instance"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.yaml", cfg)
    decision, cost, converged = _run_mode(cfg["mode"], bundle, cfg, out)
    write_plan(out / f"plan_{cfg['mode']}.yaml", decision, cost)
    print(f"mode={cfg['mode']} total={cost.total:.4f} invest={cost.invest:.4f}")
    return 0 if converged else 2


def cmd_assess(args) -> int:
    cfg = _resolve_config(args)
    bundle = load_instance(cfg["instance"])
    if bundle.reliability is None:
        print("error: the instance has no reliability section", file=sys.stderr)
        return 1
    decision = read_plan(args.plan)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.yaml", {**cfg, "plan": str(args.plan)})
    indices = assess(decision, bundle.instance, bundle.reliability, years=cfg["years"], seed=cfg["seed"])
    write_reliability_csv(out / "reliability.csv", indices)
    for carrier, name, value, ci in indices.rows():
        print(f"{carrier:12s} {name:4s} {value:12.4f} +-{ci:.4f}")
    return 0


def cmd_compare(args) -> int:
    cfg = _resolve_config(args)
    bundle = load_instance(cfg["instance"])
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    if len(modes) < 2:
        print("error: compare needs at least two modes", file=sys.stderr)
        return 1
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.yaml", {**cfg, "modes": modes})

    rows = []
    base_cost = None
    failed = False
    for mode in modes:
        try:
            decision, cost, converged = _run_mode(mode, bundle, cfg, out)
        except (InfeasiblePlanningError, RuntimeError) as exc:
            print(f"{mode}: failed ({exc})", file=sys.stderr)
            failed = True
            continue
        write_plan(out / f"plan_{mode}.yaml", decision, cost)
        total_eens = float("nan")
        if bundle.reliability is not None:
            indices = assess(decision, bundle.instance, bundle.reliability, years=cfg["years"], seed=cfg["seed"])
            write_reliability_csv(out / f"reliability_{mode}.csv", indices)
            total_eens = sum(indices.eens.values())
        if base_cost is None:
            base_cost = cost.total
        increment = (cost.total - base_cost) / base_cost if base_cost else 0.0
        rows.append([mode, f"{cost.total:.4f}", f"{total_eens:.4f}", f"{increment:.4%}"])

    with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "total_cost", "total_eens", "cost_increment"])
        w.writerows(rows)
    for row in rows:
        print("  ".join(str(v) for v in row))
    return 1 if failed else 0


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    bundle = load_instance(cfg["instance"])
    values = [int(v) for v in args.values.split(",")]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.yaml", {**cfg, "param": args.param, "values": values})

    header = ["value", "total_cost", "invest_cost"]
    header += [f"build_{e.id}" for e in bundle.instance.equipment]
    for kind in (StorageKind.BESS, StorageKind.TESS):
        header += [f"{kind.value.lower()}_energy", f"{kind.value.lower()}_power", f"{kind.value.lower()}_ratio"]

    rows = []
    failed = False
    for value in values:
        run_cfg = dict(cfg)
        run_cfg["mode"] = "robust"
        run_cfg[args.param] = value
        try:
            decision, cost, converged = _run_mode("robust", bundle, run_cfg, out)
        except (InfeasiblePlanningError, RuntimeError) as exc:
            print(f"{args.param}={value}: failed ({exc})", file=sys.stderr)
            failed = True
            continue
        write_plan(out / f"plan_gamma_{value}.yaml", decision, cost)
        row = [value, f"{cost.total:.4f}", f"{cost.invest:.4f}"]
        row += [decision.built(e.id) for e in bundle.instance.equipment]
        for kind in (StorageKind.BESS, StorageKind.TESS):
            energy = decision.energy(kind)
            power = decision.power(kind)
            ratio = energy / power if power > 1e-9 else float("nan")
            row += [f"{energy:.4f}", f"{power:.4f}", f"{ratio:.4f}"]
        rows.append(row)

    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    for row in rows:
        print("  ".join(str(v) for v in row))
    return 1 if failed else 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "plan":
            return cmd_plan(args)
        if args.command == "assess":
            return cmd_assess(args)
        if args.command == "compare":
            return cmd_compare(args)
        if args.command == "sweep":
            return cmd_sweep(args)
    except InstanceFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InfeasiblePlanningError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())

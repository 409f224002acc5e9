"""Worst-case search for a fixed investment: the inner generation loop.

For a fixed plan the worst case is a max (over uncertain loads and states)
of a min (over recourse dispatch).  With the binary charge flags pinned to a
pool of previously seen recourse patterns, the remaining dispatch is an LP,
so its minimum can be replaced either by the LP dual maximum (strong
duality, the default) or by primal-dual optimality conditions (KKT, kept
for cross-validation).  Both land in one MILP over the uncertainty
variables after products of binaries and duals are linearized exactly.

The dual is never written by hand: :func:`derive_dual_constraints`
transposes the emitted primal rows mechanically, which keeps every
coefficient traceable to a tagged dispatch constraint.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .dispatch import (
    ConstraintBlock,
    FormulationMode,
    InvestTerms,
    build_scenario0_block,
    build_scenario1_block,
    min_shed_dispatch,
    objective_terms,
)
from .model import (
    LOAD_CARRIERS,
    Carrier,
    InvestmentDecision,
    PlanningInstance,
    StorageKind,
)
from .solver import (
    BINARY,
    EQ,
    GE,
    LE,
    MAXIMIZE,
    OPTIMAL,
    INFEASIBLE,
    LinExpr,
    ModelBuilder,
    ModelSpec,
    SolveOptions,
    SolveResult,
    VariableHandle,
    lsum,
    solve,
)
from .uncertainty import (
    GLOBAL,
    PER_COMPONENT,
    ContingencyRealization,
    LoadRealization,
    UncertaintyBudgets,
    states_from_starts,
)

SD = "sd"
KKT = "kkt"

# pool entries pin the charge flags of both scenario copies
ZPattern = Mapping[int, Mapping[StorageKind, np.ndarray]]


def _ukey(sign: str, carrier: Carrier, t: int) -> tuple:
    return (sign, carrier.value, t)


def _skey(cid: str, t: int) -> tuple:
    return ("s", cid, t)


def uncertain_keys(instance: PlanningInstance, budgets: UncertaintyBudgets):
    """Which deviation and state symbols actually vary under the budgets."""
    T = instance.horizon.period
    u_keys: list[tuple[Carrier, int]] = []
    if budgets.gamma_l > 0:
        for c in LOAD_CARRIERS:
            delta = budgets.delta(c, T)
            u_keys.extend((c, t) for t in range(T) if delta[t] > 0)
    s_ids: list[str] = []
    if budgets.gamma_n > 0:
        s_ids = [cid for cid in instance.component_ids if budgets.gd(cid) > 0]
    return u_keys, s_ids


def dual_bound(instance: PlanningInstance) -> float:
    """Safe cap on dual-variable magnitudes: the costliest weighted hour
    divided by the smallest conversion factor, with a decade of headroom."""
    w = instance.horizon.hour_weights()
    cmax = max(
        float(np.max(instance.tariffs.elec_price, initial=0.0)),
        float(np.max(instance.tariffs.gas_price, initial=0.0)),
        max((float(np.max(p)) for p in instance.loads.shed_penalty.values()), default=0.0),
    )
    factors = [instance.substation_efficiency]
    for e in instance.equipment:
        factors.extend(v for v in e.conversion.values() if v > 0)
    for s in instance.storage:
        factors.extend([s.eta_ch, s.eta_dis])
    cfloor = min((f for f in factors if f > 0), default=1.0)
    return 10.0 * float(np.max(w, initial=1.0)) * max(cmax, 1.0) / cfloor


# ---------------------------------------------------------------------------
# mechanical dualization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DualRow:
    """One primal row in canonical >= form: a.x + g.u >= b (or = b)."""

    tag: tuple
    name: str
    is_eq: bool
    b: float
    prim: tuple[tuple[int, float], ...]
    par: tuple[tuple[tuple, float], ...]


@dataclass(frozen=True)
class DualCol:
    """Dual feasibility for one primal variable: sum_k a[k,v] pi_k <= c_v."""

    var_index: int
    name: str
    c: float
    entries: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class DualTemplate:
    rows: tuple[DualRow, ...]
    cols: tuple[DualCol, ...]
    param_keys: frozenset


class DualizationError(RuntimeError):
    """A primal variable cannot be mapped into the dual (wrong kind or bounds)."""


def derive_dual_constraints(spec: ModelSpec, params: Mapping[int, tuple], objective: LinExpr | None = None) -> DualTemplate:
    """Transpose a parametric LP into its dual template.

    ``params`` maps variable indices that stand for uncertainty symbols to
    stable keys; their coefficients move to the right-hand side, where they
    later multiply dual variables.  All remaining variables must be
    continuous with bounds [0, inf), so the dual has one sign-constrained
    variable per inequality, one free variable per equality, and one <=
    constraint per primal variable.
    """
    c_map: dict[int, float] = {}
    if objective is not None:
        for h, coef in objective.terms.items():
            c_map[h.index] = c_map.get(h.index, 0.0) + coef
    else:
        c_map = {i: coef for i, coef in spec.objective}

    for v in spec.variables:
        if v.index in params:
            continue
        if v.kind != "continuous" or v.lb != 0.0 or not math.isinf(v.ub):
            raise DualizationError(f"primal variable {v.name!r} must be continuous with bounds [0, inf)")
    for idx in params:
        if idx in c_map and c_map[idx] != 0.0:
            raise DualizationError("uncertainty symbols may not appear in the primal objective")

    rows: list[DualRow] = []
    for con in spec.constraints:
        sigma = -1.0 if con.sense == LE else 1.0
        prim: list[tuple[int, float]] = []
        par: list[tuple[tuple, float]] = []
        for idx, coef in con.expr_terms:
            if idx in params:
                par.append((params[idx], sigma * coef))
            else:
                prim.append((idx, sigma * coef))
        rows.append(DualRow(con.tag, con.name, con.sense == EQ, sigma * con.rhs, tuple(prim), tuple(par)))

    col_entries: dict[int, list[tuple[int, float]]] = {}
    for k, row in enumerate(rows):
        for idx, a in row.prim:
            col_entries.setdefault(idx, []).append((k, a))

    cols = []
    for v in spec.variables:
        if v.index in params:
            continue
        cols.append(
            DualCol(
                var_index=v.index,
                name=v.name,
                c=c_map.get(v.index, 0.0),
                entries=tuple(col_entries.get(v.index, ())),
            )
        )
    return DualTemplate(tuple(rows), tuple(cols), frozenset(params.values()))


# ---------------------------------------------------------------------------
# parametric recourse skeleton (shared by the SD and KKT masters)
# ---------------------------------------------------------------------------


@dataclass
class RecourseSkeleton:
    spec: ModelSpec
    params: dict[int, tuple]
    objective: LinExpr
    var_ub: dict[int, float]
    template: DualTemplate


def build_recourse_skeleton(
    instance: PlanningInstance,
    budgets: UncertaintyBudgets,
    decision: InvestmentDecision,
    z_pattern: ZPattern,
) -> RecourseSkeleton:
    """Both dispatch copies with investment and charge flags fixed and the
    uncertain loads/states left symbolic, plus the mechanically derived dual."""
    mb = ModelBuilder()
    T = instance.horizon.period
    u_keys, s_ids = uncertain_keys(instance, budgets)

    params: dict[int, tuple] = {}
    u_plus: dict[tuple[Carrier, int], VariableHandle] = {}
    u_minus: dict[tuple[Carrier, int], VariableHandle] = {}
    for c, t in u_keys:
        hp = mb.add_variable(f"u+[{c.value},{t}]", BINARY)
        hm = mb.add_variable(f"u-[{c.value},{t}]", BINARY)
        u_plus[(c, t)] = hp
        u_minus[(c, t)] = hm
        params[hp.index] = _ukey("u+", c, t)
        params[hm.index] = _ukey("u-", c, t)

    s_vars: dict[tuple[str, int], VariableHandle] = {}
    for cid in s_ids:
        for t in range(T):
            h = mb.add_variable(f"s[{cid},{t}]", BINARY)
            s_vars[(cid, t)] = h
            params[h.index] = _skey(cid, t)

    def load_expr(c: Carrier, t: int):
        base = float(instance.loads.nominal[c][t])
        if (c, t) not in u_plus:
            return base
        delta = float(budgets.delta(c, T)[t])
        return LinExpr({u_plus[(c, t)]: delta, u_minus[(c, t)]: -delta}, base)

    def state_expr(cid: str, t: int):
        return s_vars.get((cid, t), 1.0)

    invest = InvestTerms.fixed(instance, decision)
    mode0 = FormulationMode(invest=invest, loads=load_expr, allow_shed=False, z_fixed=z_pattern[0])
    block0 = build_scenario0_block(mb, mode0, instance)
    mode1 = FormulationMode(invest=invest, loads=load_expr, states=state_expr, allow_shed=True, z_fixed=z_pattern[1])
    block1 = build_scenario1_block(mb, mode1, instance)

    terms = objective_terms(instance, invest=None, block0=block0, block1=block1)
    objective = terms["f_ope0"] + terms["f_shed1"]
    spec = mb.build()

    var_ub = {h.index: ub for block in (block0, block1) for h, ub in block.var_ub.items()}
    template = derive_dual_constraints(spec, params, objective)
    return RecourseSkeleton(spec=spec, params=params, objective=objective, var_ub=var_ub, template=template)


def empty_z_pattern(instance: PlanningInstance) -> dict[int, dict[StorageKind, np.ndarray]]:
    """Seed recourse: charge flags all zero (storage free to discharge)."""
    T = instance.horizon.period
    return {sc: {s.kind: np.zeros(T) for s in instance.storage} for sc in (0, 1)}


# ---------------------------------------------------------------------------
# exact linearization of binary-times-continuous products
# ---------------------------------------------------------------------------


def linearize_product(mb: ModelBuilder, u: VariableHandle, pi: VariableHandle, big_m: float, name: str = "w") -> VariableHandle:
    """Auxiliary variable equal to u*pi at every feasible point, given 0 <= pi <= big_m."""
    if not math.isfinite(big_m):
        raise ValueError("big-M for a product linearization must be finite")
    w = mb.add_variable(name, lb=0.0, ub=big_m)
    mb.add_constraint(LinExpr({w: 1.0, u: -big_m}), LE, 0.0, name=f"{name}:ub_u")
    mb.add_constraint(LinExpr({w: 1.0, pi: -1.0}), LE, 0.0, name=f"{name}:ub_pi")
    mb.add_constraint(LinExpr({w: 1.0, pi: -1.0, u: -big_m}), GE, -big_m, name=f"{name}:lb")
    return w


def linearize_exclusive_pair(
    mb: ModelBuilder,
    u_plus: VariableHandle,
    u_minus: VariableHandle,
    pi: VariableHandle,
    big_m: float,
    name: str = "w",
) -> tuple[VariableHandle, VariableHandle]:
    """Products for a mutually exclusive indicator pair with one shared lower
    bound row instead of two: valid only when u_plus + u_minus <= 1 holds."""
    if not math.isfinite(big_m):
        raise ValueError("big-M for a product linearization must be finite")
    wp = mb.add_variable(f"{name}+", lb=0.0, ub=big_m)
    wm = mb.add_variable(f"{name}-", lb=0.0, ub=big_m)
    mb.add_constraint(LinExpr({wp: 1.0, u_plus: -big_m}), LE, 0.0, name=f"{name}:ub_u+")
    mb.add_constraint(LinExpr({wm: 1.0, u_minus: -big_m}), LE, 0.0, name=f"{name}:ub_u-")
    mb.add_constraint(LinExpr({wp: 1.0, pi: -1.0}), LE, 0.0, name=f"{name}:ub_pi+")
    mb.add_constraint(LinExpr({wm: 1.0, pi: -1.0}), LE, 0.0, name=f"{name}:ub_pi-")
    mb.add_constraint(LinExpr({wp: 1.0, wm: 1.0, pi: -1.0, u_plus: -big_m, u_minus: -big_m}), GE, -big_m, name=f"{name}:lb")
    return wp, wm


# ---------------------------------------------------------------------------
# shared uncertainty-variable block for both masters
# ---------------------------------------------------------------------------


@dataclass
class UncertainVars:
    u_plus: dict[tuple[Carrier, int], VariableHandle]
    u_minus: dict[tuple[Carrier, int], VariableHandle]
    s: dict[tuple[str, int], VariableHandle]
    y: dict[tuple[str, int], VariableHandle]

    def by_key(self) -> dict[tuple, VariableHandle]:
        out: dict[tuple, VariableHandle] = {}
        for (c, t), h in self.u_plus.items():
            out[_ukey("u+", c, t)] = h
        for (c, t), h in self.u_minus.items():
            out[_ukey("u-", c, t)] = h
        for (cid, t), h in self.s.items():
            out[_skey(cid, t)] = h
        return out


def add_set_membership(mb: ModelBuilder, instance: PlanningInstance, budgets: UncertaintyBudgets) -> UncertainVars:
    """Create the uncertainty variables and their budget constraints.

    State variables are continuous in [0, 1]: the duration link pins each of
    them to one minus a sum of binary start indicators, so they take binary
    values at every feasible point without costing branching nodes.
    """
    horizon = instance.horizon
    T = horizon.period
    u_keys, s_ids = uncertain_keys(instance, budgets)

    u_plus: dict[tuple[Carrier, int], VariableHandle] = {}
    u_minus: dict[tuple[Carrier, int], VariableHandle] = {}
    for c, t in u_keys:
        u_plus[(c, t)] = mb.add_variable(f"u+[{c.value},{t}]", BINARY)
        u_minus[(c, t)] = mb.add_variable(f"u-[{c.value},{t}]", BINARY)
        mb.add_constraint(LinExpr({u_plus[(c, t)]: 1.0, u_minus[(c, t)]: 1.0}), LE, 1.0, name=f"excl[{c.value},{t}]")
    for c in LOAD_CARRIERS:
        keys = [(c, t) for t in range(T) if (c, t) in u_plus]
        if keys:
            mb.add_constraint(lsum(LinExpr({u_plus[k]: 1.0, u_minus[k]: 1.0}) for k in keys), LE, float(budgets.gamma_l), name=f"budget[{c.value}]")

    s_vars: dict[tuple[str, int], VariableHandle] = {}
    y_vars: dict[tuple[str, int], VariableHandle] = {}
    for cid in s_ids:
        for t in range(T):
            s_vars[(cid, t)] = mb.add_variable(f"s[{cid},{t}]", lb=0.0, ub=1.0)
            y_vars[(cid, t)] = mb.add_variable(f"y[{cid},{t}]", BINARY)

    def window(t: int, width: int) -> range:
        day_start = horizon.day_of_hour(t) * horizon.day_length
        return range(max(day_start, t - width + 1), t + 1)

    for cid in s_ids:
        gd, gi = budgets.gd(cid), budgets.gi(cid)
        for t in range(T):
            link = lsum(y_vars[(cid, v)] for v in window(t, gd)) + s_vars[(cid, t)]
            mb.add_constraint(link, EQ, 1.0, name=f"dur[{cid},{t}]")
            if budgets.interval_scope == PER_COMPONENT and gi > 0:
                mb.add_constraint(lsum(y_vars[(cid, v)] for v in window(t, gi)), LE, 1.0, name=f"intv[{cid},{t}]")

    if budgets.interval_scope == GLOBAL and s_ids:
        gi_all = max(budgets.gi(cid) for cid in s_ids)
        if gi_all > 0:
            for t in range(T):
                expr = lsum(y_vars[(cid, v)] for cid in s_ids for v in window(t, gi_all))
                mb.add_constraint(expr, LE, 1.0, name=f"intvg[{t}]")

    if s_ids:
        for t in range(T):
            expr = lsum(s_vars[(cid, t)] for cid in s_ids)
            mb.add_constraint(expr, GE, float(len(s_ids) - budgets.gamma_n), name=f"simult[{t}]")

    return UncertainVars(u_plus, u_minus, s_vars, y_vars)


def extract_scenario(instance: PlanningInstance, budgets: UncertaintyBudgets, uncertain: UncertainVars, result: SolveResult) -> tuple[ContingencyRealization, LoadRealization]:
    """Read the maximizing scenario out of a solved master."""
    horizon = instance.horizon
    T = horizon.period
    comps = instance.component_ids
    y = np.zeros((len(comps), T), np.int8)
    for (cid, t), h in uncertain.y.items():
        y[comps.index(cid), t] = int(round(result.value(h)))
    state = np.stack([states_from_starts(y[i], horizon, budgets.gd(comps[i])) for i in range(len(comps))]) if comps else np.zeros((0, T), np.int8)
    contingency = ContingencyRealization(comps, state, y)

    base = instance.loads.nominal_matrix()
    up = np.zeros(base.shape, np.int8)
    dn = np.zeros(base.shape, np.int8)
    for (c, t), h in uncertain.u_plus.items():
        up[LOAD_CARRIERS.index(c), t] = int(round(result.value(h)))
    for (c, t), h in uncertain.u_minus.items():
        dn[LOAD_CARRIERS.index(c), t] = int(round(result.value(h)))
    realized = base.copy()
    for i, c in enumerate(LOAD_CARRIERS):
        delta = budgets.delta(c, T)
        realized[i] = base[i] + delta * (up[i].astype(float) - dn[i].astype(float))
    return contingency, LoadRealization(up, dn, realized)


# ---------------------------------------------------------------------------
# the two master reformulations
# ---------------------------------------------------------------------------


@dataclass
class MasterModel:
    spec: ModelSpec
    sigma: VariableHandle
    uncertain: UncertainVars
    num_binary: int


def build_mps_sd(
    instance: PlanningInstance,
    budgets: UncertaintyBudgets,
    decision: InvestmentDecision,
    pool: Sequence[ZPattern],
    *,
    merge_exclusive: bool = True,
) -> MasterModel:
    """Strong-duality master: maximize sigma subject to, per pool entry, sigma
    bounded by that entry's dual objective under dual feasibility, with every
    uncertainty-dual product replaced by an exact big-M linearization."""
    if not pool:
        raise ValueError("the recourse pool must be non-empty")
    mb = ModelBuilder()
    uncertain = add_set_membership(mb, instance, budgets)
    key_to_handle = uncertain.by_key()
    sigma = mb.add_variable("sigma", lb=-math.inf, ub=math.inf)
    m_pi = dual_bound(instance)

    for r, z_pattern in enumerate(pool):
        skeleton = build_recourse_skeleton(instance, budgets, decision, z_pattern)
        template = skeleton.template

        pi: list[VariableHandle] = []
        for k, row in enumerate(template.rows):
            lb = -m_pi if row.is_eq else 0.0
            pi.append(mb.add_variable(f"pi[{r},{k}]", lb=lb, ub=m_pi))

        for col in template.cols:
            expr = LinExpr({pi[k]: a for k, a in col.entries})
            mb.add_constraint(expr, LE, col.c, name=f"dualfeas[{r},{col.name}]")

        dual_obj = LinExpr()
        # products grouped per row so exclusive pairs can share a bound row
        for k, row in enumerate(template.rows):
            dual_obj = dual_obj + LinExpr({pi[k]: row.b})
            if not row.par:
                continue
            if row.is_eq and row.par:
                raise DualizationError(f"uncertainty symbol on equality row {row.name!r}")
            par = dict(row.par)
            handled: set[tuple] = set()
            if merge_exclusive:
                for key, g in list(par.items()):
                    if key[0] != "u+":
                        continue
                    partner = ("u-",) + key[1:]
                    if partner not in par:
                        continue
                    wp, wm = linearize_exclusive_pair(
                        mb, key_to_handle[key], key_to_handle[partner], pi[k], m_pi, name=f"w[{r},{k},{key[1]},{key[2]}]"
                    )
                    dual_obj = dual_obj + LinExpr({wp: -g, wm: -par[partner]})
                    handled.add(key)
                    handled.add(partner)
            for key, g in par.items():
                if key in handled:
                    continue
                w = linearize_product(mb, key_to_handle[key], pi[k], m_pi, name=f"w[{r},{k},{key}]")
                dual_obj = dual_obj + LinExpr({w: -g})

        mb.add_constraint(LinExpr({sigma: 1.0}) - dual_obj, LE, 0.0, name=f"sigma[{r}]")

    mb.set_objective(LinExpr({sigma: 1.0}), MAXIMIZE)
    spec = mb.build()
    return MasterModel(spec=spec, sigma=sigma, uncertain=uncertain, num_binary=spec.num_binary)


def build_mps_kkt(
    instance: PlanningInstance,
    budgets: UncertaintyBudgets,
    decision: InvestmentDecision,
    pool: Sequence[ZPattern],
) -> MasterModel:
    """Optimality-conditions master: per pool entry, primal feasibility plus
    dual feasibility plus big-M complementary slackness with indicator
    binaries; sigma is bounded by the primal cost of each entry."""
    if not pool:
        raise ValueError("the recourse pool must be non-empty")
    mb = ModelBuilder()
    uncertain = add_set_membership(mb, instance, budgets)
    key_to_handle = uncertain.by_key()
    sigma = mb.add_variable("sigma", lb=-math.inf, ub=math.inf)
    m_pi = dual_bound(instance)

    for r, z_pattern in enumerate(pool):
        skeleton = build_recourse_skeleton(instance, budgets, decision, z_pattern)
        template = skeleton.template

        x: dict[int, VariableHandle] = {}
        for col in template.cols:
            x[col.var_index] = mb.add_variable(f"x[{r},{col.name}]", lb=0.0)

        pi: list[VariableHandle] = []
        for k, row in enumerate(template.rows):
            lb = -m_pi if row.is_eq else 0.0
            pi.append(mb.add_variable(f"pi[{r},{k}]", lb=lb, ub=m_pi))

        # primal feasibility with the uncertainty symbols in place
        for k, row in enumerate(template.rows):
            expr = LinExpr({x[i]: a for i, a in row.prim})
            expr = expr + LinExpr({key_to_handle[key]: g for key, g in row.par})
            mb.add_constraint(expr, EQ if row.is_eq else GE, row.b, name=f"prim[{r},{row.name}]")

        # dual feasibility (stationarity with the nonnegativity multipliers eliminated)
        for col in template.cols:
            expr = LinExpr({pi[k]: a for k, a in col.entries})
            mb.add_constraint(expr, LE, col.c, name=f"dualfeas[{r},{col.name}]")

        # complementary slackness on every inequality row
        for k, row in enumerate(template.rows):
            if row.is_eq:
                continue
            slack_bound = abs(row.b) + sum(abs(a) * skeleton.var_ub.get(i, 0.0) for i, a in row.prim) + sum(abs(g) for _, g in row.par)
            nu = mb.add_variable(f"nu[{r},{k}]", BINARY)
            slack = LinExpr({x[i]: a for i, a in row.prim}) + LinExpr({key_to_handle[key]: g for key, g in row.par})
            mb.add_constraint(slack - LinExpr({nu: slack_bound}), LE, row.b, name=f"csl[{r},{k}]")
            mb.add_constraint(LinExpr({pi[k]: 1.0, nu: m_pi}), LE, m_pi, name=f"csd[{r},{k}]")

        # complementary slackness on variable nonnegativity:
        # reduced cost c - a.pi <= red_bound * (1 - zeta), x <= ub * zeta
        for col in template.cols:
            ub_x = skeleton.var_ub.get(col.var_index, 0.0)
            red_bound = abs(col.c) + sum(abs(a) * m_pi for _, a in col.entries)
            zeta = mb.add_variable(f"zeta[{r},{col.name}]", BINARY)
            mb.add_constraint(LinExpr({x[col.var_index]: 1.0, zeta: -ub_x}), LE, 0.0, name=f"cvx[{r},{col.name}]")
            red = LinExpr({pi[k]: -a for k, a in col.entries})
            mb.add_constraint(red + LinExpr({zeta: red_bound}), LE, red_bound - col.c, name=f"cvd[{r},{col.name}]")

        cost = LinExpr({x[col.var_index]: col.c for col in template.cols if col.c})
        mb.add_constraint(LinExpr({sigma: 1.0}) - cost, LE, 0.0, name=f"sigma[{r}]")

    mb.set_objective(LinExpr({sigma: 1.0}), MAXIMIZE)
    spec = mb.build()
    return MasterModel(spec=spec, sigma=sigma, uncertain=uncertain, num_binary=spec.num_binary)


# ---------------------------------------------------------------------------
# recourse subproblem and the inner loop
# ---------------------------------------------------------------------------


def build_sps(instance: PlanningInstance, decision: InvestmentDecision, load_series: np.ndarray, state_series: np.ndarray):
    """Recourse MILP for a fixed scenario: both copies, charge flags free."""
    mb = ModelBuilder()
    invest = InvestTerms.fixed(instance, decision)
    mode0 = FormulationMode(invest=invest, loads=load_series, allow_shed=False)
    block0 = build_scenario0_block(mb, mode0, instance)
    mode1 = FormulationMode(invest=invest, loads=load_series, states=state_series, allow_shed=True)
    block1 = build_scenario1_block(mb, mode1, instance)
    terms = objective_terms(instance, invest=None, block0=block0, block1=block1)
    mb.set_objective(terms["f_ope0"] + terms["f_shed1"])
    return mb.build(), block0, block1


@dataclass
class InnerTraceRow:
    r: int
    lb: float
    ub: float
    mps_time: float
    sps_time: float
    mps_binaries: int


@dataclass
class InnerResult:
    value: float
    contingency: Optional[ContingencyRealization]
    load: Optional[LoadRealization]
    converged: bool
    iterations: int
    trace: list[InnerTraceRow] = field(default_factory=list)
    pool_size: int = 0
    stalled: bool = False


def solve_subproblem(
    instance: PlanningInstance,
    budgets: UncertaintyBudgets,
    decision: InvestmentDecision,
    *,
    method: str = SD,
    eps: float = 1e-4,
    max_iter: int = 30,
    merge_exclusive: bool = True,
    options: SolveOptions | None = None,
) -> InnerResult:
    """Worst-case cost of a fixed plan by the inner generation loop.

    Alternates the chosen master (upper bound, candidate scenario) with the
    recourse MILP (lower bound, new charge-flag pattern) until the bounds
    meet.  An infeasible recourse means the candidate scenario admits no
    normal-copy dispatch at all, so the plan's worst case is unbounded and
    the scenario is returned immediately for the outer loop to cut.
    """
    if method not in (SD, KKT):
        raise ValueError(f"unknown inner method {method!r}")
    options = options or SolveOptions(rel_gap=1e-9)

    pool: list[ZPattern] = [empty_z_pattern(instance)]
    seen = {_pool_fingerprint(pool[0])}
    lb, ub = -math.inf, math.inf
    best: tuple[ContingencyRealization, LoadRealization] | None = None
    trace: list[InnerTraceRow] = []
    stalled = False
    it = 0

    for it in range(1, max_iter + 1):
        t0 = time.perf_counter()
        if method == SD:
            master = build_mps_sd(instance, budgets, decision, pool, merge_exclusive=merge_exclusive)
        else:
            master = build_mps_kkt(instance, budgets, decision, pool)
        res = solve(master.spec, options)
        mps_time = time.perf_counter() - t0
        if res.status != OPTIMAL:
            raise RuntimeError(f"inner master ended with status {res.status}: {res.message}")
        ub = min(ub, res.value(master.sigma))
        contingency, load = extract_scenario(instance, budgets, master.uncertain, res)

        t1 = time.perf_counter()
        dispatch = min_shed_dispatch(instance, decision, load.realized, contingency.state, options=options)
        sps_time = time.perf_counter() - t1
        trace.append(InnerTraceRow(it, lb, ub, mps_time, sps_time, master.num_binary))

        if not dispatch.feasible:
            return InnerResult(math.inf, contingency, load, True, it, trace, len(pool))
        if dispatch.objective > lb:
            lb = dispatch.objective
            best = (contingency, load)
        trace[-1].lb = lb

        if ub - lb <= eps:
            break

        z_pattern = {
            0: dict(dispatch.plan.scenario0.charge_state),
            1: dict(dispatch.plan.scenario1.charge_state),
        }
        fp = _pool_fingerprint(z_pattern)
        if fp in seen:
            stalled = True  # recourse pattern repeats: the pool cannot grow further
            break
        seen.add(fp)
        pool.append(z_pattern)

    converged = ub - lb <= eps
    contingency, load = best if best is not None else (None, None)
    return InnerResult(lb, contingency, load, converged, it, trace, len(pool), stalled)


def _pool_fingerprint(z_pattern: ZPattern) -> bytes:
    parts = []
    for sc in (0, 1):
        for kind in sorted(z_pattern[sc], key=lambda k: k.value):
            parts.append(np.asarray(z_pattern[sc][kind]).astype(np.int8).tobytes())
    return b"|".join(parts)

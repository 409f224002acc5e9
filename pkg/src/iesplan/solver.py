"""Minimal backend-neutral interface for linear and mixed-integer linear programs.

Every optimization in this package goes through :class:`ModelBuilder` and
:func:`solve`.  The single reference backend is HiGHS, reached through
``scipy.optimize.milp``; the interface deliberately exposes no backend-specific
knobs so an alternative backend is a drop-in replacement of :func:`solve`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp

CONTINUOUS = "continuous"
BINARY = "binary"

LE = "<="
GE = ">="
EQ = "=="

MINIMIZE = "min"
MAXIMIZE = "max"

#: statuses a SolveResult may carry
OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
TIME_LIMIT = "time-limit"
ERROR = "error"


class SolverError(RuntimeError):
    """The backend failed for a reason other than model infeasibility."""


@dataclass(frozen=True)
class VariableHandle:
    """Opaque reference to one model variable."""

    index: int
    kind: str
    lb: float
    ub: float
    name: str = ""

    def __post_init__(self):
        if self.lb > self.ub:
            raise ValueError(f"variable {self.name!r}: lb {self.lb} > ub {self.ub}")
        if self.kind == BINARY and not (self.lb >= 0.0 and self.ub <= 1.0):
            raise ValueError(f"binary variable {self.name!r} must have bounds within [0, 1]")


class LinExpr:
    """Sparse linear expression: sum of coefficient * variable plus a constant.

    Duplicate handles are merged on construction, so the canonical form is
    unique.  Instances are immutable; arithmetic returns new expressions.
    """

    __slots__ = ("terms", "const")

    def __init__(self, terms: Mapping[VariableHandle, float] | Iterable[tuple[VariableHandle, float]] = (), const: float = 0.0):
        merged: dict[VariableHandle, float] = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        for handle, coef in items:
            coef = float(coef)
            if not math.isfinite(coef):
                raise ValueError(f"non-finite coefficient for {handle.name!r}")
            if coef != 0.0:
                merged[handle] = merged.get(handle, 0.0) + coef
        self.terms = {h: c for h, c in merged.items() if c != 0.0}
        if not math.isfinite(const):
            raise ValueError("non-finite constant term")
        self.const = float(const)

    @staticmethod
    def coerce(value) -> "LinExpr":
        if isinstance(value, LinExpr):
            return value
        if isinstance(value, VariableHandle):
            return LinExpr({value: 1.0})
        return LinExpr((), float(value))

    def __add__(self, other) -> "LinExpr":
        other = LinExpr.coerce(other)
        terms = dict(self.terms)
        for h, c in other.terms.items():
            terms[h] = terms.get(h, 0.0) + c
        return LinExpr(terms, self.const + other.const)

    __radd__ = __add__

    def __sub__(self, other) -> "LinExpr":
        return self + LinExpr.coerce(other) * -1.0

    def __rsub__(self, other) -> "LinExpr":
        return LinExpr.coerce(other) + self * -1.0

    def __mul__(self, scalar: float) -> "LinExpr":
        scalar = float(scalar)
        return LinExpr({h: c * scalar for h, c in self.terms.items()}, self.const * scalar)

    __rmul__ = __mul__

    def __repr__(self):
        parts = [f"{c:+g}*{h.name or h.index}" for h, c in self.terms.items()]
        if self.const or not parts:
            parts.append(f"{self.const:+g}")
        return " ".join(parts)


def lsum(items: Iterable) -> LinExpr:
    """Sum handles, expressions, and numbers into one LinExpr."""
    total = LinExpr()
    for item in items:
        total = total + LinExpr.coerce(item)
    return total


@dataclass(frozen=True)
class Constraint:
    expr_terms: tuple[tuple[int, float], ...]  # (variable index, coefficient)
    sense: str
    rhs: float
    name: str = ""
    tag: tuple = ()


@dataclass(frozen=True)
class ModelSpec:
    """A self-contained LP/MILP: variables, constraints, and one objective."""

    variables: tuple[VariableHandle, ...]
    constraints: tuple[Constraint, ...]
    objective: tuple[tuple[int, float], ...]
    objective_const: float
    direction: str

    @property
    def num_binary(self) -> int:
        return sum(1 for v in self.variables if v.kind == BINARY)

    @property
    def num_continuous(self) -> int:
        return sum(1 for v in self.variables if v.kind == CONTINUOUS)

    def to_lp_format(self) -> str:
        """Render the model as LP-format text for debugging."""

        def var_name(i: int) -> str:
            v = self.variables[i]
            return v.name if v.name else f"x{i}"

        def expr_text(terms, const=0.0) -> str:
            parts = []
            for i, c in terms:
                parts.append(f"{'+' if c >= 0 else '-'} {abs(c):.12g} {var_name(i)}")
            if const:
                parts.append(f"{'+' if const >= 0 else '-'} {abs(const):.12g}")
            out = " ".join(parts) if parts else "0"
            return out.lstrip("+ ").replace("+ -", "- ")

        lines = ["Minimize" if self.direction == MINIMIZE else "Maximize"]
        lines.append(" obj: " + expr_text(self.objective))
        lines.append("Subject To")
        for k, con in enumerate(self.constraints):
            op = {LE: "<=", GE: ">=", EQ: "="}[con.sense]
            cname = con.name or f"c{k}"
            lines.append(f" {cname}: {expr_text(con.expr_terms)} {op} {con.rhs:.12g}")
        lines.append("Bounds")
        for i, v in enumerate(self.variables):
            lo = "-inf" if v.lb == -math.inf else f"{v.lb:.12g}"
            hi = "+inf" if v.ub == math.inf else f"{v.ub:.12g}"
            lines.append(f" {lo} <= {var_name(i)} <= {hi}")
        binaries = [var_name(i) for i, v in enumerate(self.variables) if v.kind == BINARY]
        if binaries:
            lines.append("Binary")
            lines.append(" " + " ".join(binaries))
        lines.append("End")
        return "\n".join(lines) + "\n"


class ModelBuilder:
    """Incremental construction of a ModelSpec.

    Handle indices are assigned in insertion order, so identical build
    sequences produce identical models.
    """

    def __init__(self):
        self._variables: list[VariableHandle] = []
        self._constraints: list[Constraint] = []
        self._objective: LinExpr = LinExpr()
        self._direction: str = MINIMIZE

    def add_variable(self, name: str = "", kind: str = CONTINUOUS, lb: float = 0.0, ub: float = math.inf) -> VariableHandle:
        if kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"unknown variable kind {kind!r}")
        if kind == BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        handle = VariableHandle(index=len(self._variables), kind=kind, lb=float(lb), ub=float(ub), name=name)
        self._variables.append(handle)
        return handle

    def add_constraint(self, expr, sense: str, rhs: float = 0.0, name: str = "", tag: tuple = ()) -> int:
        if sense not in (LE, GE, EQ):
            raise ValueError(f"unknown constraint sense {sense!r}")
        expr = LinExpr.coerce(expr)
        rhs = float(rhs) - expr.const
        if not math.isfinite(rhs):
            raise ValueError("non-finite constraint right-hand side")
        for h in expr.terms:
            if h.index >= len(self._variables) or self._variables[h.index] is not h:
                raise ValueError(f"constraint references unregistered handle {h.name!r}")
        terms = tuple(sorted(((h.index, c) for h, c in expr.terms.items())))
        self._constraints.append(Constraint(terms, sense, rhs, name=name, tag=tag))
        return len(self._constraints) - 1

    def set_objective(self, expr, direction: str = MINIMIZE) -> None:
        if direction not in (MINIMIZE, MAXIMIZE):
            raise ValueError(f"unknown objective direction {direction!r}")
        self._objective = LinExpr.coerce(expr)
        self._direction = direction

    @property
    def num_variables(self) -> int:
        return len(self._variables)

    def build(self) -> ModelSpec:
        obj = tuple(sorted(((h.index, c) for h, c in self._objective.terms.items())))
        return ModelSpec(
            variables=tuple(self._variables),
            constraints=tuple(self._constraints),
            objective=obj,
            objective_const=self._objective.const,
            direction=self._direction,
        )


@dataclass
class SolveOptions:
    """Options shared by all backends.

    rel_gap defaults to 1e-6 for pure LPs and 1e-4 for models with binaries;
    pass an explicit value to override.  The seed is recorded for run
    manifests; HiGHS is deterministic for a fixed model regardless.
    """

    rel_gap: float | None = None
    time_limit: float | None = None
    seed: int = 0


@dataclass
class SolveResult:
    status: str
    objective: float | None
    values: np.ndarray | None
    rel_gap: float | None
    wall_time: float
    message: str = ""

    def value(self, handle: VariableHandle) -> float:
        if self.values is None:
            raise SolverError(f"no primal values available (status {self.status})")
        return float(self.values[handle.index])

    def value_expr(self, expr: LinExpr) -> float:
        return sum(c * self.value(h) for h, c in expr.terms.items()) + expr.const


_STATUS_MAP = {0: OPTIMAL, 1: TIME_LIMIT, 2: INFEASIBLE, 3: UNBOUNDED, 4: ERROR}


def solve(model: ModelSpec, options: SolveOptions | None = None) -> SolveResult:
    """Solve a ModelSpec with HiGHS and normalize the outcome.

    Raises SolverError only for backend failures; infeasible and unbounded
    models are reported through the result status.
    """
    options = options or SolveOptions()
    n = len(model.variables)
    start = time.perf_counter()

    sign = 1.0 if model.direction == MINIMIZE else -1.0
    c = np.zeros(n)
    for i, coef in model.objective:
        c[i] = sign * coef

    integrality = np.array([1 if v.kind == BINARY else 0 for v in model.variables])
    has_integers = bool(integrality.any())
    lb = np.array([v.lb for v in model.variables])
    ub = np.array([v.ub for v in model.variables])

    constraints = []
    if model.constraints:
        rows, cols, vals = [], [], []
        lo = np.empty(len(model.constraints))
        hi = np.empty(len(model.constraints))
        for k, con in enumerate(model.constraints):
            for i, coef in con.expr_terms:
                rows.append(k)
                cols.append(i)
                vals.append(coef)
            if con.sense == LE:
                lo[k], hi[k] = -np.inf, con.rhs
            elif con.sense == GE:
                lo[k], hi[k] = con.rhs, np.inf
            else:
                lo[k], hi[k] = con.rhs, con.rhs
        mat = sparse.csr_matrix((vals, (rows, cols)), shape=(len(model.constraints), n))
        constraints = [LinearConstraint(mat, lo, hi)]

    milp_options: dict = {"presolve": True}
    rel_gap = options.rel_gap
    if rel_gap is None:
        rel_gap = 1e-4 if has_integers else 1e-6
    if has_integers:
        milp_options["mip_rel_gap"] = rel_gap
    if options.time_limit is not None:
        milp_options["time_limit"] = float(options.time_limit)

    try:
        res = milp(
            c=c,
            constraints=constraints,
            integrality=integrality if has_integers else None,
            bounds=Bounds(lb, ub),
            options=milp_options,
        )
    except Exception as exc:  # pragma: no cover - backend crash
        raise SolverError(f"backend failure: {exc}") from exc

    wall = time.perf_counter() - start
    status = _STATUS_MAP.get(res.status, ERROR)
    if status == ERROR:
        raise SolverError(f"backend error: {res.message}")

    values = None
    objective = None
    gap = None
    if res.x is not None:
        values = np.asarray(res.x, dtype=float)
        objective = sign * float(res.fun) + model.objective_const
        gap = float(res.mip_gap) if getattr(res, "mip_gap", None) is not None else 0.0
    elif status == TIME_LIMIT:
        status = ERROR
        raise SolverError(f"time limit hit with no incumbent: {res.message}")

    return SolveResult(
        status=status,
        objective=objective,
        values=values,
        rel_gap=gap,
        wall_time=wall,
        message=str(res.message),
    )


def dump_model(model: ModelSpec, path) -> None:
    """Write the model to an LP-format file (debugging aid, flag-gated by callers)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model.to_lp_format())

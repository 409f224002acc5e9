"""Budgeted uncertainty sets for component contingencies and load deviations.

The contingency set treats failures like unit-commitment outages: a binary
start indicator per component and hour, an exact failure duration, a minimum
interval between consecutive failures, and a cap on simultaneous outages.
The load set moves each demand up or down by a fixed hourly deviation under
a per-carrier budget.  Windows never straddle typical-day boundaries, since
the days are not chronologically adjacent.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

from .model import LOAD_CARRIERS, Carrier, Horizon, LoadProfile, PlanningInstance

PER_COMPONENT = "per_component"
GLOBAL = "global"


class ScenarioExplosionError(RuntimeError):
    """Enumeration would exceed the caller's scenario limit."""


@dataclass(frozen=True)
class UncertaintyBudgets:
    """Conservativeness knobs for both uncertainty sets.

    gamma_n   max simultaneously failed components at any hour
    gamma_i   min hours between consecutive failure starts (per component,
              or one shared cap on starts when interval_scope is "global")
    gamma_d   exact failure duration in hours per component
    gamma_l   max deviated hours per demand carrier over the horizon
    delta_load  hourly deviation magnitude per carrier (MW)
    """

    gamma_n: int = 0
    gamma_i: Mapping[str, int] | int = 0
    gamma_d: Mapping[str, int] | int = 0
    gamma_l: int = 0
    delta_load: Optional[Mapping[Carrier, np.ndarray]] = None
    interval_scope: str = PER_COMPONENT

    def gi(self, component: str) -> int:
        if isinstance(self.gamma_i, Mapping):
            return int(self.gamma_i.get(component, 0))
        return int(self.gamma_i)

    def gd(self, component: str) -> int:
        if isinstance(self.gamma_d, Mapping):
            return int(self.gamma_d.get(component, 0))
        return int(self.gamma_d)

    def delta(self, carrier: Carrier, period: int) -> np.ndarray:
        if self.delta_load is None:
            return np.zeros(period)
        return np.asarray(self.delta_load.get(carrier, np.zeros(period)), dtype=float)

    def validate(self, components: Sequence[str]) -> list[str]:
        problems = []
        if self.gamma_n < 0:
            problems.append("gamma_n must be >= 0")
        if self.gamma_l < 0:
            problems.append("gamma_l must be >= 0")
        for c in components:
            if self.gd(c) < 0:
                problems.append(f"gamma_d[{c}] must be >= 0")
            if self.gd(c) > 0 and self.gi(c) < self.gd(c):
                problems.append(f"gamma_i[{c}] must be >= gamma_d[{c}]")
        if self.interval_scope not in (PER_COMPONENT, GLOBAL):
            problems.append(f"unknown interval_scope {self.interval_scope!r}")
        if self.delta_load is not None:
            for carrier, series in self.delta_load.items():
                if np.any(np.asarray(series) < 0):
                    problems.append(f"delta_load[{carrier.value}] must be >= 0")
        return problems

    def is_nominal_only(self, components: Sequence[str]) -> bool:
        no_failures = self.gamma_n == 0 or all(self.gd(c) == 0 for c in components)
        no_loads = self.gamma_l == 0 or self.delta_load is None
        return no_failures and no_loads


@dataclass(frozen=True)
class MembershipResult:
    member: bool
    violations: tuple[tuple[str, str], ...] = ()

    def __bool__(self):
        return self.member


@dataclass(frozen=True)
class ContingencyRealization:
    """Operating state (1 = up) and failure starts per component and hour."""

    components: tuple[str, ...]
    state: np.ndarray  # (C, T) 0/1
    start: np.ndarray  # (C, T) 0/1

    def __post_init__(self):
        object.__setattr__(self, "state", np.asarray(self.state, dtype=np.int8))
        object.__setattr__(self, "start", np.asarray(self.start, dtype=np.int8))

    @staticmethod
    def nominal(components: Sequence[str], period: int) -> "ContingencyRealization":
        c = len(components)
        return ContingencyRealization(tuple(components), np.ones((c, period), np.int8), np.zeros((c, period), np.int8))

    def state_of(self, component: str) -> np.ndarray:
        return self.state[self.components.index(component)]

    def fingerprint(self) -> bytes:
        return self.state.tobytes() + b"|" + self.start.tobytes()

    def to_text(self) -> str:
        """Compact matrix form for trace logs: one 0/1 row per component."""
        lines = []
        for i, cid in enumerate(self.components):
            s = "".join(str(int(v)) for v in self.state[i])
            y = "".join(str(int(v)) for v in self.start[i])
            lines.append(f"{cid} s={s} y={y}")
        return "\n".join(lines)


@dataclass(frozen=True)
class LoadRealization:
    """Up/down deviation indicators and the realized demand they induce."""

    u_plus: np.ndarray  # (3, T) 0/1 in LOAD_CARRIERS order
    u_minus: np.ndarray
    realized: np.ndarray  # (3, T) MW

    def __post_init__(self):
        object.__setattr__(self, "u_plus", np.asarray(self.u_plus, dtype=np.int8))
        object.__setattr__(self, "u_minus", np.asarray(self.u_minus, dtype=np.int8))
        object.__setattr__(self, "realized", np.asarray(self.realized, dtype=float))

    @staticmethod
    def nominal(profile: LoadProfile) -> "LoadRealization":
        base = profile.nominal_matrix()
        z = np.zeros(base.shape, np.int8)
        return LoadRealization(z, z.copy(), base)

    def load_of(self, carrier: Carrier) -> np.ndarray:
        return self.realized[LOAD_CARRIERS.index(carrier)]

    def fingerprint(self) -> bytes:
        return self.u_plus.tobytes() + b"|" + self.u_minus.tobytes()

    def to_text(self) -> str:
        lines = []
        for i, c in enumerate(LOAD_CARRIERS):
            up = "".join(str(int(v)) for v in self.u_plus[i])
            dn = "".join(str(int(v)) for v in self.u_minus[i])
            lines.append(f"{c.value} u+={up} u-={dn}")
        return "\n".join(lines)


def scenario_fingerprint(contingency: ContingencyRealization, load: LoadRealization) -> bytes:
    return contingency.fingerprint() + b"#" + load.fingerprint()


def _day_windows(horizon: Horizon, t: int, width: int) -> range:
    """Hours [start, t] of the window ending at t, truncated at the typical-day start."""
    day_start = horizon.day_of_hour(t) * horizon.day_length
    return range(max(day_start, t - width + 1), t + 1)


def check_contingency(realization: ContingencyRealization, budgets: UncertaintyBudgets, horizon: Horizon) -> MembershipResult:
    """Exact membership test for the contingency set."""
    s, y = realization.state, realization.start
    comps = realization.components
    T = horizon.period
    if s.shape != (len(comps), T) or y.shape != (len(comps), T):
        raise ValueError("realization dimensions do not match the horizon")

    violations: list[tuple[str, str]] = []
    if not (np.isin(s, (0, 1)).all() and np.isin(y, (0, 1)).all()):
        violations.append(("BINARY", "state and start entries must be 0/1"))

    n_total = len(comps)
    for t in range(T):
        down = n_total - int(s[:, t].sum())
        if down > budgets.gamma_n:
            violations.append(("SIMULTANEITY", f"{down} components down at hour {t}, budget {budgets.gamma_n}"))

    for i, cid in enumerate(comps):
        gd = budgets.gd(cid)
        gi = budgets.gi(cid)
        if gd == 0:
            # zero duration means the component cannot fail
            if y[i].any() or (s[i] == 0).any():
                violations.append(("DURATION_LINK", f"{cid}: failures not allowed with zero duration budget"))
            continue
        for t in range(T):
            window = _day_windows(horizon, t, gd)
            total = int(y[i, list(window)].sum())
            if total != 1 - int(s[i, t]):
                violations.append(("DURATION_LINK", f"{cid}: hour {t} start-window sum {total} != 1 - state {int(s[i, t])}"))
        if budgets.interval_scope == PER_COMPONENT and gi > 0:
            for t in range(T):
                window = _day_windows(horizon, t, gi)
                if int(y[i, list(window)].sum()) > 1:
                    violations.append(("INTERVAL", f"{cid}: more than one start within {gi} hours ending at {t}"))

    if budgets.interval_scope == GLOBAL:
        gi_all = max((budgets.gi(c) for c in comps), default=0)
        if gi_all > 0:
            for t in range(T):
                window = list(_day_windows(horizon, t, gi_all))
                if int(y[:, window].sum()) > 1:
                    violations.append(("INTERVAL", f"more than one system-wide start within {gi_all} hours ending at {t}"))

    return MembershipResult(not violations, tuple(violations))


def realize_load(u_plus: np.ndarray, u_minus: np.ndarray, nominal: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Affine deviation map; rejects configurations that drive demand negative."""
    realized = np.asarray(nominal, float) + np.asarray(delta, float) * (np.asarray(u_plus) - np.asarray(u_minus))
    if np.any(realized < 0):
        raise ValueError("realized load negative; delta_load exceeds nominal demand")
    return realized


def check_load(realization: LoadRealization, budgets: UncertaintyBudgets, profile: LoadProfile) -> MembershipResult:
    """Exact membership test for the load set."""
    up, dn = realization.u_plus, realization.u_minus
    base = profile.nominal_matrix()
    T = base.shape[1]
    if up.shape != base.shape or dn.shape != base.shape:
        raise ValueError("realization dimensions do not match the profile")

    violations: list[tuple[str, str]] = []
    if not (np.isin(up, (0, 1)).all() and np.isin(dn, (0, 1)).all()):
        violations.append(("BINARY", "deviation indicators must be 0/1"))
    for i, carrier in enumerate(LOAD_CARRIERS):
        both = up[i] + dn[i]
        if np.any(both > 1):
            violations.append(("MUTUAL_EXCLUSION", f"{carrier.value}: up and down active in the same hour"))
        active = int(both.sum())
        if active > budgets.gamma_l:
            violations.append(("BUDGET", f"{carrier.value}: {active} deviations exceed budget {budgets.gamma_l}"))
        delta = budgets.delta(carrier, T)
        expected = base[i] + delta * (up[i].astype(float) - dn[i].astype(float))
        if not np.allclose(realization.realized[i], expected, atol=1e-9):
            violations.append(("AFFINE_MAP", f"{carrier.value}: realized series is not nominal + delta * u"))
        if np.any(realization.realized[i] < 0):
            violations.append(("NEGATIVE_LOAD", f"{carrier.value}: realized demand negative"))

    return MembershipResult(not violations, tuple(violations))


def _start_patterns(day_len: int, gi: int, gd: int) -> list[tuple[int, ...]]:
    """All within-day start-hour tuples with at least gi hours between starts."""
    if gd == 0:
        return [()]
    out: list[tuple[int, ...]] = []

    def extend(prefix: tuple[int, ...], next_min: int):
        out.append(prefix)
        for v in range(next_min, day_len):
            extend(prefix + (v,), v + max(gi, 1))

    extend((), 0)
    return out


def _component_day_patterns(horizon: Horizon, budgets: UncertaintyBudgets, component: str) -> list[np.ndarray]:
    """Per-day y rows for one component, as full-period arrays."""
    gd, gi = budgets.gd(component), budgets.gi(component)
    day_patterns = _start_patterns(horizon.day_length, gi, gd)
    per_day: list[list[tuple[int, ...]]] = [day_patterns for _ in range(horizon.n_days)]
    rows: list[np.ndarray] = []
    for combo in itertools.product(*per_day):
        y = np.zeros(horizon.period, np.int8)
        for day, starts in enumerate(combo):
            for v in starts:
                y[day * horizon.day_length + v] = 1
        rows.append(y)
    return rows


def states_from_starts(y: np.ndarray, horizon: Horizon, gd: int) -> np.ndarray:
    """Derive the 0/1 operating state implied by failure starts."""
    T = horizon.period
    s = np.ones(T, np.int8)
    if gd <= 0:
        return s
    for t in range(T):
        if int(y[list(_day_windows(horizon, t, gd))].sum()) >= 1:
            s[t] = 0
    return s


def estimate_scenario_count(budgets: UncertaintyBudgets, components: Sequence[str], horizon: Horizon) -> int:
    """Upper bound on |contingency set x load set| before budget filtering."""
    total = 1
    for c in components:
        total *= len(_start_patterns(horizon.day_length, budgets.gi(c), budgets.gd(c))) ** horizon.n_days
    per_carrier = 0
    T = horizon.period
    for k in range(min(budgets.gamma_l, T) + 1):
        per_carrier += math.comb(T, k) * 2**k
    total *= per_carrier ** len(LOAD_CARRIERS)
    return total


def enumerate_contingencies(budgets: UncertaintyBudgets, components: Sequence[str], horizon: Horizon, limit: int | None = None) -> Iterator[ContingencyRealization]:
    """Yield every member of the contingency set exactly once."""
    comps = tuple(components)
    per_component = [_component_day_patterns(horizon, budgets, c) for c in comps]
    count = 0
    for combo in itertools.product(*per_component) if comps else [()]:
        y = np.array(combo, np.int8).reshape(len(comps), horizon.period)
        s = np.stack([states_from_starts(y[i], horizon, budgets.gd(comps[i])) for i in range(len(comps))]) if comps else np.zeros((0, horizon.period), np.int8)
        realization = ContingencyRealization(comps, s, y)
        if not check_contingency(realization, budgets, horizon).member:
            continue
        count += 1
        if limit is not None and count > limit:
            raise ScenarioExplosionError(f"contingency enumeration exceeds limit {limit}")
        yield realization


def enumerate_load_realizations(budgets: UncertaintyBudgets, profile: LoadProfile, horizon: Horizon, limit: int | None = None) -> Iterator[LoadRealization]:
    """Yield every member of the load set exactly once (per-carrier budget)."""
    base = profile.nominal_matrix()
    T = horizon.period

    def carrier_patterns() -> list[tuple[np.ndarray, np.ndarray]]:
        pats = []
        for k in range(min(budgets.gamma_l, T) + 1):
            for hours in itertools.combinations(range(T), k):
                for signs in itertools.product((1, -1), repeat=k):
                    up = np.zeros(T, np.int8)
                    dn = np.zeros(T, np.int8)
                    for hh, sg in zip(hours, signs):
                        (up if sg > 0 else dn)[hh] = 1
                    pats.append((up, dn))
        return pats

    pats = carrier_patterns()
    count = 0
    for combo in itertools.product(pats, repeat=len(LOAD_CARRIERS)):
        up = np.stack([c[0] for c in combo])
        dn = np.stack([c[1] for c in combo])
        realized = np.empty_like(base)
        ok = True
        for i, carrier in enumerate(LOAD_CARRIERS):
            delta = budgets.delta(carrier, T)
            realized[i] = base[i] + delta * (up[i].astype(float) - dn[i].astype(float))
            if np.any(realized[i] < 0):
                ok = False
                break
        if not ok:
            continue
        count += 1
        if limit is not None and count > limit:
            raise ScenarioExplosionError(f"load enumeration exceeds limit {limit}")
        yield LoadRealization(up, dn, realized)


def enumerate_scenarios(
    budgets: UncertaintyBudgets,
    components: Sequence[str],
    horizon: Horizon,
    profile: LoadProfile,
    limit: int = 1_000_000,
) -> Iterator[tuple[ContingencyRealization, LoadRealization]]:
    """Stream the full product of both sets, guarding against explosion.

    The pre-check uses an upper-bound count, so a run may be rejected even
    though budget filtering would have kept it below the limit; raise the
    limit explicitly for such cases.
    """
    estimate = estimate_scenario_count(budgets, components, horizon)
    if estimate > limit:
        raise ScenarioExplosionError(f"estimated {estimate} scenarios exceeds limit {limit}")
    loads = list(enumerate_load_realizations(budgets, profile, horizon))
    for contingency in enumerate_contingencies(budgets, components, horizon):
        for load in loads:
            yield contingency, load


def budgets_from_instance(instance: PlanningInstance, gamma_n: int, gamma_i: int, gamma_d: int, gamma_l: int = 0, delta_relative: float = 0.0, interval_scope: str = PER_COMPONENT) -> UncertaintyBudgets:
    """Convenience constructor: uniform budgets, deviations as a fraction of nominal."""
    comps = instance.component_ids
    delta = None
    if delta_relative > 0.0:
        delta = {c: delta_relative * instance.loads.nominal[c] for c in LOAD_CARRIERS}
    return UncertaintyBudgets(
        gamma_n=gamma_n,
        gamma_i={c: gamma_i for c in comps},
        gamma_d={c: gamma_d for c in comps},
        gamma_l=gamma_l,
        delta_load=delta,
        interval_scope=interval_scope,
    )

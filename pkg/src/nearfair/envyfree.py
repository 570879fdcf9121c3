"""Envy-free allocation pipeline for group-homogeneous assignment markets.

All agents share one demand and agents inside a group share one utility
function, so between-group envy can be measured by scaling a group's utility
for another group's allocation by the size ratio.  A fractional envy-free
allocation is built by an exact event-driven greedy process (every
unsaturated agent eats its favorite still-available bundle at unit rate);
rounding then follows the iterative scheme, except that active groups are
protected by pairwise no-new-envy inequalities instead of utility-equality
rows and the total-conservation row is never imposed.  Admissible budgets
satisfy

    sum_l 2(k_l - 1)/(alpha_l + 1) + omega*/(delta + 1) <= 1/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .errors import BudgetError, InvalidInstanceError, InvariantViolation
from .exactlp import LinearProgram, feasible_vertex
from .model import (
    Allocation,
    Bundle,
    Instance,
    Pair,
    UtilityModel,
    enumerate_bundles,
)
from .rationals import ONE, ZERO


# ---------------------------------------------------------------------------
# group-homogeneous instances
# ---------------------------------------------------------------------------


@dataclass
class HomogeneousInstance:
    """Assignment instance where demands are uniform and utilities are
    constant inside every group."""

    instance: Instance
    utilities: UtilityModel

    def __post_init__(self):
        demands = {a.demand for a in self.instance.agents}
        if len(demands) > 1:
            raise InvalidInstanceError(
                f"demands must be uniform, got {sorted(demands)}"
            )
        ids = {a.id for a in self.instance.agents}
        if self.instance.binding != ids:
            self.instance = Instance(
                agents=self.instance.agents,
                resources=self.instance.resources,
                binding=ids,
                dimensions=self.instance.dimensions,
                acceptability=self.instance.acceptability,
            )
        self._rep: dict[tuple[str, str], str] = {}
        for dim in self.instance.dimensions:
            for g in self.instance.groups_in(dim):
                members = sorted(self.instance.group_members(dim, g))
                self._rep[(dim, g)] = members[0]
                probe = enumerate_bundles(members[0], self.instance)
                for b in members[1:]:
                    for q in probe:
                        if self.utilities.of(b, q) != self.utilities.of(members[0], q):
                            raise InvalidInstanceError(
                                f"agents {members[0]!r} and {b!r} of group "
                                f"({dim},{g}) disagree on bundle {q}"
                            )

    @property
    def omega_star(self) -> int:
        return self.instance.omega_star

    def group_utility_of(self, dim: str, group_id: str, bundle: Bundle) -> Fraction:
        """The common utility the group assigns to a bundle."""
        return self.utilities.of(self._rep[(dim, group_id)], bundle)

    def group_size(self, dim: str, group_id: str) -> int:
        return len(self.instance.group_members(dim, group_id))

    def group_best(self, dim: str, group_id: str) -> Fraction:
        return self.utilities.group_max(self.instance, dim, group_id)


# ---------------------------------------------------------------------------
# greedy fractional stage
# ---------------------------------------------------------------------------


@dataclass
class GreedyTrace:
    events: list[tuple[Fraction, str, str]] = field(default_factory=list)
    agent_times: dict[str, Fraction] = field(default_factory=dict)
    bundle_times: dict[Bundle, Fraction] = field(default_factory=dict)


def greedy_fractional_ef(h: HomogeneousInstance) -> tuple[Allocation, GreedyTrace]:
    """Exact continuous-limit greedy: unsaturated agents consume their
    favorite available bundle at unit rate; the next event is the earliest
    agent saturation (total mass one) or resource saturation (consumption
    reaches capacity).  Resources saturate bundles that use them.
    """
    inst = h.instance
    bundles = {a.id: enumerate_bundles(a.id, inst) for a in inst.agents}
    x: dict[Pair, Fraction] = {}
    consumed: dict[str, Fraction] = {r: ZERO for r, _ in inst.resources}
    total: dict[str, Fraction] = {a.id: ZERO for a in inst.agents}
    saturated_r: set[str] = set()
    done_agents: set[str] = set()
    trace = GreedyTrace()
    now = ZERO
    max_events = len(inst.agents) + len(inst.resources)

    def available(q: Bundle) -> bool:
        return all(r not in saturated_r for r in q.resources())

    for _ in range(max_events + 1):
        choices: dict[str, Bundle] = {}
        for a in inst.agents:
            if a.id in done_agents:
                continue
            open_bundles = [q for q in bundles[a.id] if available(q)]
            if not open_bundles:
                continue
            best = max(h.utilities.of(a.id, q) for q in open_bundles)
            pick = next(q for q in open_bundles if h.utilities.of(a.id, q) == best)
            choices[a.id] = pick
        if not choices:
            break
        rate: dict[str, Fraction] = {}
        for a, q in choices.items():
            for r, m in q.items:
                rate[r] = rate.get(r, ZERO) + m
        dt: Optional[Fraction] = None
        for a in choices:
            dt = min(dt, 1 - total[a]) if dt is not None else 1 - total[a]
        for r, rho in rate.items():
            if rho > 0 and r not in saturated_r:
                t_r = (inst.capacity(r) - consumed[r]) / rho
                dt = min(dt, t_r) if dt is not None else t_r
        if dt is None or dt <= 0:
            raise InvariantViolation(f"greedy stalled at t={now}")
        for a, q in choices.items():
            x[(a, q)] = x.get((a, q), ZERO) + dt
            total[a] += dt
        for r, rho in rate.items():
            consumed[r] += rho * dt
        now += dt
        for a in sorted(choices):
            if total[a] == 1:
                done_agents.add(a)
                trace.agent_times[a] = now
                trace.events.append((now, "agent", a))
        for r, _ in inst.resources:
            if r not in saturated_r and consumed[r] == inst.capacity(r):
                saturated_r.add(r)
                trace.events.append((now, "resource", r))
    else:
        raise InvariantViolation(
            f"greedy exceeded the event budget of {max_events}"
        )

    for a in inst.agents:
        trace.agent_times.setdefault(a.id, now)
        for q in bundles[a.id]:
            if q not in trace.bundle_times:
                hit = [
                    t for t, kind, ident in trace.events
                    if kind == "resource" and q.multiplicity(ident) >= 1
                ]
                trace.bundle_times[q] = min(hit) if hit else now
    alloc = Allocation(x)
    overfull = [
        r for r, c in inst.resources if alloc.resource_usage(r) > c
    ]
    if overfull:
        raise InvariantViolation(f"greedy overfilled {overfull}")
    return alloc, trace


def check_fractional_ef(
    h: HomogeneousInstance, x: Allocation
) -> dict[tuple[str, str, str], tuple[bool, Fraction]]:
    """Scaled envy comparison for every ordered group pair, exact.

    Group i passes against j when its own utility is at least the size ratio
    times its utility for j's allocation.  The margin is own minus scaled.
    """
    inst = h.instance
    out = {}
    for dim in inst.dimensions:
        groups = inst.groups_in(dim)
        for i in groups:
            mem_i = inst.group_members(dim, i)
            own = sum(
                (h.utilities.of(a, q) * v for (a, q), v in x.values.items() if a in mem_i),
                ZERO,
            )
            for j in groups:
                if i == j:
                    continue
                mem_j = inst.group_members(dim, j)
                envied = sum(
                    (
                        h.group_utility_of(dim, i, q) * v
                        for (b, q), v in x.values.items()
                        if b in mem_j
                    ),
                    ZERO,
                )
                ratio = Fraction(len(mem_i), len(mem_j))
                margin = own - ratio * envied
                out[(dim, i, j)] = (margin >= 0, margin)
    return out


# ---------------------------------------------------------------------------
# rounding with pairwise envy protection
# ---------------------------------------------------------------------------


def ef_condition(h: HomogeneousInstance, alpha: tuple[int, ...], delta: int) -> Fraction:
    """Slack of  sum_l 2(k_l-1)/(alpha_l+1) + omega*/(delta+1) <= 1/2."""
    inst = h.instance
    total = ZERO
    for li, dim in enumerate(inst.dimensions):
        k = inst.group_count(dim)
        total += Fraction(2 * (k - 1), alpha[li] + 1)
    total += Fraction(h.omega_star, delta + 1)
    return Fraction(1, 2) - total


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def ef_round(
    h: HomogeneousInstance,
    x: Allocation,
    alpha: tuple[int, ...],
    delta: int,
) -> Allocation:
    """Round a fractional envy-free allocation, generating no new envy for
    any group that still carries many fractional entries.

    Active groups get, for each other group in the dimension, both pairwise
    inequalities (the group does not envy, the group is not envied), written
    over the already-fixed integer entries plus the LP variables.  The
    total-conservation row is never imposed.  A pairwise row that becomes
    tight stays an equality while its group remains active, which preserves
    the one-way progress of the plain rounder.
    """
    inst = h.instance
    if len(alpha) != len(inst.dimensions):
        raise BudgetError(
            f"alpha has {len(alpha)} entries for {len(inst.dimensions)} dimensions"
        )
    if ef_condition(h, alpha, delta) < 0:
        raise BudgetError(
            "condition sum 2(k_l-1)/(alpha_l+1) + omega*/(delta+1) <= 1/2 fails"
        )
    problems = x.check_allocation(inst, capacities=True)
    problems = [p for p in problems if "totals" not in p or "binding" not in p]
    if problems:
        raise InvalidInstanceError("bad input allocation: " + "; ".join(problems))

    dims = list(inst.dimensions)
    dim_index = {dim: i for i, dim in enumerate(dims)}
    group_keys = [(dim, g) for dim in dims for g in inst.groups_in(dim)]
    members = {key: inst.group_members(*key) for key in group_keys}

    x_cur: dict[Pair, Fraction] = dict(x.values)
    sticky: set[tuple[str, str, str, str]] = set()  # (dim, i, j, side)
    t = 0
    max_iterations = 3 * len(x_cur) + len(inst.agents) + len(inst.resources) + 40
    prev_measure = None

    def envy_row(dim, i, j, F, col):
        """LHS coefficients and RHS for: group i keeps no scaled envy toward j,
        measured with i's utilities over frozen + variable entries."""
        ratio = Fraction(len(members[(dim, i)]), len(members[(dim, j)]))
        coeffs: dict[int, Fraction] = {}
        rhs = ZERO
        for e in F:
            a, q = e
            u = h.group_utility_of(dim, i, q)
            if a in members[(dim, i)]:
                coeffs[col[e]] = coeffs.get(col[e], ZERO) + u
            elif a in members[(dim, j)]:
                coeffs[col[e]] = coeffs.get(col[e], ZERO) - ratio * u
        for e, v in x_cur.items():
            if v != 1:
                continue
            a, q = e
            u = h.group_utility_of(dim, i, q)
            if a in members[(dim, i)]:
                rhs -= u
            elif a in members[(dim, j)]:
                rhs += ratio * u
        return coeffs, rhs

    while True:
        F = sorted(e for e, v in x_cur.items() if 0 < v < 1)
        z = len(F)
        frac_sum: dict[str, Fraction] = {}
        for a, q in F:
            frac_sum[a] = frac_sum.get(a, ZERO) + x_cur[(a, q)]
        agents_F = sorted(frac_sum)
        tilde_A = [a for a in agents_F if frac_sum[a] == 1]
        active_groups = []
        for key in group_keys:
            li = dim_index[key[0]]
            incident = sum(1 for e in F if e[0] in members[key])
            if incident >= alpha[li] + 1:
                active_groups.append(key)
        tilde_R = []
        for r, _ in inst.resources:
            load = sum(q.multiplicity(r) for _, q in F)
            if load >= delta + 1:
                tilde_R.append(r)

        if z:
            lhs = sum(
                2 * (inst.group_count(dim) - 1) * (z // (alpha[dim_index[dim]] + 1))
                for dim in dims
            ) + (h.omega_star * z) // (delta + 1)
            if lhs > _ceil_div(z, 2):
                raise InvariantViolation(
                    f"counting bound violated at iteration {t}: {lhs} > ceil({z}/2)"
                )

        if not tilde_A and not active_groups and not tilde_R:
            break
        if t >= max_iterations:
            raise InvariantViolation("envy-aware rounder failed to terminate")

        lp = LinearProgram()
        col = {e: lp.add_variable(f"y[{e[0]},{e[1]}]") for e in F}
        for a in agents_F:
            coeffs = {col[e]: ONE for e in F if e[0] == a}
            lp.add_constraint(coeffs, "=" if a in tilde_A else "<=", ONE)
        for r in tilde_R:
            coeffs = {}
            rhs = ZERO
            for e in F:
                m = e[1].multiplicity(r)
                if m:
                    coeffs[col[e]] = Fraction(m)
                    rhs += m * x_cur[e]
            lp.add_constraint(coeffs, "=", rhs)
        row_of: dict[tuple[str, str, str, str], tuple[dict, Fraction]] = {}
        for dim, i in active_groups:
            for j in inst.groups_in(dim):
                if j == i:
                    continue
                for side, (gi, gj) in (("fwd", (i, j)), ("rev", (j, i))):
                    coeffs, rhs = envy_row(dim, gi, gj, F, col)
                    key = (dim, i, j, side)
                    rel = "=" if key in sticky else ">="
                    lp.add_constraint(coeffs, rel, rhs)
                    row_of[key] = (coeffs, rhs)

        sol = feasible_vertex(lp)
        if not sol.optimal:
            raise InvariantViolation(
                f"per-iteration LP infeasible at t={t}; the current point satisfies it"
            )
        for e in F:
            v = sol.value(col[e])
            if v == 0:
                del x_cur[e]
            else:
                x_cur[e] = v
        newly_sticky = 0
        for key, (coeffs, rhs) in row_of.items():
            if key in sticky:
                continue
            lhs_val = sum((v * sol.value(j) for j, v in coeffs.items()), ZERO)
            if lhs_val == rhs:
                sticky.add(key)
                newly_sticky += 1

        new_F = sorted(e for e, v in x_cur.items() if 0 < v < 1)
        new_sums: dict[str, Fraction] = {}
        for a, q in new_F:
            new_sums[a] = new_sums.get(a, ZERO) + x_cur[(a, q)]
        new_outside = sum(1 for a in new_sums if new_sums[a] != 1)
        measure = (len(new_F), new_outside, -len(sticky))
        if prev_measure is not None and measure >= prev_measure and not newly_sticky:
            raise InvariantViolation(
                f"envy-aware rounder made no progress at iteration {t}"
            )
        prev_measure = measure
        t += 1

    # terminal: per agent round the largest fractional entry up, rest down
    F = sorted(e for e, v in x_cur.items() if 0 < v < 1)
    by_agent: dict[str, list[Pair]] = {}
    for e in F:
        by_agent.setdefault(e[0], []).append(e)
    for a, pairs in by_agent.items():
        best = max(x_cur[e] for e in pairs)
        up = next(e for e in pairs if x_cur[e] == best)
        for e in pairs:
            if e == up:
                x_cur[e] = ONE
            else:
                del x_cur[e]
    y = Allocation(x_cur)
    for e, v in x.values.items():
        if v == 1 and y.value(*e) != 1:
            raise InvariantViolation(f"rounding lost a unit entry at {e}")
    for e in y.values:
        if e not in x.values:
            raise InvariantViolation(f"rounding invented an entry at {e}")
    return y


def check_ef_deviation(
    h: HomogeneousInstance,
    y: Allocation,
    alpha: tuple[int, ...],
    delta: int,
) -> dict:
    """Strict scaled-envy bound per ordered group pair plus the capacity cap.

    Every pair must satisfy  scaled envy < alpha_l * (group's best single
    utility), and every resource may exceed its capacity by at most delta.
    Returns {'pairs': {...}, 'capacity': {...}, 'ok': bool}.
    """
    inst = h.instance
    pairs_out = {}
    ok = True
    for li, dim in enumerate(inst.dimensions):
        groups = inst.groups_in(dim)
        for i in groups:
            mem_i = inst.group_members(dim, i)
            own = sum(
                (h.utilities.of(a, q) * v for (a, q), v in y.values.items() if a in mem_i),
                ZERO,
            )
            bound = alpha[li] * h.group_best(dim, i)
            for j in groups:
                if i == j:
                    continue
                mem_j = inst.group_members(dim, j)
                envied = sum(
                    (
                        h.group_utility_of(dim, i, q) * v
                        for (b, q), v in y.values.items()
                        if b in mem_j
                    ),
                    ZERO,
                )
                ratio = Fraction(len(mem_i), len(mem_j))
                envy = ratio * envied - own
                passed = envy < bound
                ok = ok and passed
                pairs_out[(dim, i, j)] = (passed, envy, bound)
    capacity_out = {}
    for r, c in inst.resources:
        used = y.resource_usage(r)
        over = used - c
        passed = over <= delta
        ok = ok and passed
        capacity_out[r] = (passed, over)
    return {"pairs": pairs_out, "capacity": capacity_out, "ok": ok}

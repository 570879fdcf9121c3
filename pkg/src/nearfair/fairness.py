"""Group-fair assignment pipeline.

Maximizes a concave function of each group's utility over the fractional
allocation polytope (Frank-Wolfe with an exact LP linearization oracle),
refines the float optimum to an exact vertex that guarantees every group at
least the utility it had, and rounds that vertex with a budget of the form

    sum_l 1/(alpha_l + 1) + omega*/(delta + 2) <= 1/2.

The rounded assignment gives every agent exactly one bundle, lets each
group's utility drift strictly less than alpha_l times its best single
utility, exceeds no resource capacity by more than delta, and keeps the
total capacity excess within an explicit cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

from .errors import (
    BudgetError,
    InfeasibleInstanceError,
    InvalidInstanceError,
    InvariantViolation,
    RefinementInfeasibleError,
)
from .exactlp import LinearProgram, feasible_vertex, solve_vertex
from .model import (
    Allocation,
    AgentSpec,
    Bundle,
    Instance,
    Pair,
    UtilityModel,
    pair_universe,
)
from .rationals import ONE, ZERO, snap
from .rounding import Certificate, DeviationBudget, iterative_round

FW_TOLERANCE = 1e-9
FW_MAX_ITERATIONS = 10**4
SNAP_DENOMINATOR = 10**6
REFINE_TOLERANCE = Fraction(1, 10**6)
REFINE_RETRY_TOLERANCE = Fraction(1, 10**4)


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FairObjective:
    """Non-decreasing concave scalar function applied to each group utility."""

    kind: str
    f: Callable[[float], float]
    fprime: Optional[Callable[[float], float]] = None

    @staticmethod
    def utilitarian() -> "FairObjective":
        return FairObjective("utilitarian", lambda z: z, lambda z: 1.0)

    @staticmethod
    def proportional() -> "FairObjective":
        return FairObjective(
            "proportional",
            lambda z: math.log(z) if z > 0 else float("-inf"),
            lambda z: 1.0 / z if z > 0 else float("inf"),
        )

    @staticmethod
    def custom(
        f: Callable[[float], float], fprime: Optional[Callable[[float], float]] = None
    ) -> "FairObjective":
        return FairObjective("custom", f, fprime)

    def grad(self, z: float) -> float:
        if self.fprime is not None:
            return self.fprime(z)
        h = max(1e-7, 1e-7 * abs(z))  # sampled supergradient
        return (self.f(z + h) - self.f(max(z - h, 0.0))) / (z + h - max(z - h, 0.0))

    def spot_check(self, samples=(0.5, 1.0, 2.0, 5.0, 9.0)) -> None:
        """Reject f that is visibly decreasing or convex on sampled triples."""
        vals = [self.f(z) for z in samples]
        for (z1, v1), (z2, v2) in zip(zip(samples, vals), zip(samples[1:], vals[1:])):
            if v2 < v1 - 1e-12:
                raise InvalidInstanceError("objective is not non-decreasing")
        for i in range(len(samples) - 2):
            z1, z2, z3 = samples[i : i + 3]
            v1, v2, v3 = vals[i : i + 3]
            lam = (z3 - z2) / (z3 - z1)
            if v2 < lam * v1 + (1 - lam) * v3 - 1e-9:
                raise InvalidInstanceError("objective is not concave")


# ---------------------------------------------------------------------------
# the allocation polytope
# ---------------------------------------------------------------------------


def _assignment_instance(instance: Instance) -> Instance:
    """Assignment markets have every agent binding."""
    everyone = frozenset(a.id for a in instance.agents)
    if instance.binding == everyone:
        return instance
    return Instance(
        agents=instance.agents,
        resources=instance.resources,
        binding=everyone,
        dimensions=instance.dimensions,
        acceptability=instance.acceptability,
    )


def allocation_polytope(
    instance: Instance,
) -> tuple[LinearProgram, list[Pair], dict[Pair, int]]:
    """LP over all acceptable (agent, bundle) pairs: binding agents sum to 1,
    others to at most 1, resource loads within capacity."""
    pairs = pair_universe(instance)
    lp = LinearProgram()
    col = {e: lp.add_variable(f"x[{e[0]},{e[1]}]") for e in pairs}
    for a in instance.agents:
        coeffs = {col[e]: ONE for e in pairs if e[0] == a.id}
        if not coeffs:
            raise InfeasibleInstanceError(f"agent {a.id!r} has no acceptable bundle")
        rel = "=" if a.id in instance.binding else "<="
        lp.add_constraint(coeffs, rel, ONE)
    for r, c in instance.resources:
        coeffs = {}
        for e in pairs:
            m = e[1].multiplicity(r)
            if m:
                coeffs[col[e]] = Fraction(m)
        if coeffs:
            lp.add_constraint(coeffs, "<=", Fraction(c))
    return lp, pairs, col


def _group_keys(instance: Instance) -> list[tuple[str, str]]:
    return [(dim, g) for dim in instance.dimensions for g in instance.groups_in(dim)]


def max_group_utility(
    instance: Instance, utilities: UtilityModel, dim: str, group_id: str
) -> Fraction:
    """Exact maximum of one group's utility over fractional allocations."""
    lp, pairs, col = allocation_polytope(instance)
    members = instance.group_members(dim, group_id)
    lp.set_objective(
        {col[e]: -utilities.of(*e) for e in pairs if e[0] in members}
    )
    sol = solve_vertex(lp)
    if not sol.optimal:
        raise InfeasibleInstanceError("no fractional allocation exists")
    return -sol.objective


# ---------------------------------------------------------------------------
# Frank-Wolfe stage
# ---------------------------------------------------------------------------


def solve_fair_fractional(
    instance: Instance,
    utilities: UtilityModel,
    objective: FairObjective,
) -> Allocation:
    """Approximately maximize sum_g f(U_g) over fractional allocations.

    Runs conditional-gradient steps with an exact LP oracle and exact line
    search on each segment, then snaps the float iterate to rationals with a
    bounded denominator.  The snap is reconciled downstream by
    ``refine_to_vertex``.
    """
    instance = _assignment_instance(instance)
    objective.spot_check()
    lp, pairs, col = allocation_polytope(instance)
    start = feasible_vertex(lp)
    if not start.optimal:
        raise InfeasibleInstanceError("no fractional allocation exists")

    keys = _group_keys(instance)
    members = {key: instance.group_members(*key) for key in keys}
    util = {e: float(utilities.of(*e)) for e in pairs}

    if objective.kind == "proportional":
        kept = []
        vertices = []
        for key in keys:
            best = max_group_utility(instance, utilities, *key)
            if best > 0:
                kept.append(key)
        if not kept:
            return Allocation({e: start.value(col[e]) for e in pairs})
        for key in kept:
            g_lp, g_pairs, g_col = allocation_polytope(instance)
            g_lp.set_objective(
                {g_col[e]: -utilities.of(*e) for e in g_pairs if e[0] in members[key]}
            )
            sol = solve_vertex(g_lp)
            vertices.append([float(sol.value(g_col[e])) for e in g_pairs])
        x = [sum(vs) / len(vertices) for vs in zip(*vertices)]
        keys = kept
    else:
        x = [float(start.value(col[e])) for e in pairs]

    def group_utils(point: list[float]) -> list[float]:
        out = []
        for key in keys:
            out.append(
                sum(point[i] * util[e] for i, e in enumerate(pairs) if e[0] in members[key])
            )
        return out

    def total(us: list[float]) -> float:
        return sum(objective.f(u) for u in us)

    current = total(group_utils(x))
    for _ in range(FW_MAX_ITERATIONS):
        us = group_utils(x)
        grad = [0.0] * len(pairs)
        for key, u in zip(keys, us):
            g = objective.grad(u)
            for i, e in enumerate(pairs):
                if e[0] in members[key]:
                    grad[i] += g * util[e]
        lp.set_objective(
            {col[e]: -snap(grad[i], 10**9) for i, e in enumerate(pairs) if grad[i]}
        )
        sol = solve_vertex(lp)
        v = [float(sol.value(col[e])) for e in pairs]
        us_v = group_utils(v)

        def phi(gamma: float) -> float:
            return total([(1 - gamma) * a + gamma * b for a, b in zip(us, us_v)])

        lo, hi = 0.0, 1.0
        for _ in range(100):  # exact enough ternary search on a concave section
            m1 = lo + (hi - lo) / 3
            m2 = hi - (hi - lo) / 3
            if phi(m1) < phi(m2):
                lo = m1
            else:
                hi = m2
        gamma = (lo + hi) / 2
        candidates = [(phi(g), g) for g in (0.0, gamma, 1.0)]
        best_val, gamma = max(candidates, key=lambda p: (p[0], -p[1]))
        if gamma > 0:
            x = [(1 - gamma) * a + gamma * b for a, b in zip(x, v)]
        new = total(group_utils(x))
        if new < current - 1e-12:
            raise InvariantViolation("conditional-gradient objective decreased")
        if abs(new - current) <= FW_TOLERANCE * max(1.0, abs(current)):
            current = new
            break
        current = new

    values = {
        e: snap(x[i], SNAP_DENOMINATOR)
        for i, e in enumerate(pairs)
        if snap(x[i], SNAP_DENOMINATOR) != 0
    }
    return Allocation(values)


def refine_to_vertex(
    instance: Instance,
    utilities: UtilityModel,
    x_star: Allocation,
    tolerance: Fraction = REFINE_TOLERANCE,
) -> Allocation:
    """Exact vertex of the polytope of allocations that give every group at
    least (1 - tolerance) times the utility it enjoys under ``x_star``.

    Retries once with a looser tolerance when float drift in ``x_star`` made
    the first polytope empty.
    """
    instance = _assignment_instance(instance)
    keys = _group_keys(instance)

    def attempt(tol: Fraction) -> Optional[Allocation]:
        lp, pairs, col = allocation_polytope(instance)
        for key in keys:
            mem = instance.group_members(*key)
            target = sum(
                (utilities.of(*e) * v for e, v in x_star.values.items() if e[0] in mem),
                ZERO,
            )
            coeffs = {col[e]: utilities.of(*e) for e in pairs if e[0] in mem}
            lp.add_constraint(coeffs, ">=", target * (1 - tol))
        sol = feasible_vertex(lp)
        if not sol.optimal:
            return None
        return Allocation(
            {e: sol.value(col[e]) for e in pairs if sol.value(col[e]) != 0}
        )

    out = attempt(tolerance)
    if out is None:
        out = attempt(REFINE_RETRY_TOLERANCE)
    if out is None:
        raise RefinementInfeasibleError(
            "group utility bounds stayed infeasible after relaxing the tolerance"
        )
    return out


# ---------------------------------------------------------------------------
# the rounded pipeline
# ---------------------------------------------------------------------------


def delta_plus_bound(instance: Instance, delta: int) -> int:
    """Cap on the total capacity excess of the rounded assignment."""
    w = instance.omega_star
    n_agents = len(instance.agents)
    n_resources = len(instance.resources)
    k_total = sum(instance.group_count(dim) for dim in instance.dimensions)
    return min(
        (w - 1) * n_agents + w * n_resources + (w + 1) * k_total,
        delta * n_resources,
    )


def fairness_condition(instance: Instance, alpha: tuple[int, ...], delta: int) -> Fraction:
    """Slack of  sum_l 1/(alpha_l+1) + omega*/(delta+2) <= 1/2."""
    total = sum((Fraction(1, a + 1) for a in alpha), ZERO)
    total += Fraction(instance.omega_star, delta + 2)
    return Fraction(1, 2) - total


@dataclass
class FairResult:
    fractional: Allocation
    rounded: Allocation
    delta: int
    delta_plus: int
    group_utilities_before: dict[tuple[str, str], Fraction]
    group_utilities_after: dict[tuple[str, str], Fraction]
    resource_excess: dict[str, int]
    total_excess: int
    certificate: Certificate


def approx_fair_allocation(
    instance: Instance,
    utilities: UtilityModel,
    objective: FairObjective,
    alpha: tuple[int, ...],
    delta: int,
) -> FairResult:
    """Full pipeline: fair fractional point, vertex refinement, rounding."""
    instance = _assignment_instance(instance)
    if len(alpha) != len(instance.dimensions):
        raise BudgetError(
            f"alpha has {len(alpha)} entries for {len(instance.dimensions)} dimensions"
        )
    if fairness_condition(instance, alpha, delta) < 0:
        raise BudgetError(
            "condition sum 1/(alpha_l+1) + omega*/(delta+2) <= 1/2 fails"
        )
    x_star = solve_fair_fractional(instance, utilities, objective)
    x_fair = refine_to_vertex(instance, utilities, x_star)

    budget = DeviationBudget(
        alpha=tuple(alpha),
        delta=delta + 1,
        Delta=None,  # every agent is binding, so the weighted total never moves
        psi=1,
        omega_star=instance.omega_star,
    )
    y, cert = iterative_round(instance, x_fair, utilities, budget)

    keys = _group_keys(instance)
    before, after = {}, {}
    for key in keys:
        mem = instance.group_members(*key)
        before[key] = sum(
            (utilities.of(*e) * v for e, v in x_fair.values.items() if e[0] in mem), ZERO
        )
        after[key] = sum(
            (utilities.of(*e) * v for e, v in y.values.items() if e[0] in mem), ZERO
        )

    dplus = delta_plus_bound(instance, delta)
    excess = {}
    total_excess = 0
    for r, c in instance.resources:
        used = y.resource_usage(r)
        if used != int(used):
            raise InvariantViolation(f"integral output uses {used} of {r!r}")
        over = max(0, int(used) - c)
        excess[r] = over
        total_excess += over
        if over > delta:
            raise InvariantViolation(
                f"resource {r!r} exceeded capacity by {over} > delta={delta}"
            )
    if total_excess > dplus:
        raise InvariantViolation(
            f"total excess {total_excess} exceeds the cap {dplus}"
        )
    return FairResult(
        fractional=x_fair,
        rounded=y,
        delta=delta,
        delta_plus=dplus,
        group_utilities_before=before,
        group_utilities_after=after,
        resource_excess=excess,
        total_excess=total_excess,
        certificate=cert,
    )


def check_proportionality(
    instance: Instance,
    utilities: UtilityModel,
    y: Allocation,
    alpha: int,
) -> dict[str, tuple[bool, Fraction]]:
    """Single-dimension proportionality test.

    Each group must reach at least 1/k of the utility it could get under its
    own best fractional allocation, minus alpha times its best single
    utility.  Returns per-group (passed, margin).
    """
    instance = _assignment_instance(instance)
    if len(instance.dimensions) != 1:
        raise InvalidInstanceError("proportionality check needs exactly one dimension")
    dim = instance.dimensions[0]
    groups = instance.groups_in(dim)
    k = len(groups)
    out = {}
    for g in groups:
        best = max_group_utility(instance, utilities, dim, g)
        ustar = utilities.group_max(instance, dim, g)
        mem = instance.group_members(dim, g)
        got = sum(
            (utilities.of(*e) * v for e, v in y.values.items() if e[0] in mem), ZERO
        )
        margin = got - (best / k - alpha * ustar)
        out[g] = (margin >= 0, margin)
    return out


# ---------------------------------------------------------------------------
# lower-bound families
# ---------------------------------------------------------------------------


def gen_lower_bound_instance(kind: str, n: int) -> tuple[Instance, UtilityModel]:
    """Families showing zero deviation on one side forces large deviation on
    the other.

    ``capacity``: n single-member groups, n unit-capacity resources, everyone
    values only the first resource; zero proportionality deviation forces
    overloading it by n-1.  ``utility-cycle``: two alternating groups on a
    cycle of n unit-capacity resources where only odd resources carry value;
    zero capacity deviation leaves one group with nothing.
    """
    if kind == "capacity":
        if n < 2:
            raise InvalidInstanceError("capacity family needs n >= 2")
        agents = [AgentSpec(f"a{i}", 1, {"group": f"g{i}"}) for i in range(1, n + 1)]
        resources = [(f"r{i}", 1) for i in range(1, n + 1)]
        inst = Instance(
            agents,
            resources,
            binding={a.id for a in agents},
            dimensions=("group",),
        )
        util = UtilityModel(
            additive={a.id: {"r1": ONE} for a in agents}
        )
        return inst, util
    if kind == "utility-cycle":
        if n < 2 or n % 2:
            raise InvalidInstanceError("utility-cycle family needs even n >= 2")
        half = n // 2
        agents = [AgentSpec(f"a{i}", 1, {"group": "g1"}) for i in range(1, half + 1)]
        agents += [AgentSpec(f"b{i}", 1, {"group": "g2"}) for i in range(1, half + 1)]
        resources = [(f"r{i}", 1) for i in range(1, n + 1)]
        accept = set()
        for i in range(1, half + 1):
            accept.add((f"a{i}", f"r{2 * i - 1}"))
            accept.add((f"a{i}", f"r{2 * i}"))
            wrap = 2 * i + 1 if 2 * i + 1 <= n else (2 * i + 1) - n
            accept.add((f"b{i}", f"r{2 * i}"))
            accept.add((f"b{i}", f"r{wrap}"))
        inst = Instance(
            agents,
            resources,
            binding={a.id for a in agents},
            dimensions=("group",),
            acceptability=frozenset(accept),
        )
        util = UtilityModel(
            additive={
                a.id: {f"r{i}": ONE for i in range(1, n + 1, 2)} for a in agents
            }
        )
        return inst, util
    raise InvalidInstanceError(f"unknown lower-bound family {kind!r}")

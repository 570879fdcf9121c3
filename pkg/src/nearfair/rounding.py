"""Iterative LP rounding of fractional allocations with deviation budgets.

A deviation budget fixes, per group dimension, how far group utilities may
drift (alpha), how far each resource's load may drift (delta), and how far
the demand-weighted total may drift (Delta).  The budget is admissible when

    psi/2 + sum_l 1/(alpha_l + 1) + omega*/(delta + 1) <= 1,

where psi = 1 whenever some agent holds two or more fractional bundles or
there is at most one dimension.  Under that condition the rounder repeatedly
takes an extreme point of a small feasibility LP that pins down exactly the
agents, groups, and resources currently carrying too many fractional
entries, until no constraint is needed any more; the remaining entries are
rounded directly.  Each iteration either fixes a variable at 0/1 or turns an
agent inequality into an equality, so the procedure terminates, and the
final mapping deviates from the input strictly less than each budget entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .errors import BudgetError, InvalidInstanceError, InvariantViolation
from .exactlp import LinearProgram, feasible_vertex
from .model import Allocation, Bundle, Instance, Pair, UtilityModel
from .rationals import ONE, ZERO, ceil_frac, rat_str

# ---------------------------------------------------------------------------
# budgets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeviationBudget:
    """Per-dimension group budget alpha, per-resource budget delta, total
    budget Delta (None disables the total-conservation row entirely), the
    per-agent flag psi, and the maximum demand the budget was sized for."""

    alpha: tuple[int, ...]
    delta: int
    Delta: Optional[int]
    psi: int
    omega_star: int

    def __post_init__(self):
        if self.psi not in (0, 1):
            raise BudgetError(f"psi must be 0 or 1, got {self.psi}")
        if any(a < 0 for a in self.alpha) or self.delta < 0:
            raise BudgetError("alpha and delta must be non-negative")
        if self.Delta is not None and self.Delta < 0:
            raise BudgetError("Delta must be non-negative")
        if self.omega_star < 1:
            raise BudgetError("omega_star must be positive")


def forced_psi(x: Allocation, dimensions_count: int) -> bool:
    """psi is forced to 1 when an agent holds >= 2 fractional bundles or
    there are at most 1 dimensions."""
    return bool(x.fractional_agents()) or dimensions_count <= 1


def check_condition(budget: DeviationBudget) -> Fraction:
    """Slack of the admissibility condition; the budget is valid iff >= 0."""
    total = Fraction(budget.psi, 2)
    for a in budget.alpha:
        total += Fraction(1, a + 1)
    total += Fraction(budget.omega_star, budget.delta + 1)
    return 1 - total


def min_Delta(budget: DeviationBudget) -> int:
    """Smallest admissible total-deviation budget for these (alpha, delta, psi)."""
    slack = check_condition(budget)
    if slack < 0:
        raise BudgetError(f"budget fails the admissibility condition by {-slack}")
    if budget.psi == 1:
        return 2
    if slack == 0:
        raise BudgetError(
            "psi=0 with a tight admissibility condition admits no total budget"
        )
    return ceil_frac(ONE / slack - 1)


def _validate_budget(
    instance: Instance, x: Allocation, budget: DeviationBudget
) -> None:
    d = len(instance.dimensions)
    if len(budget.alpha) != d:
        raise BudgetError(
            f"alpha has {len(budget.alpha)} entries for {d} dimensions"
        )
    if budget.omega_star != instance.omega_star:
        raise BudgetError(
            f"budget sized for max demand {budget.omega_star}, "
            f"instance has {instance.omega_star}"
        )
    if budget.psi == 0 and forced_psi(x, d):
        raise BudgetError(
            "psi=0 not allowed: an agent has >= 2 fractional bundles or d <= 1"
        )
    slack = check_condition(budget)
    if slack < 0:
        raise BudgetError(f"budget fails the admissibility condition by {-slack}")
    if budget.Delta is not None:
        if budget.psi == 1 and budget.Delta >= 2:
            return
        if slack > 0 and budget.Delta >= ONE / slack - 1:
            return
        raise BudgetError(
            f"Delta={budget.Delta} satisfies neither total-budget rule "
            f"(needs Delta>=2 with psi=1, or slack>0 and Delta>=1/slack-1)"
        )


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------


@dataclass
class IterationState:
    t: int
    fractional: int
    constraints: int
    active_agents: int
    active_groups: int
    active_resources: int
    chi: int
    weighted_mass: Fraction


@dataclass
class Certificate:
    """Exact deviations of an integral mapping against a reference fractional
    allocation, plus the iteration trace that produced it."""

    group_deviations: dict[tuple[str, str], tuple[Fraction, Fraction]] = field(
        default_factory=dict
    )
    resource_deviations: dict[str, tuple[Fraction, Fraction]] = field(
        default_factory=dict
    )
    total_deviation: tuple[Fraction, Optional[Fraction]] = (ZERO, None)
    iterations: int = 0
    trace: list[IterationState] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)

    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "group_deviations": [
                {
                    "dimension": dim,
                    "group": g,
                    "deviation": rat_str(dev),
                    "bound": rat_str(bound),
                }
                for (dim, g), (dev, bound) in sorted(self.group_deviations.items())
            ],
            "resource_deviations": [
                {"resource": r, "deviation": rat_str(dev), "bound": rat_str(bound)}
                for r, (dev, bound) in sorted(self.resource_deviations.items())
            ],
            "total_deviation": {
                "deviation": rat_str(self.total_deviation[0]),
                "bound": (
                    rat_str(self.total_deviation[1])
                    if self.total_deviation[1] is not None
                    else None
                ),
            },
            "iterations": self.iterations,
            "trace": [
                {
                    "t": s.t,
                    "fractional": s.fractional,
                    "constraints": s.constraints,
                    "chi": s.chi,
                    "weighted_mass": rat_str(s.weighted_mass),
                }
                for s in self.trace
            ],
            "violations": list(self.violations),
        }


def verify_approximation(
    instance: Instance,
    x: Allocation,
    y: Allocation,
    utilities: UtilityModel,
    budget: DeviationBudget,
) -> Certificate:
    """Exact strict-inequality check of all deviation families.

    Violations are data, not errors: the certificate lists every failure.
    """
    cert = Certificate()
    if not y.integral:
        cert.violations.append("output mapping is not integral")
    cert.violations.extend(y.check_allocation(instance, capacities=False))

    for li, dim in enumerate(instance.dimensions):
        for g in instance.groups_in(dim):
            members = instance.group_members(dim, g)
            ux = sum(
                (utilities.of(a, q) * v for (a, q), v in x.values.items() if a in members),
                ZERO,
            )
            uy = sum(
                (utilities.of(a, q) * v for (a, q), v in y.values.items() if a in members),
                ZERO,
            )
            dev = abs(uy - ux)
            bound = budget.alpha[li] * utilities.group_max(instance, dim, g)
            cert.group_deviations[(dim, g)] = (dev, bound)
            if not dev < bound:
                cert.violations.append(
                    f"group ({dim},{g}) deviates {dev}, budget {bound}"
                )

    for r, _ in instance.resources:
        dev = abs(y.resource_usage(r) - x.resource_usage(r))
        cert.resource_deviations[r] = (dev, Fraction(budget.delta))
        if not dev < budget.delta:
            cert.violations.append(f"resource {r} deviates {dev}, budget {budget.delta}")

    def mass(alloc: Allocation) -> Fraction:
        return sum(
            (instance.agent(a).demand * v for (a, _), v in alloc.values.items()), ZERO
        )

    total_dev = abs(mass(y) - mass(x))
    if budget.Delta is None:
        cert.total_deviation = (total_dev, None)
    else:
        bound = Fraction(budget.omega_star * budget.Delta)
        cert.total_deviation = (total_dev, bound)
        if not total_dev < bound:
            cert.violations.append(f"total deviates {total_dev}, budget {bound}")
    return cert


# ---------------------------------------------------------------------------
# the rounder
# ---------------------------------------------------------------------------


def _fractional_support(x_cur: dict[Pair, Fraction]) -> list[Pair]:
    return sorted(e for e, v in x_cur.items() if 0 < v < 1)


def _dump(tag: str, t: int, F: Sequence[Pair], detail: str) -> str:
    pairs = ", ".join(f"{a}:{q}" for a, q in F[:12])
    more = "" if len(F) <= 12 else f" (+{len(F) - 12} more)"
    return f"{tag} at iteration {t}: {detail}; fractional support [{pairs}]{more}"


def iterative_round(
    instance: Instance,
    x: Allocation,
    utilities: UtilityModel,
    budget: DeviationBudget,
) -> tuple[Allocation, Certificate]:
    """Round a fractional allocation into an integral one within the budget.

    The output keeps every 0/1 entry of the input, keeps binding agents at
    exactly one bundle and everyone else at most one, and its certificate
    passes every strict deviation bound the budget promises.
    """
    problems = x.check_allocation(instance, capacities=True)
    if problems:
        raise InvalidInstanceError(
            "input is not a fractional allocation: " + "; ".join(problems)
        )
    _validate_budget(instance, x, budget)

    dims = list(instance.dimensions)
    group_keys = [(dim, g) for dim in dims for g in instance.groups_in(dim)]
    members = {key: instance.group_members(*key) for key in group_keys}
    dim_index = {dim: i for i, dim in enumerate(dims)}
    demand = {a.id: a.demand for a in instance.agents}

    x_cur: dict[Pair, Fraction] = dict(x.values)
    trace: list[IterationState] = []
    prev_measure: Optional[tuple[int, int]] = None
    t = 0
    max_iterations = 3 * len(x_cur) + len(instance.agents) + len(instance.resources) + 10

    while True:
        F = _fractional_support(x_cur)
        frac_sum: dict[str, Fraction] = {}
        for a, q in F:
            frac_sum[a] = frac_sum.get(a, ZERO) + x_cur[(a, q)]
        agents_F = sorted(frac_sum)
        tilde_A = [a for a in agents_F if frac_sum[a] == 1]
        tilde_G = []
        for key in group_keys:
            li = dim_index[key[0]]
            incident = [e for e in F if e[0] in members[key]]
            if len(incident) >= budget.alpha[li] + 1:
                tilde_G.append(key)
        tilde_R = []
        for r, _ in instance.resources:
            load = sum(q.multiplicity(r) for _, q in F)
            if load >= budget.delta + 1:
                tilde_R.append(r)
        outside = len(agents_F) - len(tilde_A)
        chi = 1 if budget.Delta is not None and outside >= budget.Delta + 1 else 0

        C = len(tilde_A) + len(tilde_G) + len(tilde_R) + chi
        if C > len(F):
            raise InvariantViolation(
                _dump(
                    "constraint-count bound violated",
                    t,
                    F,
                    f"C={C} > |F|={len(F)} "
                    f"(agents {len(tilde_A)}, groups {len(tilde_G)}, "
                    f"resources {len(tilde_R)}, chi {chi})",
                )
            )
        mass = sum((demand[a] * v for (a, _), v in x_cur.items()), ZERO)
        trace.append(
            IterationState(
                t=t,
                fractional=len(F),
                constraints=C,
                active_agents=len(tilde_A),
                active_groups=len(tilde_G),
                active_resources=len(tilde_R),
                chi=chi,
                weighted_mass=mass,
            )
        )
        if not tilde_A and not tilde_G and not tilde_R and chi == 0:
            break
        if t >= max_iterations:
            raise InvariantViolation(
                _dump("iteration cap hit", t, F, "rounder failed to make progress")
            )

        measure = (len(F), outside)
        if prev_measure is not None and measure >= prev_measure:
            raise InvariantViolation(
                _dump(
                    "no progress",
                    t,
                    F,
                    f"measure {measure} did not lexicographically decrease "
                    f"from {prev_measure}",
                )
            )
        prev_measure = measure

        lp = LinearProgram()
        col = {e: lp.add_variable(f"y[{e[0]},{e[1]}]") for e in F}
        for a in agents_F:
            coeffs = {col[e]: ONE for e in F if e[0] == a}
            lp.add_constraint(coeffs, "=" if a in tilde_A else "<=", ONE)
        for key in tilde_G:
            coeffs = {}
            rhs = ZERO
            for e in F:
                if e[0] in members[key]:
                    u = utilities.of(*e)
                    coeffs[col[e]] = u
                    rhs += u * x_cur[e]
            lp.add_constraint(coeffs, "=", rhs)
        for r in tilde_R:
            coeffs = {}
            rhs = ZERO
            for e in F:
                m = e[1].multiplicity(r)
                if m:
                    coeffs[col[e]] = Fraction(m)
                    rhs += m * x_cur[e]
            lp.add_constraint(coeffs, "=", rhs)
        if chi:
            coeffs = {col[e]: Fraction(demand[e[0]]) for e in F}
            rhs = sum((demand[e[0]] * x_cur[e] for e in F), ZERO)
            lp.add_constraint(coeffs, "=", rhs)

        solution = feasible_vertex(lp)
        if not solution.optimal:
            raise InvariantViolation(
                _dump("per-iteration LP infeasible", t, F, "current point is feasible")
            )
        for e in F:
            v = solution.value(col[e])
            if v == 0:
                del x_cur[e]
            else:
                x_cur[e] = v
        t += 1

    # terminal rounding: per agent round the largest fractional entry up
    # (first in bundle order among ties), everything else down
    F = _fractional_support(x_cur)
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

    cert = verify_approximation(instance, x, y, utilities, budget)
    cert.iterations = t
    cert.trace = trace
    if not cert.ok():
        raise InvariantViolation(
            "rounded output violates its own budget: " + "; ".join(cert.violations)
        )
    return y, cert


# ---------------------------------------------------------------------------
# floor-sum arithmetic used by the total-budget analysis
# ---------------------------------------------------------------------------


def floor_sum(
    theta: Sequence[Fraction], eps: Sequence[Fraction], gamma: Sequence[Fraction], z: int
) -> int:
    """sum_l floor((theta_l * z - eps_l) / gamma_l), exactly."""
    total = 0
    for th, ep, ga in zip(theta, eps, gamma):
        total += (th * z - ep) // ga
    return total

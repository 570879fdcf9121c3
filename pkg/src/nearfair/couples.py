"""Stable allocation with couples: markets where agents demand one or two
resource units, resources rank agents, and agents rank acceptable bundles.

Stability is the absence of three kinds of blocking moves: a single agent
grabbing a better resource, a couple grabbing two units of one better
resource, and a couple splitting across two resources.  A resource admits a
move when it has room left or ranks the mover above one of its current
occupants.

Fractional stable points are taken from the packing polytope over agent-
bundle pairs (capacity rows plus at-most-one-bundle rows).  At desk scale we
enumerate its vertices exhaustively and call a vertex *dominating* when
every rounding of it is stable under the capacities it realizes; rounding a
dominating vertex with the usual budget machinery then yields near-feasible
stable (and fair) integral allocations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Mapping, Optional, Sequence

from .errors import (
    BudgetError,
    InvalidInstanceError,
    InvariantViolation,
    NoDominatingVertexError,
)
from .exactlp import LinearProgram
from .fairness import FairObjective
from .model import Allocation, Bundle, Instance, Pair, UtilityModel, enumerate_bundles, pair_universe
from .oracle import enumerate_roundings, vertex_enumerate
from .rationals import ONE, ZERO
from .rounding import Certificate, DeviationBudget, iterative_round


@dataclass
class CouplesInstance:
    """Market with single agents (demand 1) and couples (demand 2), resource
    preference orders over agents, and agent preference orders over their
    acceptable bundles (best first, strict)."""

    instance: Instance
    resource_prefs: Mapping[str, Sequence[str]]
    agent_prefs: Mapping[str, Sequence[Bundle]]

    def __post_init__(self):
        inst = self.instance
        if inst.binding:
            self.instance = inst = Instance(
                agents=inst.agents,
                resources=inst.resources,
                binding=frozenset(),
                dimensions=inst.dimensions,
                acceptability=inst.acceptability,
            )
        for a in inst.agents:
            if a.demand not in (1, 2):
                raise InvalidInstanceError(
                    f"agent {a.id!r} has demand {a.demand}, couples markets allow 1 or 2"
                )
        self.resource_prefs = {r: tuple(v) for r, v in self.resource_prefs.items()}
        self.agent_prefs = {a: tuple(v) for a, v in self.agent_prefs.items()}
        self._res_rank: dict[str, dict[str, int]] = {}
        for r, order in self.resource_prefs.items():
            if r not in dict(inst.resources):
                raise InvalidInstanceError(f"preferences for unknown resource {r!r}")
            if len(set(order)) != len(order):
                raise InvalidInstanceError(f"resource {r!r} ranks an agent twice")
            self._res_rank[r] = {a: i for i, a in enumerate(order)}
        self._agent_rank: dict[str, dict[Bundle, int]] = {}
        for a in inst.agents:
            order = self.agent_prefs.get(a.id, ())
            if len(set(order)) != len(order):
                raise InvalidInstanceError(f"agent {a.id!r} ranks a bundle twice")
            acceptable = set(enumerate_bundles(a.id, inst))
            if set(order) != acceptable:
                raise InvalidInstanceError(
                    f"agent {a.id!r} must rank exactly its acceptable bundles"
                )
            self._agent_rank[a.id] = {q: i for i, q in enumerate(order)}
        for r, _ in inst.resources:
            users = {
                a.id
                for a in inst.agents
                for q in enumerate_bundles(a.id, inst)
                if q.multiplicity(r) >= 1
            }
            missing = users - set(self.resource_prefs.get(r, ()))
            if missing:
                raise InvalidInstanceError(
                    f"resource {r!r} does not rank agents {sorted(missing)}"
                )

    def singles(self) -> list[str]:
        return [a.id for a in self.instance.agents if a.demand == 1]

    def couples(self) -> list[str]:
        return [a.id for a in self.instance.agents if a.demand == 2]

    def prefers_resource(self, r: str, a: str, b: str) -> bool:
        """True when r ranks a strictly above b."""
        return self._res_rank[r][a] < self._res_rank[r][b]

    def prefers_bundle(self, a: str, q: Bundle, over: Optional[Bundle]) -> bool:
        """True when a ranks q above its current bundle (anything beats none)."""
        if over is None:
            return True
        return self._agent_rank[a][q] < self._agent_rank[a][over]


# ---------------------------------------------------------------------------
# blocking and stability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockingWitness:
    condition: int  # 1, 2, or 3
    agent: str
    bundle: Bundle


@dataclass
class BlockReport:
    witnesses: list[BlockingWitness] = field(default_factory=list)

    @property
    def stable(self) -> bool:
        return not self.witnesses


def realized_capacities(ci: CouplesInstance, y: Allocation) -> dict[str, int]:
    """Capacity each resource effectively offers under y: the original value,
    or the realized load where the allocation exceeds it."""
    out = {}
    for r, c in ci.instance.resources:
        used = y.resource_usage(r)
        if used != int(used):
            raise InvalidInstanceError("realized capacities need an integral allocation")
        out[r] = max(c, int(used))
    return out


def stability_check(
    ci: CouplesInstance, y: Allocation, capacities: Mapping[str, int]
) -> BlockReport:
    """Exhaustive test of the three blocking conditions; reports every witness."""
    inst = ci.instance
    assigned: dict[str, Optional[Bundle]] = {a.id: None for a in inst.agents}
    for (a, q), v in y.values.items():
        if v != 1:
            raise InvalidInstanceError("stability is defined for integral allocations")
        if assigned[a] is not None:
            raise InvalidInstanceError(f"agent {a!r} holds two bundles")
        assigned[a] = q
    usage = {r: 0 for r, _ in inst.resources}
    for a, q in assigned.items():
        if q is not None:
            for r, m in q.items:
                usage[r] += m

    def available_units(r: str, mover: str) -> int:
        """Units the mover could obtain at r: spare capacity, its own units
        there, and units of occupants the resource likes less."""
        free = capacities[r] - usage[r]
        own = assigned[mover].multiplicity(r) if assigned[mover] is not None else 0
        worse = 0
        for b, qb in assigned.items():
            if b == mover or qb is None:
                continue
            units = qb.multiplicity(r)
            if units and ci.prefers_resource(r, mover, b):
                worse += units
        return free + own + worse

    report = BlockReport()
    for a in inst.agents:
        current = assigned[a.id]
        for q in ci.agent_prefs[a.id]:
            if not ci.prefers_bundle(a.id, q, current):
                break  # preference list is best-first
            feasible = all(
                available_units(r, a.id) >= m for r, m in q.items
            )
            if not feasible:
                continue
            if a.demand == 1:
                condition = 1
            elif len(q.items) == 1:
                condition = 2
            else:
                condition = 3
            report.witnesses.append(BlockingWitness(condition, a.id, q))
    return report


# ---------------------------------------------------------------------------
# the stable polytope and dominating vertices
# ---------------------------------------------------------------------------


def market_pairs(ci: CouplesInstance) -> list[Pair]:
    return pair_universe(ci.instance)


def lp_stable_polytope(ci: CouplesInstance) -> LinearProgram:
    """Capacity rows plus at-most-one-bundle rows over the acceptable pairs.

    Variable order matches ``market_pairs``.
    """
    inst = ci.instance
    pairs = market_pairs(ci)
    lp = LinearProgram()
    col = {e: lp.add_variable(f"x[{e[0]},{e[1]}]") for e in pairs}
    for r, c in inst.resources:
        coeffs = {}
        for e in pairs:
            m = e[1].multiplicity(r)
            if m:
                coeffs[col[e]] = Fraction(m)
        if coeffs:
            lp.add_constraint(coeffs, "<=", Fraction(c))
    for a in inst.agents:
        coeffs = {col[e]: ONE for e in pairs if e[0] == a.id}
        if coeffs:
            lp.add_constraint(coeffs, "<=", ONE)
    return lp


def _vertex_allocations(ci: CouplesInstance) -> Iterator[Allocation]:
    pairs = market_pairs(ci)
    lp = lp_stable_polytope(ci)
    for vertex in vertex_enumerate(lp):
        yield Allocation({e: v for e, v in zip(pairs, vertex) if v != 0})


def all_roundings_stable(ci: CouplesInstance, x: Allocation) -> bool:
    """The operational dominance test: every rounding of x (respecting the
    at-most-one-bundle rows) is stable under the capacities it realizes."""
    for y in enumerate_roundings(ci.instance, x):
        if not stability_check(ci, y, realized_capacities(ci, y)).stable:
            return False
    return True


def dominating_vertices(ci: CouplesInstance) -> Iterator[Allocation]:
    for x in _vertex_allocations(ci):
        if all_roundings_stable(ci, x):
            yield x


def dominating_vertex_small(ci: CouplesInstance) -> Allocation:
    """First vertex (in canonical vertex order) all of whose roundings are
    stable.  Exhaustive over vertices; absence is reported, not retried."""
    for x in dominating_vertices(ci):
        return x
    raise NoDominatingVertexError(
        "no vertex of the stable polytope passed the all-roundings-stable test"
    )


# ---------------------------------------------------------------------------
# fair + stable pipeline
# ---------------------------------------------------------------------------


def couples_condition(ci: CouplesInstance, alpha: tuple[int, ...], delta: int) -> Fraction:
    """Slack of  sum_l 1/(alpha_l+1) + 2/(delta+2) <= 1/2."""
    total = sum((Fraction(1, a + 1) for a in alpha), ZERO)
    total += Fraction(2, delta + 2)
    return Fraction(1, 2) - total


@dataclass
class FairStableResult:
    fractional: Allocation
    rounded: Allocation
    delta: int
    resource_excess: dict[str, int]
    total_weighted_excess: int
    certificate: Certificate
    block_report: BlockReport


def fair_stable_allocation(
    ci: CouplesInstance,
    utilities: UtilityModel,
    objective: FairObjective,
    alpha: tuple[int, ...],
    delta: int,
) -> FairStableResult:
    """Pick the dominating vertex maximizing the group-fairness objective,
    round it, and certify stability plus all deviation caps."""
    inst = ci.instance
    if len(alpha) != len(inst.dimensions):
        raise BudgetError(
            f"alpha has {len(alpha)} entries for {len(inst.dimensions)} dimensions"
        )
    if couples_condition(ci, alpha, delta) < 0:
        raise BudgetError("condition sum 1/(alpha_l+1) + 2/(delta+2) <= 1/2 fails")

    group_keys = [
        (dim, g) for dim in inst.dimensions for g in inst.groups_in(dim)
    ]

    def score(x: Allocation) -> float:
        total = 0.0
        for key in group_keys:
            mem = inst.group_members(*key)
            u = sum(
                (utilities.of(*e) * v for e, v in x.values.items() if e[0] in mem),
                ZERO,
            )
            total += objective.f(float(u))
        return total

    best: Optional[Allocation] = None
    best_score = float("-inf")
    for x in dominating_vertices(ci):
        s = score(x)
        if s > best_score:
            best, best_score = x, s
    if best is None:
        raise NoDominatingVertexError(
            "no vertex of the stable polytope passed the all-roundings-stable test"
        )

    budget = DeviationBudget(
        alpha=tuple(alpha),
        delta=delta + 1,
        Delta=2,
        psi=1,
        omega_star=inst.omega_star,
    )
    y, cert = iterative_round(inst, best, utilities, budget)

    excess = {}
    for r, c in inst.resources:
        used = int(y.resource_usage(r))
        excess[r] = max(0, used - c)
        if excess[r] > delta:
            raise InvariantViolation(
                f"resource {r!r} exceeded capacity by {excess[r]} > delta={delta}"
            )
    weighted = sum(
        inst.agent(a).demand for (a, _), v in y.values.items() if v == 1
    )
    total_cap = sum(c for _, c in inst.resources)
    over = max(0, weighted - total_cap)
    if over > 4:
        raise InvariantViolation(f"total weighted excess {over} > 4")
    report = stability_check(ci, y, realized_capacities(ci, y))
    if not report.stable:
        raise InvariantViolation(
            "rounding of a dominating vertex came out unstable: "
            + ", ".join(f"cond{w.condition}:{w.agent}" for w in report.witnesses)
        )
    return FairStableResult(
        fractional=best,
        rounded=y,
        delta=delta,
        resource_excess=excess,
        total_weighted_excess=over,
        certificate=cert,
        block_report=report,
    )

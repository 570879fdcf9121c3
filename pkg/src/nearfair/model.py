"""Core market model: agents with bundle demands, capacitated resources,
group structure along several dimensions, and (fractional) allocations.

An instance couples a set of agents, each demanding a fixed number of
resource units, with a set of finite-capacity resources.  Agents may belong
to at most one group per dimension.  An allocation assigns to each agent at
most one *bundle* (a multiset of resources matching the agent's demand);
*binding* agents must receive exactly one.  Everything is exact-rational so
that integrality and tightness tests downstream are decidable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .errors import InvalidInstanceError
from .rationals import ONE, ZERO, rat

# ---------------------------------------------------------------------------
# Bundles
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Bundle:
    """Immutable multiset of resources, stored as sorted (resource, count)."""

    items: tuple[tuple[str, int], ...]

    @staticmethod
    def of(counts: Mapping[str, int] | Iterable[tuple[str, int]]) -> "Bundle":
        if isinstance(counts, Mapping):
            pairs = counts.items()
        else:
            pairs = counts
        cleaned = tuple(sorted((r, int(m)) for r, m in pairs if int(m) != 0))
        if any(m < 0 for _, m in cleaned):
            raise InvalidInstanceError(f"negative multiplicity in bundle {cleaned}")
        return Bundle(cleaned)

    def multiplicity(self, resource: str) -> int:
        for r, m in self.items:
            if r == resource:
                return m
        return 0

    @property
    def size(self) -> int:
        return sum(m for _, m in self.items)

    def resources(self) -> tuple[str, ...]:
        return tuple(r for r, _ in self.items)

    def __str__(self) -> str:
        return "{" + ",".join(f"{r}:{m}" for r, m in self.items) + "}"


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentSpec:
    """One agent: positive demand and optional group membership per dimension."""

    id: str
    demand: int = 1
    groups: Mapping[str, str] = field(default_factory=dict)


@dataclass
class Instance:
    """A capacitated allocation market.

    Parameters
    ----------
    agents : agent specs, order fixes the agent order everywhere.
    resources : (resource id, capacity) pairs, order fixes resource order.
    binding : ids of agents that must receive exactly one bundle.
    dimensions : ordered dimension names; defaults to the sorted union of
        dimension names used by the agents.
    acceptability : optional set of (agent, resource) pairs; ``None`` means
        every resource is acceptable to every agent.
    """

    agents: Sequence[AgentSpec]
    resources: Sequence[tuple[str, int]]
    binding: frozenset[str] = frozenset()
    dimensions: Optional[Sequence[str]] = None
    acceptability: Optional[frozenset[tuple[str, str]]] = None

    def __post_init__(self):
        self.agents = tuple(self.agents)
        self.resources = tuple((r, int(c)) for r, c in self.resources)
        self.binding = frozenset(self.binding)
        if self.dimensions is None:
            names = sorted({d for a in self.agents for d in a.groups})
            self.dimensions = tuple(names)
        else:
            self.dimensions = tuple(self.dimensions)
        if self.acceptability is not None:
            self.acceptability = frozenset(tuple(p) for p in self.acceptability)
        self._agent_by_id = {a.id: a for a in self.agents}
        self._capacity = dict(self.resources)
        self.validate()

    # -- lookups ------------------------------------------------------------

    def agent(self, agent_id: str) -> AgentSpec:
        try:
            return self._agent_by_id[agent_id]
        except KeyError:
            raise InvalidInstanceError(f"unknown agent {agent_id!r}") from None

    def capacity(self, resource: str) -> int:
        try:
            return self._capacity[resource]
        except KeyError:
            raise InvalidInstanceError(f"unknown resource {resource!r}") from None

    def resource_ids(self) -> tuple[str, ...]:
        return tuple(r for r, _ in self.resources)

    def acceptable(self, agent_id: str) -> tuple[str, ...]:
        """Acceptable resources for an agent, in instance resource order."""
        if self.acceptability is None:
            return self.resource_ids()
        return tuple(
            r for r in self.resource_ids() if (agent_id, r) in self.acceptability
        )

    @property
    def omega_star(self) -> int:
        return max((a.demand for a in self.agents), default=1)

    def group_members(self, dim: str, group_id: str) -> frozenset[str]:
        return frozenset(
            a.id for a in self.agents if a.groups.get(dim) == group_id
        )

    def groups_in(self, dim: str) -> tuple[str, ...]:
        """Group ids present in a dimension, sorted for determinism."""
        return tuple(sorted({a.groups[dim] for a in self.agents if dim in a.groups}))

    def group_count(self, dim: str) -> int:
        return len(self.groups_in(dim))

    # -- validation -----------------------------------------------------------

    @classmethod
    def from_group_sets(
        cls,
        agents: Sequence[AgentSpec],
        resources: Sequence[tuple[str, int]],
        group_sets: Mapping[str, Mapping[str, Iterable[str]]],
        binding: Iterable[str] = (),
        dimensions: Optional[Sequence[str]] = None,
        acceptability: Optional[Iterable[tuple[str, str]]] = None,
    ) -> "Instance":
        """Build an instance from per-dimension group-to-agent-set maps.

        Rejects overlapping groups inside a dimension; agent specs passed
        here must not carry their own memberships.
        """
        membership: dict[str, dict[str, str]] = {a.id: {} for a in agents}
        for dim, groups in group_sets.items():
            seen: dict[str, str] = {}
            for gid, members in groups.items():
                for a in members:
                    if a in seen:
                        raise InvalidInstanceError(
                            f"agent {a!r} in groups {seen[a]!r} and {gid!r} "
                            f"of dimension {dim!r}"
                        )
                    seen[a] = gid
                    if a not in membership:
                        raise InvalidInstanceError(f"unknown agent {a!r} in group {gid!r}")
                    membership[a][dim] = gid
        rebuilt = [
            AgentSpec(a.id, a.demand, membership[a.id]) for a in agents
        ]
        return cls(
            rebuilt,
            resources,
            binding=frozenset(binding),
            dimensions=dimensions if dimensions is not None else sorted(group_sets),
            acceptability=(
                frozenset(acceptability) if acceptability is not None else None
            ),
        )

    def validate(self) -> None:
        """Raise InvalidInstanceError unless all structural invariants hold."""
        seen = set()
        for a in self.agents:
            if a.id in seen:
                raise InvalidInstanceError(f"duplicate agent id {a.id!r}")
            seen.add(a.id)
            if a.demand < 1:
                raise InvalidInstanceError(f"agent {a.id!r} has demand {a.demand} < 1")
            for dim in a.groups:
                if dim not in self.dimensions:
                    raise InvalidInstanceError(
                        f"agent {a.id!r} grouped in unknown dimension {dim!r}"
                    )
        seen_r = set()
        for r, c in self.resources:
            if r in seen_r:
                raise InvalidInstanceError(f"duplicate resource id {r!r}")
            seen_r.add(r)
            if c < 1:
                raise InvalidInstanceError(f"resource {r!r} has capacity {c} < 1")
        unknown = self.binding - {a.id for a in self.agents}
        if unknown:
            raise InvalidInstanceError(f"binding set references unknown agents {sorted(unknown)}")
        if self.acceptability is not None:
            for a, r in self.acceptability:
                if a not in self._agent_by_id:
                    raise InvalidInstanceError(f"acceptability references unknown agent {a!r}")
                if r not in self._capacity:
                    raise InvalidInstanceError(f"acceptability references unknown resource {r!r}")
        # group disjointness per dimension is automatic: membership is a
        # single group id per dimension on each agent spec.


def enumerate_bundles(agent_id: str, instance: Instance) -> list[Bundle]:
    """All demand-sized multisets of the agent's acceptable resources.

    Multiplicity of a resource inside a bundle is capped at min(demand,
    capacity): a bundle asking for more units than exist can never be
    allocated.  The order is lexicographic in instance resource order and is
    stable across runs.
    """
    spec = instance.agent(agent_id)
    if spec.demand < 1:
        raise InvalidInstanceError(f"agent {agent_id!r} has demand {spec.demand}")
    acceptable = instance.acceptable(agent_id)
    out = []
    for combo in itertools.combinations_with_replacement(acceptable, spec.demand):
        counts: dict[str, int] = {}
        for r in combo:
            counts[r] = counts.get(r, 0) + 1
        if all(m <= min(spec.demand, instance.capacity(r)) for r, m in counts.items()):
            out.append(Bundle.of(counts))
    return out


def pair_universe(instance: Instance) -> list[tuple[str, Bundle]]:
    """Every feasible (agent, bundle) pair, in deterministic order."""
    pairs = []
    for a in instance.agents:
        for q in enumerate_bundles(a.id, instance):
            pairs.append((a.id, q))
    return pairs


# ---------------------------------------------------------------------------
# Allocations
# ---------------------------------------------------------------------------

Pair = tuple[str, Bundle]


@dataclass
class Allocation:
    """Sparse mapping from (agent, bundle) pairs to values in [0, 1]."""

    values: dict[Pair, Fraction] = field(default_factory=dict)

    def __post_init__(self):
        self.values = {
            e: rat(v) for e, v in self.values.items() if rat(v) != 0
        }
        for e, v in self.values.items():
            if not (0 <= v <= 1):
                raise InvalidInstanceError(f"allocation value {v} for {e} outside [0,1]")

    def value(self, agent_id: str, bundle: Bundle) -> Fraction:
        return self.values.get((agent_id, bundle), ZERO)

    def support(self) -> list[Pair]:
        return sorted(self.values.keys())

    @property
    def integral(self) -> bool:
        return all(v == 1 for v in self.values.values())

    def agent_total(self, agent_id: str) -> Fraction:
        return sum(
            (v for (a, _), v in self.values.items() if a == agent_id), ZERO
        )

    def resource_usage(self, resource: str) -> Fraction:
        return sum(
            (q.multiplicity(resource) * v for (_, q), v in self.values.items()),
            ZERO,
        )

    def fractional_pairs(self) -> list[Pair]:
        return sorted(e for e, v in self.values.items() if 0 < v < 1)

    def fractional_agents(self) -> frozenset[str]:
        """Agents with two or more fractionally allocated bundles."""
        counts: dict[str, int] = {}
        for (a, _), v in self.values.items():
            if 0 < v < 1:
                counts[a] = counts.get(a, 0) + 1
        return frozenset(a for a, n in counts.items() if n >= 2)

    def copy(self) -> "Allocation":
        return Allocation(dict(self.values))

    def check_allocation(self, instance: Instance, *, capacities: bool = True) -> list[str]:
        """Return human-readable violations of the allocation constraints.

        Binding agents must total exactly 1, others at most 1; with
        ``capacities`` every resource must stay within its capacity (rounded
        outputs deliberately relax that bound, so it is optional).
        """
        problems = []
        totals: dict[str, Fraction] = {a.id: ZERO for a in instance.agents}
        for (a, q), v in self.values.items():
            if a not in totals:
                problems.append(f"unknown agent {a!r} in support")
                continue
            if q.size != instance.agent(a).demand:
                problems.append(f"bundle {q} has size {q.size} != demand of {a!r}")
            totals[a] += v
        for a in instance.agents:
            if a.id in instance.binding:
                if totals[a.id] != 1:
                    problems.append(f"binding agent {a.id!r} totals {totals[a.id]} != 1")
            elif totals[a.id] > 1:
                problems.append(f"agent {a.id!r} totals {totals[a.id]} > 1")
        if capacities:
            for r, c in instance.resources:
                used = self.resource_usage(r)
                if used > c:
                    problems.append(f"resource {r!r} used {used} > capacity {c}")
        return problems


# ---------------------------------------------------------------------------
# Incidence views over a support
# ---------------------------------------------------------------------------


class Support:
    """Incidence structure over a set of (agent, bundle) pairs.

    The pairs play the role of hyperedges touching one agent, the groups the
    agent belongs to, and all resources in the bundle.
    """

    def __init__(self, pairs: Iterable[Pair], instance: Instance):
        self.pairs: tuple[Pair, ...] = tuple(pairs)
        self.instance = instance

    def __len__(self) -> int:
        return len(self.pairs)

    def of_agent(self, agent_id: str) -> list[Pair]:
        return [e for e in self.pairs if e[0] == agent_id]

    def of_group(self, dim: str, group_id: str) -> list[Pair]:
        members = self.instance.group_members(dim, group_id)
        return [e for e in self.pairs if e[0] in members]

    def of_resource(self, resource: str) -> list[Pair]:
        return [e for e in self.pairs if e[1].multiplicity(resource) >= 1]

    def agents(self) -> tuple[str, ...]:
        seen = []
        for a, _ in self.pairs:
            if a not in seen:
                seen.append(a)
        return tuple(seen)

    def resources(self) -> tuple[str, ...]:
        out = []
        for _, q in self.pairs:
            for r in q.resources():
                if r not in out:
                    out.append(r)
        return tuple(out)

    def groups(self, dim: str) -> tuple[str, ...]:
        out = []
        for a, _ in self.pairs:
            g = self.instance.agent(a).groups.get(dim)
            if g is not None and g not in out:
                out.append(g)
        return tuple(out)


def incidence(support: Support, key) -> list[Pair]:
    """Dispatch on key kind: agent id, (dimension, group) pair, resource id."""
    inst = support.instance
    if isinstance(key, tuple) and len(key) == 2 and key[0] in inst.dimensions:
        dim, gid = key
        if gid not in inst.groups_in(dim):
            raise KeyError(f"unknown group {gid!r} in dimension {dim!r}")
        return support.of_group(dim, gid)
    if isinstance(key, str):
        if key in inst._agent_by_id:
            return support.of_agent(key)
        if key in inst._capacity:
            return support.of_resource(key)
    raise KeyError(f"unknown incidence key {key!r}")


# ---------------------------------------------------------------------------
# Utilities
# ---------------------------------------------------------------------------


class UtilityModel:
    """Agent utilities over bundles.

    ``additive`` mode stores one value per (agent, resource) and scores a
    bundle as the multiplicity-weighted sum; ``explicit`` mode stores one
    value per (agent, bundle).  Utilities are non-negative rationals.
    """

    def __init__(
        self,
        additive: Optional[Mapping[str, Mapping[str, Fraction]]] = None,
        explicit: Optional[Mapping[Pair, Fraction]] = None,
    ):
        if (additive is None) == (explicit is None):
            raise InvalidInstanceError("give exactly one of additive= or explicit=")
        self.additive = (
            {a: {r: rat(v) for r, v in row.items()} for a, row in additive.items()}
            if additive is not None
            else None
        )
        self.explicit = (
            {e: rat(v) for e, v in explicit.items()} if explicit is not None else None
        )
        table = (
            [v for row in self.additive.values() for v in row.values()]
            if self.additive is not None
            else list(self.explicit.values())
        )
        if any(v < 0 for v in table):
            raise InvalidInstanceError("utilities must be non-negative")

    def of(self, agent_id: str, bundle: Bundle) -> Fraction:
        if self.additive is not None:
            row = self.additive.get(agent_id, {})
            return sum((m * row.get(r, ZERO) for r, m in bundle.items), ZERO)
        try:
            return self.explicit[(agent_id, bundle)]
        except KeyError:
            raise InvalidInstanceError(
                f"no utility defined for ({agent_id!r}, {bundle})"
            ) from None

    def group_max(self, instance: Instance, dim: str, group_id: str) -> Fraction:
        """Largest single-bundle utility attainable by a member of the group."""
        best = ZERO
        for a in sorted(instance.group_members(dim, group_id)):
            for q in enumerate_bundles(a, instance):
                u = self.of(a, q)
                if u > best:
                    best = u
        return best


def group_utility(
    allocation: Allocation,
    utilities: UtilityModel,
    instance: Instance,
    dim: str,
    group_id: str,
) -> Fraction:
    """Total utility a group derives from an allocation."""
    members = instance.group_members(dim, group_id)
    total = ZERO
    for (a, q), v in allocation.values.items():
        if a in members:
            total += utilities.of(a, q) * v
    return total

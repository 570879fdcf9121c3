"""Exception hierarchy shared by all solvers and the CLI.

Each class maps to a distinct CLI exit code; see ``nearfair.cli``.
"""


class NearFairError(Exception):
    """Base class for all library errors."""


class InvalidInstanceError(NearFairError):
    """Instance data violates a structural invariant (overlapping groups,
    zero capacity, unknown ids, malformed preferences, ...)."""


class InfeasibleInstanceError(NearFairError):
    """No fractional allocation exists for the instance."""


class BudgetError(NearFairError):
    """Deviation budget fails the sufficient condition or the total-deviation
    rule, so the rounding guarantee does not apply."""


class ScaleExceededError(NearFairError):
    """A brute-force guard tripped; the instance is too large for the
    exhaustive routine that was asked to run."""


class NoDominatingVertexError(NearFairError):
    """Exhaustive vertex search found no point all of whose roundings are
    stable.  The search is complete over vertices, so this is reported
    rather than silently retried."""


class RefinementInfeasibleError(NearFairError):
    """Vertex refinement of a fair fractional solution stayed infeasible
    even after the tolerance was relaxed."""


class SchemaError(NearFairError):
    """Malformed instance / allocation JSON."""


class InvariantViolation(AssertionError, NearFairError):
    """An internal guarantee failed (per-iteration constraint count bound,
    LP feasibility during rounding, ...).  Always a bug, never user error."""

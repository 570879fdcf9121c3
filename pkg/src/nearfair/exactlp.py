"""Exact-rational linear programming returning optimal basic feasible points.

Two-phase primal simplex over `fractions.Fraction` with bounded variables:
the box bounds are handled implicitly (nonbasic variables rest at a bound)
instead of as constraint rows, which keeps the working basis small.  Pricing
is largest-coefficient with a smallest-index tie-break; after a long
degenerate streak the solver switches permanently to Bland's rule, so
termination is guaranteed and identical inputs give identical outputs.

Linearly dependent equality rows are tolerated: rows whose artificial cannot
be pivoted out after phase 1 are provably redundant and get dropped.

Every optimal answer is a vertex: the tight bounds and tight constraint rows
have full column rank, and ``solve_vertex``/``feasible_vertex`` verify that
rank certificate before returning.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .errors import InvalidInstanceError, InvariantViolation
from .rationals import ONE, ZERO, rat

_L, _U = 0, 1  # nonbasic rest positions


@dataclass(frozen=True)
class Variable:
    name: str
    lb: Fraction
    ub: Fraction


@dataclass
class Constraint:
    coeffs: dict[int, Fraction]
    rel: str  # '<=', '=', '>='
    rhs: Fraction


class LinearProgram:
    """Finite-box variables, linear constraints, linear minimize objective."""

    def __init__(self):
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective: dict[int, Fraction] = {}

    def add_variable(self, name: str, lb=ZERO, ub=ONE) -> int:
        lb, ub = rat(lb), rat(ub)
        if lb > ub:
            raise InvalidInstanceError(f"variable {name!r} has lb {lb} > ub {ub}")
        self.variables.append(Variable(name, lb, ub))
        return len(self.variables) - 1

    def add_constraint(self, coeffs: Mapping[int, object], rel: str, rhs) -> int:
        if rel not in ("<=", "=", ">="):
            raise InvalidInstanceError(f"bad relation {rel!r}")
        clean = {int(j): rat(v) for j, v in coeffs.items() if rat(v) != 0}
        for j in clean:
            if not 0 <= j < len(self.variables):
                raise InvalidInstanceError(f"constraint references unknown variable {j}")
        self.constraints.append(Constraint(clean, rel, rat(rhs)))
        return len(self.constraints) - 1

    def set_objective(self, coeffs: Mapping[int, object]) -> None:
        self.objective = {int(j): rat(v) for j, v in coeffs.items() if rat(v) != 0}

    @property
    def n(self) -> int:
        return len(self.variables)


@dataclass
class VertexSolution:
    status: str  # 'optimal' | 'infeasible' | 'unbounded'
    values: list[Fraction] = field(default_factory=list)
    objective: Fraction = ZERO
    tight_constraints: frozenset[int] = frozenset()

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def value(self, j: int) -> Fraction:
        return self.values[j]


# ---------------------------------------------------------------------------
# simplex core
# ---------------------------------------------------------------------------


class _Tableau:
    """Dense working matrix with implicit variable bounds.

    Columns: structural variables, then one slack per inequality row, then
    one artificial per row.  ``T`` is kept row-reduced so that every live
    row's basic column is a unit vector; ``beta[i]`` holds the current
    *value* of the basic variable of row i, and ``x[j]`` the value of every
    nonbasic variable (always at one of its bounds).
    """

    def __init__(self, lp: LinearProgram):
        self.lp = lp
        n = lp.n
        self.lb: list[Optional[Fraction]] = [v.lb for v in lp.variables]
        self.ub: list[Optional[Fraction]] = [v.ub for v in lp.variables]
        rows: list[dict[int, Fraction]] = []
        col = n
        for c in lp.constraints:
            row = dict(c.coeffs)
            if c.rel in ("<=", ">="):
                row[col] = ONE if c.rel == "<=" else -ONE
                self.lb.append(ZERO)
                self.ub.append(None)  # slack, unbounded above
                col += 1
            rows.append(row)
        self.n_struct_slack = col
        self.m = len(rows)
        self.art_of_row = list(range(col, col + self.m))
        for _ in range(self.m):
            self.lb.append(ZERO)
            self.ub.append(None)
        self.ncols = col + self.m
        self.arts = frozenset(self.art_of_row)

        self.status: list[int] = [_L] * self.ncols
        self.x: list[Fraction] = [
            self.lb[j] if self.lb[j] is not None else ZERO for j in range(self.ncols)
        ]
        dense = [[ZERO] * self.ncols for _ in range(self.m)]
        for i, row in enumerate(rows):
            for j, v in row.items():
                dense[i][j] = v
        self.beta: list[Fraction] = [ZERO] * self.m
        self.basis: list[int] = []
        for i in range(self.m):
            resid = self.lp.constraints[i].rhs - sum(
                dense[i][j] * self.x[j]
                for j in range(self.n_struct_slack)
                if dense[i][j]
            )
            if resid < 0:
                # flip the working row so the artificial basis column is +e_i
                dense[i] = [-v for v in dense[i]]
                resid = -resid
            a = self.art_of_row[i]
            dense[i][a] = ONE
            self.basis.append(a)
            self.beta[i] = resid
        self.T = dense
        self.live = [True] * self.m
        self.basic_set = set(self.basis)

    # -- pivoting ---------------------------------------------------------

    def _pivot_matrix(self, i: int, j: int) -> None:
        """Row-reduce so column j becomes the unit vector of row i."""
        row = self.T[i]
        piv = row[j]
        if piv == 0:
            raise InvariantViolation("zero pivot")
        if piv != 1:
            inv = ONE / piv
            self.T[i] = row = [v * inv for v in row]
        for k in range(self.m):
            if k == i or not self.live[k]:
                continue
            f = self.T[k][j]
            if f:
                rk = self.T[k]
                self.T[k] = [a - f * b for a, b in zip(rk, row)]
        self.basis[i] = j
        self.basic_set = set(self.basis)

    def _reduced_costs(self, c: list[Fraction]) -> list[Fraction]:
        z = list(c)
        for i in range(self.m):
            if not self.live[i]:
                continue
            cb = c[self.basis[i]]
            if cb:
                ti = self.T[i]
                for j in range(self.ncols):
                    if ti[j]:
                        z[j] -= cb * ti[j]
        return z

    def _simplex(self, c: list[Fraction], forbidden: frozenset[int]) -> str:
        degenerate_streak = 0
        bland = False
        switch_at = 4 * (self.m + self.ncols) + 20
        z = self._reduced_costs(c)
        while True:
            enter = -1
            best = ZERO
            for j in range(self.ncols):
                if j in forbidden or j in self.basic_set:
                    continue
                lo, hi = self.lb[j], self.ub[j]
                if lo is not None and hi is not None and lo == hi:
                    continue  # fixed variable can never move
                zj = z[j]
                if self.status[j] == _L and zj < 0:
                    score = -zj
                elif self.status[j] == _U and zj > 0:
                    score = zj
                else:
                    continue
                if bland:
                    enter = j
                    break
                if score > best:
                    best, enter = score, j
            if enter == -1:
                return "optimal"
            direction = 1 if self.status[enter] == _L else -1

            t_best: Optional[Fraction] = None
            leave_row = -1
            leave_to = _L
            for i in range(self.m):
                if not self.live[i]:
                    continue
                a = self.T[i][enter] * direction
                if a == 0:
                    continue
                b = self.basis[i]
                if a > 0:
                    lo = self.lb[b]
                    if lo is None:
                        continue
                    t = (self.beta[i] - lo) / a
                    to = _L
                else:
                    hi = self.ub[b]
                    if hi is None:
                        continue
                    t = (self.beta[i] - hi) / a
                    to = _U
                if (
                    t_best is None
                    or t < t_best
                    or (t == t_best and b < self.basis[leave_row])
                ):
                    t_best, leave_row, leave_to = t, i, to

            span = None
            if self.lb[enter] is not None and self.ub[enter] is not None:
                span = self.ub[enter] - self.lb[enter]

            if span is not None and (t_best is None or span <= t_best):
                # entering runs all the way to its other bound: no basis change
                if span > 0:
                    for i in range(self.m):
                        if self.live[i] and self.T[i][enter]:
                            self.beta[i] -= direction * self.T[i][enter] * span
                    degenerate_streak = 0
                else:
                    degenerate_streak += 1
                self.status[enter] = _U if self.status[enter] == _L else _L
                self.x[enter] = (
                    self.ub[enter] if self.status[enter] == _U else self.lb[enter]
                )
                if degenerate_streak > switch_at:
                    bland = True
                continue

            if t_best is None:
                return "unbounded"

            t = t_best
            if t > 0:
                for i in range(self.m):
                    if self.live[i] and self.T[i][enter]:
                        self.beta[i] -= direction * self.T[i][enter] * t
                degenerate_streak = 0
            else:
                degenerate_streak += 1
                if degenerate_streak > switch_at:
                    bland = True
            leaving = self.basis[leave_row]
            self.status[leaving] = leave_to
            self.x[leaving] = self.lb[leaving] if leave_to == _L else self.ub[leaving]
            enter_bound = self.lb[enter] if direction == 1 else self.ub[enter]
            new_value = enter_bound + direction * t
            self._pivot_matrix(leave_row, enter)
            self.beta[leave_row] = new_value
            # keep the reduced costs in step with the basis change
            f = z[enter]
            if f:
                prow = self.T[leave_row]
                z = [a - f * b for a, b in zip(z, prow)]
                z[enter] = ZERO

    # -- phases -------------------------------------------------------------

    def phase1(self) -> bool:
        c = [ZERO] * self.ncols
        for a in self.art_of_row:
            c[a] = ONE
        status = self._simplex(c, forbidden=frozenset())
        if status != "optimal":
            raise InvariantViolation("phase-1 objective is bounded by construction")
        total = ZERO
        for i in range(self.m):
            if self.live[i] and self.basis[i] in self.arts:
                total += self.beta[i]
        for j in self.art_of_row:
            if j not in self.basic_set and self.status[j] == _U:
                raise InvariantViolation("artificial at upper bound")
        if total != 0:
            return False
        # pivot lingering zero-value artificials out of the basis; rows where
        # no structural column is available are dependent on others: drop them
        for i in range(self.m):
            if not self.live[i] or self.basis[i] not in self.arts:
                continue
            piv_col = -1
            for j in range(self.n_struct_slack):
                if j not in self.basic_set and self.T[i][j] != 0:
                    piv_col = j
                    break
            if piv_col >= 0:
                old = self.basis[i]
                new_value = self.x[piv_col]  # degenerate swap, values unchanged
                self.status[old] = _L
                self.x[old] = ZERO
                self._pivot_matrix(i, piv_col)
                self.beta[i] = new_value
            else:
                self.live[i] = False
        return True

    def phase2(self, objective: Mapping[int, Fraction]) -> str:
        c = [ZERO] * self.ncols
        for j, v in objective.items():
            c[j] = v
        return self._simplex(c, forbidden=self.arts)

    # -- extraction ---------------------------------------------------------

    def solution_values(self) -> list[Fraction]:
        vals = list(self.x)
        for i in range(self.m):
            if self.live[i]:
                vals[self.basis[i]] = self.beta[i]
        return vals[: self.lp.n]


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def _tight_constraints(lp: LinearProgram, values: Sequence[Fraction]) -> frozenset[int]:
    tight = set()
    for idx, c in enumerate(lp.constraints):
        lhs = sum((v * values[j] for j, v in c.coeffs.items()), ZERO)
        if lhs == c.rhs:
            tight.add(idx)
    return frozenset(tight)


def _rank(rows: list[list[Fraction]]) -> int:
    rows = [list(r) for r in rows]
    rank = 0
    ncols = len(rows[0]) if rows else 0
    for col in range(ncols):
        piv = next((i for i in range(rank, len(rows)) if rows[i][col] != 0), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        prow = rows[rank]
        inv = ONE / prow[col]
        prow = rows[rank] = [v * inv for v in prow]
        for i in range(len(rows)):
            if i != rank and rows[i][col]:
                f = rows[i][col]
                rows[i] = [a - f * b for a, b in zip(rows[i], prow)]
        rank += 1
        if rank == len(rows):
            break
    return rank


def vertex_rank(lp: LinearProgram, values: Sequence[Fraction]) -> int:
    """Rank of the rows tight at a feasible point (bounds and constraints)."""
    n = lp.n
    rows: list[list[Fraction]] = []
    for j, var in enumerate(lp.variables):
        if values[j] == var.lb or values[j] == var.ub:
            row = [ZERO] * n
            row[j] = ONE
            rows.append(row)
    for idx in _tight_constraints(lp, values):
        c = lp.constraints[idx]
        row = [ZERO] * n
        for j, v in c.coeffs.items():
            row[j] = v
        rows.append(row)
    if not rows:
        return 0
    return _rank(rows)


def _check_feasible(lp: LinearProgram, values: Sequence[Fraction]) -> None:
    for j, var in enumerate(lp.variables):
        if not (var.lb <= values[j] <= var.ub):
            raise InvariantViolation(
                f"solver returned {values[j]} outside [{var.lb},{var.ub}] for {var.name!r}"
            )
    for idx, c in enumerate(lp.constraints):
        lhs = sum((v * values[j] for j, v in c.coeffs.items()), ZERO)
        ok = lhs <= c.rhs if c.rel == "<=" else lhs >= c.rhs if c.rel == ">=" else lhs == c.rhs
        if not ok:
            raise InvariantViolation(f"solver violated constraint {idx}: {lhs} {c.rel} {c.rhs}")


def _finish(lp: LinearProgram, tab: _Tableau) -> VertexSolution:
    values = tab.solution_values()
    _check_feasible(lp, values)
    if vertex_rank(lp, values) != lp.n:
        raise InvariantViolation("optimal point is not a vertex: tight rows rank-deficient")
    obj = sum((v * values[j] for j, v in lp.objective.items()), ZERO)
    return VertexSolution(
        status="optimal",
        values=values,
        objective=obj,
        tight_constraints=_tight_constraints(lp, values),
    )


def solve_vertex(lp: LinearProgram) -> VertexSolution:
    """Minimize the objective; any optimal answer is an extreme point."""
    tab = _Tableau(lp)
    if not tab.phase1():
        return VertexSolution(status="infeasible")
    status = tab.phase2(lp.objective)
    if status == "unbounded":
        return VertexSolution(status="unbounded")
    return _finish(lp, tab)


def feasible_vertex(lp: LinearProgram) -> VertexSolution:
    """Any vertex of the feasible region (phase-1 only)."""
    tab = _Tableau(lp)
    if not tab.phase1():
        return VertexSolution(status="infeasible")
    return _finish(lp, tab)

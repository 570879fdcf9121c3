"""LP engine: optimality, vertex certificates, determinism, cross-checks."""

import random
from fractions import Fraction

import pytest

from nearfair.exactlp import (
    LinearProgram,
    feasible_vertex,
    solve_vertex,
    vertex_rank,
)
from nearfair.oracle import vertex_enumerate

from generators import random_lp


def test_min_over_box():
    lp = LinearProgram()
    x = lp.add_variable("x")
    lp.set_objective({x: 1})
    sol = solve_vertex(lp)
    assert sol.optimal and sol.values == [0]


def test_feasibility_returns_vertex_not_midpoint():
    lp = LinearProgram()
    x = lp.add_variable("x")
    y = lp.add_variable("y")
    lp.add_constraint({x: 1, y: 1}, "=", 1)
    sol = feasible_vertex(lp)
    assert sol.optimal
    assert sorted(sol.values) == [0, 1]


def test_infeasible_bounds_vs_row():
    lp = LinearProgram()
    x = lp.add_variable("x")
    lp.add_constraint({x: 1}, ">=", 2)
    assert solve_vertex(lp).status == "infeasible"


def test_point_polytope_is_a_vertex():
    lp = LinearProgram()
    x = lp.add_variable("x")
    lp.add_constraint({x: 1}, "=", Fraction(1, 2))
    sol = feasible_vertex(lp)
    assert sol.optimal and sol.values == [Fraction(1, 2)]


def test_contradictory_equalities():
    lp = LinearProgram()
    x = lp.add_variable("x")
    lp.add_constraint({x: 1}, "=", Fraction(1, 4))
    lp.add_constraint({x: 1}, "=", Fraction(3, 4))
    assert feasible_vertex(lp).status == "infeasible"


def test_dependent_equalities_tolerated():
    lp = LinearProgram()
    x = lp.add_variable("x")
    y = lp.add_variable("y")
    lp.add_constraint({x: 1, y: 1}, "=", 1)
    lp.add_constraint({x: 2, y: 2}, "=", 2)
    lp.set_objective({x: 1})
    sol = solve_vertex(lp)
    assert sol.optimal and sol.values == [0, 1]


def test_determinism():
    rng = random.Random(7)
    for _ in range(25):
        lp = random_lp(rng)
        a = solve_vertex(lp)
        b = solve_vertex(lp)
        assert a.status == b.status
        if a.optimal:
            assert a.values == b.values


def test_vertex_certificate_on_random_lps():
    rng = random.Random(11)
    optimal = 0
    for _ in range(120):
        lp = random_lp(rng)
        sol = solve_vertex(lp)
        if sol.optimal:
            optimal += 1
            assert vertex_rank(lp, sol.values) == lp.n
    assert optimal > 30


def test_value_matches_vertex_enumeration():
    rng = random.Random(13)
    compared = 0
    for _ in range(60):
        lp = random_lp(rng, max_vars=4)
        sol = solve_vertex(lp)
        vertices = vertex_enumerate(lp)
        if sol.optimal:
            compared += 1
            best = min(
                sum((c * v[j] for j, c in lp.objective.items()), Fraction(0))
                for v in vertices
            )
            assert sol.objective == best
        else:
            assert not vertices
    assert compared > 15


def test_negative_lower_bounds():
    lp = LinearProgram()
    x = lp.add_variable("x", -2, 3)
    y = lp.add_variable("y", Fraction(-1, 2), Fraction(1, 2))
    lp.add_constraint({x: 1, y: -1}, "<=", 1)
    lp.set_objective({x: 1, y: 1})
    sol = solve_vertex(lp)
    assert sol.optimal and sol.values == [-2, Fraction(-1, 2)]

"""Budget calculus and the iterative rounder."""

import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from nearfair.errors import BudgetError, InvalidInstanceError
from nearfair.model import AgentSpec, Allocation, Bundle, Instance, UtilityModel
from nearfair.oracle import best_deviation
from nearfair.rounding import (
    DeviationBudget,
    check_condition,
    floor_sum,
    forced_psi,
    iterative_round,
    min_Delta,
    verify_approximation,
)

from generators import fractional_allocation, minimal_budget, random_instance


# -- condition arithmetic ----------------------------------------------------


def test_condition_tight():
    b = DeviationBudget((3,), 3, None, 1, 1)
    assert check_condition(b) == 0


def test_condition_fails():
    b = DeviationBudget((1, 1, 1), 7, None, 0, 1)
    assert check_condition(b) == 1 - (Fraction(3, 2) + Fraction(1, 8))
    assert check_condition(b) < 0


def test_condition_slack():
    b = DeviationBudget((3, 3, 3), 7, None, 0, 1)
    assert check_condition(b) == Fraction(1, 8)


def test_min_delta_psi1():
    assert min_Delta(DeviationBudget((3,), 3, None, 1, 1)) == 2


def test_min_delta_psi0():
    assert min_Delta(DeviationBudget((3, 3, 3), 7, None, 0, 1)) == 7


def test_min_delta_tight_psi0_rejected():
    # psi=0 with zero slack has no admissible total budget
    b = DeviationBudget((3, 3, 3), 3, None, 0, 1)
    assert check_condition(b) == 0
    with pytest.raises(BudgetError):
        min_Delta(b)


def test_couples_budget_recovers_two():
    # with no dimensions and demand 2, the smallest budget is delta=Delta=2
    b = DeviationBudget((), 3, None, 1, 2)
    assert check_condition(b) >= 0
    assert min_Delta(b) == 2


# -- the rounder --------------------------------------------------------------


def matching_setup():
    inst = Instance(
        [AgentSpec("a1", 1), AgentSpec("a2", 1)],
        [("r1", 1), ("r2", 1)],
        binding={"a1", "a2"},
    )
    u = UtilityModel(
        additive={"a1": {"r1": 1, "r2": 1}, "a2": {"r1": 1, "r2": 1}}
    )
    b1, b2 = Bundle.of({"r1": 1}), Bundle.of({"r2": 1})
    x = Allocation(
        {
            ("a1", b1): Fraction(1, 2),
            ("a1", b2): Fraction(1, 2),
            ("a2", b1): Fraction(1, 2),
            ("a2", b2): Fraction(1, 2),
        }
    )
    return inst, u, x


def test_integral_input_is_identity():
    inst, u, _ = matching_setup()
    x = Allocation({("a1", Bundle.of({"r1": 1})): 1})
    y, cert = iterative_round(
        Instance(inst.agents, inst.resources, binding={"a1"}),
        x, u, DeviationBudget((), 2, 2, 1, 1),
    )
    assert y.values == x.values
    assert cert.iterations == 0
    assert all(d == 0 for d, _ in cert.resource_deviations.values())


def test_half_matching_rounds_to_perfect_matching():
    inst, u, x = matching_setup()
    # delta=1 activates both resource-conservation rows, forcing a matching
    y, cert = iterative_round(inst, x, u, DeviationBudget((), 1, 2, 1, 1))
    assert sorted(q.resources()[0] for _, q in y.values) == ["r1", "r2"]
    assert all(d == 0 for d, _ in cert.resource_deviations.values())
    assert cert.total_deviation[0] == 0
    # the oracle agrees a zero-deviation rounding exists
    assert (0, 0, 0) in best_deviation(inst, x, u)


def test_half_matching_budget_delta2_still_verifies():
    inst, u, x = matching_setup()
    y, cert = iterative_round(inst, x, u, DeviationBudget((), 2, 2, 1, 1))
    assert cert.ok()
    for dev, bound in cert.resource_deviations.values():
        assert dev < bound


def test_rounding_property_and_count_bound_on_random_instances():
    rng = random.Random(42)
    done = 0
    while done < 25:
        inst, utilities = random_instance(rng)
        x = fractional_allocation(rng, inst)
        if x is None:
            continue
        budget = minimal_budget(inst, x)
        y, cert = iterative_round(inst, x, utilities, budget)
        assert cert.ok()
        # rounding property
        for e, v in x.values.items():
            if v == 1:
                assert y.value(*e) == 1
        for e in y.values:
            assert e in x.values
        # binding agents exactly one
        for a in inst.agents:
            total = y.agent_total(a.id)
            assert total == 1 if a.id in inst.binding else total <= 1
        # per-iteration constraint-count bound from the trace
        for state in cert.trace:
            assert state.constraints <= state.fractional
        # progress: fractional count non-increasing, strictly at ties of measure
        fracs = [s.fractional for s in cert.trace]
        assert all(a >= b for a, b in zip(fracs, fracs[1:]))
        # weighted mass conserved while the chi row is active
        for s1, s2 in zip(cert.trace, cert.trace[1:]):
            if s1.chi:
                assert s1.weighted_mass == s2.weighted_mass
        done += 1


def test_verify_boundary_is_strict():
    inst = Instance(
        [AgentSpec("a1", 1, {"d": "g"})],
        [("r1", 1), ("r2", 1)],
        binding={"a1"},
        dimensions=("d",),
    )
    u = UtilityModel(additive={"a1": {"r1": 2, "r2": 0}})
    b1, b2 = Bundle.of({"r1": 1}), Bundle.of({"r2": 1})
    x = Allocation({("a1", b1): Fraction(1, 2), ("a1", b2): Fraction(1, 2)})
    y = Allocation({("a1", b1): 1})
    # group deviation is exactly 1 = alpha * U* with alpha=?  U*=2, dev=1
    cert = verify_approximation(inst, x, y, u, DeviationBudget((1,), 2, 2, 1, 1))
    # bound alpha*U* = 2 > 1: passes
    assert cert.ok()
    # craft exact boundary: alpha*U* = dev -> fail
    u2 = UtilityModel(additive={"a1": {"r1": 1, "r2": 0}})
    cert2 = verify_approximation(
        inst, x, y, u2, DeviationBudget((1,), 2, 2, 1, 1)
    )
    dev, bound = cert2.group_deviations[("d", "g")]
    assert dev == Fraction(1, 2) and bound == 1
    y_dev = Allocation({("a1", b2): 1})
    cert3 = verify_approximation(
        inst,
        Allocation({("a1", b1): 1}),
        y_dev,
        u2,
        DeviationBudget((1,), 2, 2, 1, 1),
    )
    dev3, bound3 = cert3.group_deviations[("d", "g")]
    assert dev3 == 1 == bound3
    assert not cert3.ok()  # exact boundary fails strictly


def test_integer_utilities_sharpen_group_bound():
    # with integer utilities the observed deviation is at most alpha*U* - 1
    rng = random.Random(5)
    done = 0
    while done < 12:
        inst, _ = random_instance(rng)
        utilities = UtilityModel(
            additive={
                a.id: {r: Fraction(rng.randint(0, 4)) for r, _ in inst.resources}
                for a in inst.agents
            }
        )
        if any(
            utilities.group_max(inst, dim, g) == 0
            for dim in inst.dimensions
            for g in inst.groups_in(dim)
        ):
            continue
        x = fractional_allocation(rng, inst)
        if x is None:
            continue
        budget = minimal_budget(inst, x)
        y, cert = iterative_round(inst, x, utilities, budget)
        for (dim, g), (dev, bound) in cert.group_deviations.items():
            # integer-valued sides turn the strict bound into <= bound - 1
            assert bound.denominator == 1
            if dev.denominator == 1:
                assert dev <= bound - 1
        done += 1


def test_psi_forced():
    inst, u, x = matching_setup()
    assert forced_psi(x, 0)
    with pytest.raises(BudgetError):
        iterative_round(inst, x, u, DeviationBudget((), 1, 2, 0, 1))


def test_non_allocation_rejected():
    inst, u, _ = matching_setup()
    bad = Allocation({("a1", Bundle.of({"r1": 1})): Fraction(1, 2)})
    with pytest.raises(InvalidInstanceError):
        iterative_round(inst, bad, u, DeviationBudget((), 1, 2, 1, 1))


# -- floor-sum arithmetic ------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(data=st.data())
def test_floor_sum_bound_and_tight_dichotomy(data):
    d = data.draw(st.integers(1, 4))
    gamma = [
        data.draw(st.fractions(min_value=Fraction(1, 4), max_value=6))
        for _ in range(d)
    ]
    # Theta with sum Theta/gamma < 1
    weights = [data.draw(st.fractions(min_value=0, max_value=1)) for _ in range(d)]
    total = sum(weights) + 1
    Theta = [w / total * g for w, g in zip(weights, gamma)]
    assert sum(t / g for t, g in zip(Theta, gamma)) < 1
    theta = [
        data.draw(st.fractions(min_value=0, max_value=1)) * t for t in Theta
    ]
    eps = [data.draw(st.fractions(min_value=0, max_value=2)) for _ in range(d)]
    z = data.draw(st.integers(1, 40))
    value = floor_sum(theta, eps, gamma, z)
    assert value <= z - 1
    if value == z - 1:
        ratio_sum = sum(t / g for t, g in zip(Theta, gamma))
        assert (
            all(e == 0 for e in eps) and theta == Theta
        ) or z < 1 / (1 - ratio_sum)


def test_oracle_confirms_certificate_deviations():
    rng = random.Random(71)
    done = 0
    while done < 8:
        inst, utilities = random_instance(rng, max_agents=5, max_resources=3)
        x = fractional_allocation(rng, inst)
        if x is None or len(x.fractional_pairs()) > 14:
            continue
        budget = minimal_budget(inst, x)
        y, cert = iterative_round(inst, x, utilities, budget)
        triple = (
            max((d for d, _ in cert.group_deviations.values()), default=Fraction(0)),
            max((d for d, _ in cert.resource_deviations.values()), default=Fraction(0)),
            cert.total_deviation[0],
        )
        frontier = best_deviation(inst, x, utilities)
        assert any(
            f[0] <= triple[0] and f[1] <= triple[1] and f[2] <= triple[2]
            for f in frontier
        )
        done += 1


def test_psi_zero_path_with_chi_row():
    from generators import psi_zero_input
    from nearfair.rounding import min_Delta

    rng = random.Random(4096)
    chi_fired = 0
    for _ in range(40):
        inst, utilities, x = psi_zero_input(rng)
        assert not forced_psi(x, len(inst.dimensions))
        # generous per-group and per-resource budgets leave enough slack for
        # a small total budget, which is what makes the conservation row fire
        alpha = (9,) * len(inst.dimensions)
        delta = 10 * inst.omega_star - 1
        budget = DeviationBudget(alpha, delta, None, 0, inst.omega_star)
        budget = DeviationBudget(
            alpha, delta, min_Delta(budget), 0, inst.omega_star
        )
        assert budget.Delta <= 2
        y, cert = iterative_round(inst, x, utilities, budget)
        assert cert.ok(), cert.violations
        if any(s.chi for s in cert.trace):
            chi_fired += 1
            for s1, s2 in zip(cert.trace, cert.trace[1:]):
                if s1.chi:
                    assert s1.weighted_mass == s2.weighted_mass
    assert chi_fired >= 5


def test_round_with_explicit_utilities():
    from nearfair.model import UtilityModel as UM

    inst = Instance(
        [AgentSpec("a1", 1, {"d": "g"}), AgentSpec("a2", 1, {"d": "g"})],
        [("r1", 1), ("r2", 1)],
        binding={"a1", "a2"},
        dimensions=("d",),
    )
    b1, b2 = Bundle.of({"r1": 1}), Bundle.of({"r2": 1})
    u = UM(
        explicit={
            ("a1", b1): Fraction(3), ("a1", b2): Fraction(1),
            ("a2", b1): Fraction(2), ("a2", b2): Fraction(2),
        }
    )
    x = Allocation(
        {
            ("a1", b1): Fraction(1, 2), ("a1", b2): Fraction(1, 2),
            ("a2", b1): Fraction(1, 2), ("a2", b2): Fraction(1, 2),
        }
    )
    y, cert = iterative_round(inst, x, u, DeviationBudget((3,), 3, 2, 1, 1))
    assert cert.ok()


@settings(max_examples=150, deadline=None)
@given(
    alpha=st.lists(st.integers(0, 30), min_size=0, max_size=4),
    delta=st.integers(0, 40),
    psi=st.integers(0, 1),
    omega=st.integers(1, 3),
)
def test_condition_monotone_in_budgets(alpha, delta, psi, omega):
    base = check_condition(DeviationBudget(tuple(alpha), delta, None, psi, omega))
    looser = check_condition(
        DeviationBudget(tuple(a + 1 for a in alpha), delta + 1, None, psi, omega)
    )
    assert looser >= base
    if psi == 1:
        relaxed = check_condition(DeviationBudget(tuple(alpha), delta, None, 0, omega))
        assert relaxed == base + Fraction(1, 2)

"""Command-line interface: instance I/O, pipeline dispatch, certificates.

Exit codes: 0 success, 1 I/O or schema error, 2 infeasible instance,
3 budget condition violated (or a requested verification failed),
4 brute-force scale guard tripped.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

from . import apportionment as app
from . import couples as cpl
from . import envyfree as ef
from . import fairness as fair
from . import oracle
from .errors import (
    BudgetError,
    InfeasibleInstanceError,
    InvalidInstanceError,
    NearFairError,
    NoDominatingVertexError,
    RefinementInfeasibleError,
    ScaleExceededError,
    SchemaError,
)
from .model import Allocation
from .rationals import rat_str
from .rounding import (
    DeviationBudget,
    check_condition,
    forced_psi,
    iterative_round,
    min_Delta,
    verify_approximation,
)
from .schema import (
    dump_json,
    load_json,
    parse_allocation,
    parse_couples,
    parse_instance,
    parse_ma,
    serialize_allocation,
    serialize_instance,
    serialize_ma,
)

EXIT_OK = 0
EXIT_SCHEMA = 1
EXIT_INFEASIBLE = 2
EXIT_BUDGET = 3
EXIT_SCALE = 4


def _alpha(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(p) for p in text.split(","))


def _objective(tag: str) -> fair.FairObjective:
    if tag == "utilitarian":
        return fair.FairObjective.utilitarian()
    if tag == "proportional":
        return fair.FairObjective.proportional()
    raise SchemaError(f"unknown objective {tag!r}")


def _emit(doc: dict, out: str | None) -> None:
    text = dump_json(doc, out)
    if not out:
        print(text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_solve(args) -> int:
    paths = _expand_instances(args.instance)
    if len(paths) > 1:
        return _run_batch(args, paths)
    doc = load_json(paths[0])
    if args.pipeline == "assignment":
        instance, utilities = parse_instance(doc)
        if utilities is None:
            raise SchemaError("assignment instances need utilities")
        result = fair.approx_fair_allocation(
            instance, utilities, _objective(args.objective), args.alpha, args.delta
        )
        _emit(
            {
                "allocation": serialize_allocation(result.rounded)["entries"],
                "fractional": serialize_allocation(result.fractional)["entries"],
                "delta_plus": result.delta_plus,
                "total_excess": result.total_excess,
                "certificate": result.certificate.to_json(),
            },
            args.out,
        )
        return EXIT_OK
    if args.pipeline == "envyfree":
        instance, utilities = parse_instance(doc)
        if utilities is None:
            raise SchemaError("envy-free instances need utilities")
        h = ef.HomogeneousInstance(instance, utilities)
        x, _trace = ef.greedy_fractional_ef(h)
        y = ef.ef_round(h, x, args.alpha, args.delta)
        report = ef.check_ef_deviation(h, y, args.alpha, args.delta)
        _emit(
            {
                "allocation": serialize_allocation(y)["entries"],
                "fractional": serialize_allocation(x)["entries"],
                "envy_ok": report["ok"],
            },
            args.out,
        )
        return EXIT_OK if report["ok"] else EXIT_BUDGET
    if args.pipeline == "couples":
        ci, utilities = parse_couples(doc)
        if utilities is None:
            raise SchemaError("couples instances need utilities")
        result = cpl.fair_stable_allocation(
            ci, utilities, _objective(args.objective), args.alpha, args.delta
        )
        _emit(
            {
                "allocation": serialize_allocation(result.rounded)["entries"],
                "fractional": serialize_allocation(result.fractional)["entries"],
                "stable": result.block_report.stable,
                "resource_excess": result.resource_excess,
                "total_weighted_excess": result.total_weighted_excess,
                "certificate": result.certificate.to_json(),
            },
            args.out,
        )
        return EXIT_OK
    raise SchemaError(f"unknown pipeline {args.pipeline!r}")


def cmd_apportion(args) -> int:
    if args.csv:
        ma = _ma_from_csv(args.csv, args.house)
    else:
        ma = parse_ma(load_json(args.instance))
    method = app.SignpostMethod.named(args.method)
    alpha = args.alpha if args.alpha else (1,) * ma.d
    result = app.approx_apportionment(ma, method, alpha)
    _emit(
        {
            "seats": [
                {"tuple": list(e), "seats": n} for e, n in sorted(result.seats.items())
            ],
            "group_seats": [
                {"dimension": d, "group": g, "seats": n}
                for (d, g), n in sorted(result.group_seats.items())
            ],
            "house": result.total_seats(),
            "house_deviation": result.house_deviation,
            "delta_bound": result.delta_bound,
        },
        args.out,
    )
    return EXIT_OK


def _ma_from_csv(path: str, house: int | None):
    """Two-dimensional party x district vote table: header row holds district
    names, each body row starts with the party name."""
    if house is None:
        raise SchemaError("--house is required with --csv")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from None
    if len(rows) < 2 or len(rows[0]) < 2:
        raise SchemaError("vote table needs a header row and at least one party row")
    districts = [c.strip() for c in rows[0][1:]]
    parties = []
    votes = {}
    for row in rows[1:]:
        party = row[0].strip()
        parties.append(party)
        for district, cell in zip(districts, row[1:]):
            v = int(cell)
            if v > 0:
                votes[(party, district)] = v
    return app.MAInstance(
        dims=("party", "district"),
        groups={"party": tuple(parties), "district": tuple(districts)},
        votes=votes,
        lower={},
        upper={},
        house=house,
    )


def cmd_round(args) -> int:
    instance, utilities = parse_instance(load_json(args.instance))
    if utilities is None:
        raise SchemaError("rounding needs utilities in the instance file")
    x = parse_allocation(load_json(args.allocation))
    psi = args.psi
    if psi is None:
        psi = 1 if forced_psi(x, len(instance.dimensions)) else 0
    budget = DeviationBudget(
        alpha=args.alpha,
        delta=args.delta,
        Delta=args.Delta,
        psi=psi,
        omega_star=instance.omega_star,
    )
    if args.Delta is None:
        budget = DeviationBudget(
            alpha=args.alpha,
            delta=args.delta,
            Delta=min_Delta(budget),
            psi=psi,
            omega_star=instance.omega_star,
        )
    y, cert = iterative_round(instance, x, utilities, budget)
    _emit(
        {
            "allocation": serialize_allocation(y)["entries"],
            "certificate": cert.to_json(),
        },
        args.out,
    )
    return EXIT_OK


def cmd_check(args) -> int:
    instance, utilities = parse_instance(load_json(args.instance))
    y = parse_allocation(load_json(args.allocation))
    problems = y.check_allocation(instance, capacities=args.capacities)
    doc: dict = {"allocation_problems": problems}
    code = EXIT_OK if not problems else EXIT_BUDGET
    if args.against:
        if utilities is None:
            raise SchemaError("verification needs utilities in the instance file")
        x = parse_allocation(load_json(args.against))
        psi = args.psi
        if psi is None:
            psi = 1 if forced_psi(x, len(instance.dimensions)) else 0
        budget = DeviationBudget(
            alpha=args.alpha,
            delta=args.delta,
            Delta=args.Delta,
            psi=psi,
            omega_star=instance.omega_star,
        )
        cert = verify_approximation(instance, x, y, utilities, budget)
        doc["certificate"] = cert.to_json()
        if args.oracle:
            frontier = oracle.best_deviation(instance, x, utilities)
            doc["oracle_frontier"] = [
                [rat_str(a), rat_str(b), rat_str(c)] for a, b, c in frontier
            ]
        if not cert.ok():
            code = EXIT_BUDGET
    _emit(doc, args.out)
    return code


def cmd_gen(args) -> int:
    instance, utilities = fair.gen_lower_bound_instance(args.kind, args.n)
    _emit(serialize_instance(instance, utilities), args.out)
    return EXIT_OK


def cmd_budget(args) -> int:
    doc: dict = {}
    passed = True
    if args.assignment or args.envyfree is not None or args.couples:
        if args.assignment:
            total = sum(Fraction(1, a + 1) for a in args.alpha)
            total += Fraction(args.omega, args.delta + 2)
            slack = Fraction(1, 2) - total
            doc["condition"] = "sum 1/(alpha+1) + omega*/(delta+2) <= 1/2"
        elif args.couples:
            total = sum(Fraction(1, a + 1) for a in args.alpha)
            total += Fraction(2, args.delta + 2)
            slack = Fraction(1, 2) - total
            doc["condition"] = "sum 1/(alpha+1) + 2/(delta+2) <= 1/2"
        else:
            ks = args.envyfree
            if len(ks) != len(args.alpha):
                raise SchemaError("--envyfree needs one group count per alpha entry")
            total = sum(
                Fraction(2 * (k - 1), a + 1) for k, a in zip(ks, args.alpha)
            )
            total += Fraction(args.omega, args.delta + 1)
            slack = Fraction(1, 2) - total
            doc["condition"] = "sum 2(k-1)/(alpha+1) + omega*/(delta+1) <= 1/2"
        doc["slack"] = rat_str(slack)
        passed = slack >= 0
        if args.assignment and args.agents and args.resources:
            k_total = sum(args.groups or ())
            w = args.omega
            doc["delta_plus"] = min(
                (w - 1) * args.agents + w * args.resources + (w + 1) * k_total,
                args.delta * args.resources,
            )
    else:
        psi = args.psi if args.psi is not None else 1
        budget = DeviationBudget(
            alpha=args.alpha,
            delta=args.delta,
            Delta=None,
            psi=psi,
            omega_star=args.omega,
        )
        slack = check_condition(budget)
        doc["condition"] = "psi/2 + sum 1/(alpha+1) + omega*/(delta+1) <= 1"
        doc["slack"] = rat_str(slack)
        passed = slack >= 0
        if passed:
            try:
                doc["min_Delta"] = min_Delta(budget)
            except BudgetError as exc:
                doc["min_Delta"] = None
                doc["min_Delta_error"] = str(exc)
    doc["passed"] = passed
    _emit(doc, args.out)
    return EXIT_OK if passed else EXIT_BUDGET


# ---------------------------------------------------------------------------
# batch mode
# ---------------------------------------------------------------------------


def _expand_instances(path: str) -> list[str]:
    if os.path.isdir(path):
        return sorted(
            os.path.join(path, f) for f in os.listdir(path) if f.endswith(".json")
        )
    return [path]


def _batch_worker(payload):
    argv, path = payload
    argv = list(argv)
    idx = argv.index("@INSTANCE@")
    argv[idx] = path
    code = main(argv)
    return path, code


def _run_batch(args, paths: list[str]) -> int:
    argv = list(args._argv)
    idx = argv.index(args.instance)
    argv[idx] = "@INSTANCE@"
    jobs = max(1, args.jobs)
    worst = EXIT_OK
    payloads = [(tuple(argv), p) for p in paths]
    if jobs == 1:
        results = map(_batch_worker, payloads)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_batch_worker, payloads))
    for path, code in results:
        print(f"{path}: exit {code}", file=sys.stderr)
        worst = max(worst, code)
    return worst


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nearfair",
        description="Near-feasible fair allocations by exact iterative LP rounding.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run a full pipeline on an instance file")
    solve.add_argument("pipeline", choices=["assignment", "envyfree", "couples"])
    solve.add_argument("--instance", required=True, help="instance file or directory")
    solve.add_argument("--alpha", type=_alpha, default=())
    solve.add_argument("--delta", type=int, required=True)
    solve.add_argument(
        "--objective", default="utilitarian", choices=["utilitarian", "proportional"]
    )
    solve.add_argument("--jobs", type=int, default=1)
    solve.add_argument("--out")
    solve.set_defaults(func=cmd_solve)

    ap = sub.add_parser("apportion", help="multidimensional apportionment")
    ap.add_argument("--instance")
    ap.add_argument("--csv", help="party x district vote table")
    ap.add_argument("--house", type=int)
    ap.add_argument(
        "--method", default="webster", choices=["adams", "webster", "jefferson"]
    )
    ap.add_argument("--alpha", type=_alpha, default=())
    ap.add_argument("--out")
    ap.set_defaults(func=cmd_apportion)

    rnd = sub.add_parser("round", help="round a provided fractional allocation")
    rnd.add_argument("--instance", required=True)
    rnd.add_argument("--allocation", required=True)
    rnd.add_argument("--alpha", type=_alpha, default=())
    rnd.add_argument("--delta", type=int, required=True)
    rnd.add_argument("--Delta", type=int, default=None)
    rnd.add_argument("--psi", type=int, choices=[0, 1], default=None)
    rnd.add_argument("--out")
    rnd.set_defaults(func=cmd_round)

    chk = sub.add_parser("check", help="verify an allocation, optionally against a reference")
    chk.add_argument("--instance", required=True)
    chk.add_argument("--allocation", required=True)
    chk.add_argument("--against", help="reference fractional allocation")
    chk.add_argument("--alpha", type=_alpha, default=())
    chk.add_argument("--delta", type=int, default=1)
    chk.add_argument("--Delta", type=int, default=None)
    chk.add_argument("--psi", type=int, choices=[0, 1], default=None)
    chk.add_argument("--capacities", action="store_true", help="also enforce capacities")
    chk.add_argument("--oracle", action="store_true", help="brute-force deviation frontier")
    chk.add_argument("--out")
    chk.set_defaults(func=cmd_check)

    gen = sub.add_parser("gen", help="generate named instance families")
    gen_sub = gen.add_subparsers(dest="family", required=True)
    lb = gen_sub.add_parser("lowerbound")
    lb.add_argument("--kind", required=True, choices=["capacity", "utility-cycle"])
    lb.add_argument("-n", type=int, required=True)
    lb.add_argument("--out")
    lb.set_defaults(func=cmd_gen)

    bud = sub.add_parser("budget", help="evaluate budget conditions and bounds")
    bud.add_argument("--alpha", type=_alpha, default=())
    bud.add_argument("--delta", type=int, required=True)
    bud.add_argument("--omega", type=int, default=1)
    bud.add_argument("--psi", type=int, choices=[0, 1], default=None)
    bud.add_argument("--assignment", action="store_true")
    bud.add_argument("--couples", action="store_true")
    bud.add_argument("--envyfree", type=_alpha, default=None, metavar="K_LIST")
    bud.add_argument("--agents", type=int)
    bud.add_argument("--resources", type=int)
    bud.add_argument("--groups", type=_alpha, default=None)
    bud.add_argument("--out")
    bud.set_defaults(func=cmd_budget)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    try:
        return args.func(args)
    except (SchemaError, InvalidInstanceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (
        InfeasibleInstanceError,
        RefinementInfeasibleError,
        NoDominatingVertexError,
    ) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except BudgetError as exc:
        print(f"budget: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ScaleExceededError as exc:
        print(f"scale: {exc}", file=sys.stderr)
        return EXIT_SCALE


if __name__ == "__main__":
    sys.exit(main())

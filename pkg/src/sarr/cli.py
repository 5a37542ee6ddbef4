"""Command line front end: ``sarr {calibrate,test,simulate,bayes,table1}``.

Results are printed as JSON (``table1`` defaults to a text table). Exit
status is 0 on success, 2 for usage errors, 3 when the requested privacy and
error targets cannot be met, and 4 for unreadable or unsuitable data.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from typing import Optional, Sequence

from .base_tests import KruskalWallis, WilcoxonSignedRank, ZTest
from .bayes import BetaMuKappa, p_d1_given_h1, posterior_h1
from .calibration import (
    DEFAULT_K_CAP,
    STANDARD_ALPHAS,
    STANDARD_EPSILONS,
    CalibrationTarget,
    calibrate,
    min_k,
    solve_p,
    table_min_k,
)
from .dp_testing import (
    DEFAULT_CALIBRATION_REPS,
    audit_json,
    gated_rr_test,
    laplace_calibrate,
    laplace_test,
    load_delimited,
    sarr_test,
)
from .errors import DataError, DomainError, InfeasibleError, UncalibratedError
from .study import StudySpec, run_study

EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_DATA = 4


def _print_json(obj, out) -> None:
    out.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _cmd_calibrate(args, out) -> None:
    target = CalibrationTarget(args.epsilon, args.alpha, args.alpha0_min)
    if args.k is None:
        _, config = min_k(target, cap=args.cap)
    else:
        config = calibrate(target, args.k)
    record = config.to_dict()
    record["selected_by"] = "min_k" if args.k is None else "fixed"
    record["alpha0_min"] = args.alpha0_min
    _print_json(record, out)


def _make_test(args):
    if args.test == "z":
        return ZTest(args.mu0, args.sigma)
    if args.test == "wilcoxon":
        return WilcoxonSignedRank(args.theta0)
    return KruskalWallis()


def _cmd_test(args, out) -> None:
    if args.test == "kw" and args.group_column is None:
        raise DomainError("the kw test needs --group-column")
    data = load_delimited(args.input, args.value_column,
                          args.group_column if args.test == "kw" else None)
    test = _make_test(args)
    target = CalibrationTarget(args.epsilon, args.alpha, args.alpha0_min)
    if args.mechanism == "sarr":
        decision = sarr_test(data, test, target, k=args.k, rng=args.seed)
    elif args.mechanism == "gated_rr":
        decision = gated_rr_test(data, test, args.epsilon, args.alpha, rng=args.seed)
    else:
        k = args.k if args.k is not None else min_k(target)[0]
        config = laplace_calibrate(args.mechanism, k, args.epsilon, args.alpha,
                                   reps=args.calibration_reps)
        decision = laplace_test(data, test, config, rng=args.seed)
    out.write(audit_json(decision.to_record()) + "\n")


def _cmd_simulate(args, out) -> None:
    spec = StudySpec.from_file(args.spec)
    overrides = {}
    if args.reps is not None:
        overrides["reps"] = args.reps
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    audit = open(args.audit, "w") if args.audit else None
    try:
        table = run_study(spec, workers=args.workers, audit=audit)
    finally:
        if audit is not None:
            audit.close()
    if args.output in (None, "-"):
        table.to_csv(out)
    else:
        with open(args.output, "w", newline="") as fh:
            table.to_csv(fh)


def _cmd_bayes(args, out) -> None:
    if args.p_d1_h1 is not None:
        p1, spec = args.p_d1_h1, "fixed"
    else:
        missing = [f for f in ("k", "epsilon", "mu", "kappa") if getattr(args, f) is None]
        if missing:
            raise DomainError("give --p-d1-h1, or all of --k --epsilon --mu --kappa "
                              f"(missing: {', '.join('--' + m for m in missing)})")
        prior = BetaMuKappa(args.mu, args.kappa)
        p1 = p_d1_given_h1(args.k, solve_p(args.k, args.epsilon), prior)
        spec = prior.describe()
    _print_json(posterior_h1(args.d, args.prior_h1, args.alpha, p1, spec).to_dict(), out)


def _cmd_table1(args, out) -> None:
    table = table_min_k(STANDARD_ALPHAS, STANDARD_EPSILONS, alpha0_min=args.alpha0_min)
    if args.format == "json":
        _print_json({"alphas": list(STANDARD_ALPHAS), "epsilons": list(STANDARD_EPSILONS),
                     "alpha0_min": args.alpha0_min, "k": table.tolist()}, out)
        return
    out.write("alpha \\ eps " + " ".join(f"{e:>5g}" for e in STANDARD_EPSILONS) + "\n")
    for a, row in zip(STANDARD_ALPHAS, table):
        out.write(f"{a:<11g} " + " ".join(f"{k:>5d}" for k in row) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sarr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="solve for (k, p, alpha0)")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--alpha0-min", type=float, default=0.0)
    p.add_argument("--k", type=int)
    p.add_argument("--cap", type=int, default=DEFAULT_K_CAP, help="largest k tried by the search")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("test", help="run one private test on a data file")
    p.add_argument("--input", required=True)
    p.add_argument("--test", choices=("z", "wilcoxon", "kw"), required=True)
    p.add_argument("--mechanism", choices=("sarr", "avg_p", "sum", "gated_rr"), default="sarr")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--alpha0-min", type=float, default=0.0)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, required=True, help="seed recorded in the audit output")
    p.add_argument("--value-column", default="0")
    p.add_argument("--group-column")
    p.add_argument("--mu0", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--theta0", type=float, default=0.0)
    p.add_argument("--calibration-reps", type=int, default=DEFAULT_CALIBRATION_REPS)
    p.set_defaults(func=_cmd_test)

    p = sub.add_parser("simulate", help="run a study described by a YAML file")
    p.add_argument("--spec", required=True)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--output", help="CSV path, '-' for stdout")
    p.add_argument("--audit", help="JSON-lines file for per-decision records")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("bayes", help="posterior probability of H1 given d")
    p.add_argument("--d", type=int, choices=(0, 1), required=True)
    p.add_argument("--prior-h1", type=float, default=0.5)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--p-d1-h1", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--mu", type=float, help="prior mean of the subset power")
    p.add_argument("--kappa", type=float, help="prior effective sample size")
    p.set_defaults(func=_cmd_bayes)

    p = sub.add_parser("table1", help="minimum k over the standard alpha and epsilon grids")
    p.add_argument("--alpha0-min", type=float, default=0.0)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=_cmd_table1)
    return parser


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args, out)
    except InfeasibleError as exc:
        print(f"sarr: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DataError, OSError) as exc:
        print(f"sarr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DomainError, UncalibratedError) as exc:
        print(f"sarr: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())

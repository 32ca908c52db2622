"""Command-line interface: ``ddu-dispatch {solve,eval,oracle,gen}``.

Exit codes: 0 success, 1 solver or runtime failure, 2 iteration limit
reached, 3 invalid input (case file, flags, or instance too large).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .accg import run_accg
from .case import DispatchCase, load_case
from .errors import (DispatchError, MaxIterations, ParseError, SizeError, ValidationError)
from .evaluator import (compare_models, compare_out_of_sample, evaluate_out_of_sample, run_model2,
                        uncertainty_sweep, write_table)
from .generate import gen_case_dict
from .milp import default_mip_gap
from .nccg import run_nccg
from .oracle import run_oracle
from .predispatch import FirstStageDecision

EXIT_OK, EXIT_FAIL, EXIT_MAXITER, EXIT_INPUT = 0, 1, 2, 3

log = logging.getLogger("ddudispatch")


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, default=float))


def _load(args) -> DispatchCase:
    case = load_case(args.case)
    changes = {k: v for k, v in (("epsilon", getattr(args, "epsilon", None)),
                                 ("big_m", getattr(args, "big_m", None)),
                                 ("breakpoints", getattr(args, "breakpoints", None)))
               if v is not None}
    return case.replace(**changes) if changes else case


def _check_gap(case: DispatchCase):
    gap = default_mip_gap()
    scale = float(np.sum(case.alpha * case.p_max) * case.T)
    if case.epsilon < gap * max(scale, 1.0):
        warnings.warn(f"epsilon {case.epsilon:g} is below what MIP gap {gap:g} can resolve on "
                      f"costs of order {scale:.3g}; bounds may never close", RuntimeWarning)


def _solve(case: DispatchCase, algorithm: str, max_iter: int, dump_dir=None):
    if algorithm == "accg":
        return run_accg(case, max_iter=max_iter, dump_dir=dump_dir)
    if algorithm == "nccg":
        return run_nccg(case, max_outer=max_iter, dump_dir=dump_dir)
    return run_model2(case, max_iter=max_iter, dump_dir=dump_dir)


def cmd_solve(args) -> int:
    case = _load(args)
    _check_gap(case)
    max_iter = args.max_iter or (200 if args.algorithm == "nccg" else 100)
    try:
        sol = _solve(case, args.algorithm, max_iter, args.debug_dump)
    except MaxIterations as exc:
        if args.trace and exc.log is not None:
            exc.log.write_csv(args.trace)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MAXITER
    if args.out:
        _write_json(args.out, sol.to_dict())
    if args.trace:
        sol.log.write_csv(args.trace)
    c = sol.costs
    print(f"{sol.algorithm}: converged in {sol.iterations} iterations, objective {sol.objective:.6f}, "
          f"exact total {c['total']:.6f}")
    print("xi* = " + " ".join(f"{v:.4f}" for v in sol.decision.xi.ravel()))
    return EXIT_OK


def _decision_from_json(path) -> FirstStageDecision:
    data = json.loads(Path(path).read_text())
    dec = data.get("decision", data)
    try:
        return FirstStageDecision(*(np.asarray(dec[k], float) for k in ("p", "r_up", "r_down", "xi")))
    except KeyError as exc:
        raise ParseError(f"{path}: missing decision field {exc}") from exc


def cmd_eval(args) -> int:
    case = _load(args)
    if args.tables:
        out = Path(args.tables)
        out.mkdir(parents=True, exist_ok=True)
        m1, m2 = run_accg(case), run_model2(case)
        write_table(compare_models(case, m1, m2), out / "table_costs.csv")
        write_table(compare_out_of_sample(case, m1, m2, args.stddev, args.samples, args.seed),
                    out / "table_out_of_sample.csv")
        if args.sweep:
            bands = [tuple(float(v) for v in b.split(",")) for b in args.sweep.split(";")]
            write_table(uncertainty_sweep(case, bands), out / "table_sweep.csv")
        print(f"tables written to {out}")
        return EXIT_OK
    decision = _decision_from_json(args.solution) if args.solution else run_accg(case).decision
    rep = evaluate_out_of_sample(case, decision, args.stddev, args.samples, args.seed)
    if args.out:
        _write_json(args.out, rep.to_dict())
    if args.samples_csv:
        rep.write_csv(args.samples_csv)
    print(f"infeasible {rep.infeasible}/{rep.samples}, expected cost {rep.expected_cost:.4f}, "
          f"worst curtailment {rep.worst_curtailment:.4f} MW")
    return EXIT_OK


def cmd_oracle(args) -> int:
    case = _load(args)
    checks = run_oracle(case, args.count, args.seed)
    worst = max(c.discrepancy for c in checks)
    signs = all(c.sign_match for c in checks)
    for c in checks:
        print(json.dumps(c.to_dict(), default=float))
    print(f"max discrepancy {worst:.3e}; feasibility signs {'match' if signs else 'DIFFER'}")
    if args.out:
        _write_json(args.out, {"max_discrepancy": worst, "signs_match": signs,
                               "checks": [c.to_dict() for c in checks]})
    return EXIT_OK if worst <= args.tolerance and signs else EXIT_FAIL


def cmd_gen(args) -> int:
    data = gen_case_dict(args.units, args.rgs, args.periods, args.seed, args.band,
                         reserve_scale=args.reserve_scale)
    text = json.dumps(data, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddu-dispatch",
                                description="Robust dispatch with curtailment-dependent uncertainty.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    p.add_argument("--solver", choices=("highs", "scipy"), help="MILP backend (env DDU_SOLVER)")
    p.add_argument("--mip-gap", type=float, help="relative MIP gap (env DDU_MIP_GAP)")
    sub = p.add_subparsers(dest="command", required=True)

    def case_flags(sp):
        sp.add_argument("--case", required=True, help="case JSON file")
        sp.add_argument("--epsilon", type=float, help="convergence tolerance on UB - LB")
        sp.add_argument("--big-m", type=float, help="complementarity big-M")
        sp.add_argument("--breakpoints", type=int, help="breakpoints per quadratic cost")

    s = sub.add_parser("solve", help="solve a case")
    case_flags(s)
    s.add_argument("--algorithm", choices=("accg", "nccg", "model2"), default="accg")
    s.add_argument("--max-iter", type=int, help="iteration guard (default 100, nccg 200)")
    s.add_argument("--out", help="result JSON path")
    s.add_argument("--trace", help="iteration trace CSV path")
    s.add_argument("--debug-dump", metavar="DIR", help="write every model in LP format to DIR")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval", help="out-of-sample evaluation and model comparison tables")
    case_flags(e)
    e.add_argument("--solution", help="result JSON from solve (default: solve first)")
    e.add_argument("--stddev", type=float, default=30.0, help="sampling std. dev. in MW")
    e.add_argument("--samples", type=int, default=500)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="report JSON path")
    e.add_argument("--samples-csv", help="per-sample CSV path")
    e.add_argument("--tables", metavar="DIR", help="write cost, out-of-sample and sweep tables")
    e.add_argument("--sweep", help="band factors for the sweep table, e.g. '0.9,1.1;0.8,1.2'")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("oracle", help="check worst-case MILPs against vertex enumeration")
    case_flags(o)
    o.add_argument("--count", type=int, default=5, help="first-stage decisions to test")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--tolerance", type=float, default=1e-5)
    o.add_argument("--out", help="report JSON path")
    o.set_defaults(func=cmd_oracle)

    g = sub.add_parser("gen", help="generate a random copper-plate case")
    g.add_argument("--units", type=int, default=3)
    g.add_argument("--rgs", type=int, default=2)
    g.add_argument("--periods", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--band", type=float, default=0.3, help="relative half-width of the band")
    g.add_argument("--reserve-scale", type=float, default=1.0)
    g.add_argument("--out", help="output path (default stdout)")
    g.set_defaults(func=cmd_gen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "samples_csv", None) and args.command != "eval":
        parser.error("--samples-csv only applies to eval")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.solver:
        os.environ["DDU_SOLVER"] = args.solver
    if args.mip_gap is not None:
        os.environ["DDU_MIP_GAP"] = str(args.mip_gap)
    try:
        return args.func(args)
    except (ValidationError, ParseError, SizeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MaxIterations as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MAXITER
    except (DispatchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

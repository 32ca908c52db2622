"""Acceptance criteria, one test each; every test reports a pass/fail line."""

import time

import numpy as np
import pytest

from conftest import toy_uncertainty
from ddudispatch import bundled_case
from ddudispatch.accg import DispatchSolution, check_run_invariants, run_accg
from ddudispatch.active_set import identify_active, recover_scenario
from ddudispatch.ddu import enumerate_vertex_scenarios, enumerate_vertices, membership
from ddudispatch.errors import BigMTooSmall, DispatchError
from ddudispatch.generate import gen_case
from ddudispatch.oracle import check_decision, sample_decisions
from ddudispatch.predispatch import PiecewiseQuadratic
from ddudispatch.recourse import solve_sp

TARGET_39_OBJECTIVE = 9685.671
TARGET_39_XI = (195.0, 200.0, 175.0)


def _converged(run, key):
    return isinstance(run[key], DispatchSolution)


def test_criterion_1_worked_example_recovery(report):
    start = time.perf_counter()
    u = toy_uncertainty()
    xi = np.array([[6.0], [6.0]])
    sc = next(s for s in enumerate_vertex_scenarios(u, xi) if np.allclose(s.w.ravel(), (5, 6)))
    a = identify_active(u, xi, sc)
    got_a = recover_scenario(a, u, np.array([[6.0], [5.5]])).w.ravel()
    got_b = recover_scenario(a, u, np.array([[5.5], [4.5]])).w.ravel()
    elapsed = time.perf_counter() - start
    err = max(np.abs(got_a - (5.5, 5.5)).max(), np.abs(got_b - (5.5, 4.5)).max())
    ok = err <= 1e-9 and elapsed < 1.0
    report(1, ok, f"recovered {got_a.tolist()} and {got_b.tolist()}, max error {err:.1e}, "
                  f"{elapsed:.2f} s")
    assert ok


def test_criterion_2_oracle_equivalence(report):
    cases = [gen_case(1 + s % 3, 1 + s % 2, 1, seed=100 + s, check=False) for s in range(20)]
    start = time.perf_counter()
    checks = [check_decision(c, d) for c in cases for d in sample_decisions(c, 2, seed=0)]
    elapsed = time.perf_counter() - start
    sp_gaps = [abs(k.sp_value - k.brute_sp) for k in checks if k.sp_value is not None]
    worst = max(k.discrepancy for k in checks)
    signs = all(k.sign_match for k in checks)
    ok = worst <= 1e-5 and signs and elapsed < 60 and len(sp_gaps) > 0
    report(2, ok, f"{len(checks)} decisions on 20 cases, {len(sp_gaps)} SP comparisons, "
                  f"max discrepancy {worst:.1e}, signs {'match' if signs else 'differ'}, "
                  f"{elapsed:.1f} s")
    assert ok


def test_criterion_3_algorithm_agreement(report, random_runs, wide_runs):
    both = [r for r in random_runs + wide_runs if _converged(r, "accg") and _converged(r, "nccg")]
    rel = [abs(r["accg"].objective - r["nccg"].objective) / max(1.0, abs(r["nccg"].objective))
           for r in both]
    fewer = sum(r["accg"].iterations <= r["nccg"].iterations for r in both)
    total = len(random_runs) + len(wide_runs)
    ok = bool(both) and max(rel) <= 1e-4 and fewer >= 0.9 * len(both)
    report(3, ok, f"{len(both)}/{total} cases converged for both, max relative gap "
                  f"{max(rel):.1e}, AC&CG iterations <= NC&CG on {fewer}/{len(both)}")
    assert ok


def test_criterion_4_run_invariants(report, random_runs, wide_runs):
    logs = [r[k].log for r in random_runs + wide_runs for k in ("accg", "nccg", "model2")
            if _converged(r, k)]
    failures = [f for log in logs for f in check_run_invariants(log).failures]
    ok = bool(logs) and not failures
    report(4, ok, f"{len(logs)} converged runs, {len(failures)} violations"
                  + (f" (first: {failures[0]})" if failures else ""))
    assert ok


def test_criterion_5_degenerate_limits(report, toy_case):
    details, ok = [], True
    for label, case in (("toy", toy_case),
                        ("random", gen_case(3, 2, 1, seed=3, budget_spatial=0.0,
                                            budget_temporal=0.0))):
        case = case.replace(budget_spatial=0.0, budget_temporal=0.0)
        sol = run_accg(case)
        c = sol.costs
        this = (sol.iterations == 1 and abs(c["worst_case_recourse"]) <= 1e-9
                and abs(c["worst_case_curtailment"]) <= 1e-9)
        ok &= this
        details.append(f"{label}: {sol.iterations} iteration(s), recourse {c['worst_case_recourse']:.2g}, "
                       f"curtailment {c['worst_case_curtailment']:.2g}")
    u = toy_uncertainty()
    low = u.W_l
    point = [tuple(v.ravel()) for v in enumerate_vertices(u, low)] == [(2.0, 2.0)]
    others = not any(membership(u, low, np.array(w)[:, None])
                     for w in ((2.0, 1.9), (1.9, 2.0), (3.0, 2.0), (2.0, 2.5)))
    ok &= point and others
    details.append(f"caps at lower band: single point {point}, other points excluded {others}")
    report(5, ok, "; ".join(details))
    assert ok


def test_criterion_6_restriction_dominance(report, random_runs, wide_runs):
    def pairs(runs):
        return [(r["accg"].objective, r["model2"].objective) for r in runs
                if _converged(r, "accg") and _converged(r, "model2")]
    all_pairs = pairs(random_runs) + pairs(wide_runs)
    dominated = all(m2 >= m1 - 1e-6 * max(1.0, abs(m1)) for m1, m2 in all_pairs)
    wide = pairs(wide_runs)
    strict = sum(m2 > m1 + 1e-6 * max(1.0, abs(m1)) for m1, m2 in wide)
    ok = dominated and bool(wide) and strict >= 0.5 * len(wide)
    report(6, ok, f"Model-2 >= Model-1 on {len(all_pairs)} pairs: {dominated}; strict on "
                  f"{strict}/{len(wide)} wide-band cases")
    assert ok


@pytest.mark.slow
def test_criterion_7_39_bus_reconstruction(report):
    case = bundled_case("ieee39_reconstruction")
    try:
        sol = run_accg(case, max_iter=6)
    except DispatchError as exc:
        report(7, False, f"reconstruction did not converge in 6 iterations: {exc}", blocking=False)
        pytest.xfail("39-bus reconstruction is non-blocking")
    xi = sol.decision.xi.ravel()
    obj_err = abs(sol.objective - TARGET_39_OBJECTIVE) / TARGET_39_OBJECTIVE
    xi_err = np.abs(xi - TARGET_39_XI).max()
    ok = obj_err <= 0.005 and xi_err <= 1.0 and sol.iterations <= 6
    report(7, ok, f"objective {sol.objective:.3f} (target {TARGET_39_OBJECTIVE}, off {obj_err:.1%}), "
                  f"xi* {np.round(xi, 2).tolist()} (target {list(TARGET_39_XI)}), "
                  f"{sol.iterations} iterations", blocking=False)
    if not ok:
        pytest.xfail("39-bus reconstruction is non-blocking; network and load data are not public")


def test_criterion_8_numerical_hygiene(report, random_runs, wide_runs):
    converged = [(r["case"], r["accg"]) for r in random_runs + wide_runs if _converged(r, "accg")]
    audit_fail = 0
    for case, sol in converged:
        try:
            solve_sp(case, sol.decision)
        except BigMTooSmall:
            audit_fail += 1
    rng = np.random.default_rng(0)
    worst_ratio = 0.0
    for _ in range(1000):
        lo = rng.uniform(0, 100)
        width = rng.uniform(1, 100)
        coef = rng.uniform(0.01, 5)
        pw = PiecewiseQuadratic.uniform(lo, lo + width, int(rng.integers(2, 30)), coef,
                                        anchor=lo + width)
        x = rng.uniform(lo, lo + width)
        gap = pw.interpolate(x) - pw.exact(x)
        worst_ratio = max(worst_ratio, gap / pw.error_bound())
    ok = audit_fail == 0 and worst_ratio <= 1 + 1e-9 and bool(converged)
    report(8, ok, f"big-M audit clean on {len(converged) - audit_fail}/{len(converged)} converged "
                  f"runs; worst piecewise gap {worst_ratio:.4f} of the bound over 1000 evaluations")
    assert ok

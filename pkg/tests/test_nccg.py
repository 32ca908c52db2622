import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddudispatch.accg import run_accg
from ddudispatch.nccg import inner_min, inner_min_enumerated, run_nccg
from ddudispatch.predispatch import FirstStageDecision

DECISION = FirstStageDecision(np.array([[42.0]]), np.array([[3.0]]), np.array([[3.0]]),
                              np.array([[5.0], [4.5]]))


@settings(max_examples=25, deadline=None)
@given(st.floats(2.0, 6.0), st.floats(2.0, 6.0), st.floats(2.0, 6.0), st.floats(2.0, 6.0))
def test_inner_min_matches_enumeration(toy_case, h1, h2, c1, c2):
    dec = FirstStageDecision(DECISION.p, DECISION.r_up, DECISION.r_down, np.array([[c1], [c2]]))
    w_hat = np.array([[h1], [h2]])
    assert inner_min(toy_case, dec, w_hat) == pytest.approx(
        inner_min_enumerated(toy_case, dec, w_hat), abs=1e-7)


def test_inner_min_reports_infeasibility(toy_case):
    short = FirstStageDecision(DECISION.p, np.array([[0.0]]), DECISION.r_down, DECISION.xi)
    assert inner_min(toy_case, short, np.array([[2.0], [2.0]])) == np.inf
    assert inner_min_enumerated(toy_case, short, np.array([[2.0], [2.0]])) == np.inf


def test_nccg_agrees_with_accg_on_toy(toy_case):
    a = run_accg(toy_case)
    n = run_nccg(toy_case)
    assert n.algorithm == "nccg"
    assert n.objective == pytest.approx(a.objective, rel=1e-6)
    assert a.iterations <= n.iterations
    assert all(r.activeset_kind in ("precap", "") for r in n.log)


def test_zero_budget_single_outer_iteration(toy_case):
    case = toy_case.replace(budget_spatial=0.0, budget_temporal=0.0)
    n, a = run_nccg(case), run_accg(case)
    assert n.iterations == 1
    assert n.objective == pytest.approx(a.objective)

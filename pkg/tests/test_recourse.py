import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from ddudispatch.ddu import UncertaintyModel, enumerate_vertices
from ddudispatch.errors import InfeasibleRecourse
from ddudispatch.generate import gen_case
from ddudispatch.oracle import check_decision, sample_decisions
from ddudispatch.predispatch import FirstStageDecision
from ddudispatch.recourse import (build_recourse_system, feasibility_system, recourse_slack,
                                  solve_fcp, solve_recourse, solve_sp)

DECISION = FirstStageDecision(np.array([[42.0]]), np.array([[1.0]]), np.array([[3.0]]),
                              np.array([[6.0], [6.0]]))


def epigraph_recourse(case, dec, w):
    """Independent single-unit copper-plate re-dispatch LP (secant epigraph form)."""
    pieces = build_recourse_system(case).breakpoints[:, 0, :]
    W = len(w)
    # variables: up, down, c_1..c_W, t_1..t_W
    cost = np.r_[case.d_up[0], case.d_down[0], np.zeros(W), np.ones(W)]
    A, b = [], []
    for j in range(W):
        bp = pieces[j]
        vals = case.gamma_hat[j] * bp ** 2
        for k in range(len(bp) - 1):
            slope = (vals[k + 1] - vals[k]) / (bp[k + 1] - bp[k])
            row = np.zeros(2 + 2 * W)
            row[2 + j], row[2 + W + j] = slope, -1.0
            A.append(row)
            b.append(slope * bp[k] - vals[k])
    a_eq = np.r_[1.0, -1.0, -np.ones(W), np.zeros(W)]
    b_eq = case.total_demand[0] - dec.p.sum() - np.sum(w)
    bounds = ([(0, dec.r_up.item()), (0, dec.r_down.item())]
              + [(0, pieces[j, -1]) for j in range(W)] + [(None, None)] * W)
    res = linprog(cost, A_ub=np.array(A), b_ub=b, A_eq=[a_eq], b_eq=[b_eq], bounds=bounds)
    return res.fun if res.status == 0 else None


@settings(max_examples=30, deadline=None)
@given(st.floats(2.0, 6.0), st.floats(2.0, 6.0))
def test_recourse_matches_independent_lp(toy_case, w1, w2):
    w = np.array([w1, w2])
    expected = epigraph_recourse(toy_case, DECISION, w)
    if expected is None:
        with pytest.raises(InfeasibleRecourse):
            solve_recourse(toy_case, DECISION, w[:, None])
        assert recourse_slack(toy_case, DECISION, w[:, None]) > 0
    else:
        assert solve_recourse(toy_case, DECISION, w[:, None]).cost == pytest.approx(expected, abs=1e-7)
        assert recourse_slack(toy_case, DECISION, w[:, None]) == pytest.approx(0.0, abs=1e-9)


def test_known_recourse_values(toy_case):
    r = solve_recourse(toy_case, DECISION, np.array([[6.0], [6.0]]))
    # 4 MW surplus: curtail 2 MW on each RG (marginal 4 < down re-dispatch 5)
    assert r.cost == pytest.approx(8.0)
    np.testing.assert_allclose(r.recurtail.ravel(), [2.0, 2.0])
    r = solve_recourse(toy_case, DECISION, np.array([[5.0], [6.0]]))
    assert r.exact_cost <= r.cost
    # shortfall of 5 MW against 1 MW of up reserve
    assert recourse_slack(toy_case, DECISION, np.array([[2.0], [2.0]])) == pytest.approx(3.0)


def test_fcp_and_sp_match_vertex_enumeration(toy_case):
    u = UncertaintyModel.from_case(toy_case)
    verts = enumerate_vertices(u, DECISION.xi)
    slacks = [recourse_slack(toy_case, DECISION, v) for v in verts]
    fcp = solve_fcp(toy_case, DECISION)
    assert fcp.value == pytest.approx(max(slacks), abs=1e-6)
    feasible = FirstStageDecision(DECISION.p, np.array([[8.0]]), DECISION.r_down, DECISION.xi)
    assert solve_fcp(toy_case, feasible).value == pytest.approx(0.0, abs=1e-6)
    sp = solve_sp(toy_case, feasible)
    best = max(solve_recourse(toy_case, feasible, v).cost for v in verts)
    assert sp.value == pytest.approx(best, abs=1e-6)
    assert sp.kkt_value == pytest.approx(sp.value, abs=1e-5)


def test_feasibility_system_has_the_same_feasible_set(toy_case):
    full, small = build_recourse_system(toy_case), feasibility_system(toy_case)
    assert small.n_y < full.n_y
    for w in ([2, 2], [2, 3], [4, 4], [6, 6], [3, 2.5]):
        w = np.array(w, float)[:, None]
        a = recourse_slack(toy_case, DECISION, w, full)
        b = recourse_slack(toy_case, DECISION, w, small)
        assert a == pytest.approx(b, abs=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_oracle_on_random_cases(seed):
    case = gen_case(3, 2, 1, seed=seed)
    for dec in sample_decisions(case, 2, seed=seed):
        chk = check_decision(case, dec)
        assert chk.sign_match
        assert chk.discrepancy <= 1e-5


def _decision(case, r_up, r_down, xi=None):
    p = np.array([[case.total_demand[0] - case.W_e.sum()]])
    xi = case.W_u.copy() if xi is None else np.asarray(xi, float)
    return FirstStageDecision(p, np.array([[r_up]]), np.array([[r_down]]), xi)


def test_forecast_needs_no_redispatch():
    from conftest import one_unit_case
    case = one_unit_case()
    r = solve_recourse(case, _decision(case, 10, 10), case.W_e)
    assert r.cost == 0.0 and np.all(r.recurtail == 0)


def test_dip_is_covered_by_up_reserve():
    from conftest import one_unit_case
    case = one_unit_case()
    r = solve_recourse(case, _decision(case, 10, 10), np.array([[45.0]]))
    assert r.p_up.item() == pytest.approx(5.0)
    assert r.cost == pytest.approx(5 * case.d_up[0])


def test_surge_beyond_down_reserve_is_curtailed():
    from conftest import one_unit_case
    case = one_unit_case(band=(30.0, 70.0), breakpoints=5)  # breakpoints every 10 MW
    r = solve_recourse(case, _decision(case, 10, 10), np.array([[70.0]]))
    assert r.p_down.item() == pytest.approx(10.0)
    assert r.recurtail.item() == pytest.approx(10.0)
    assert r.exact_cost == pytest.approx(10 * case.d_down[0] + case.gamma_hat[0] * 100)
    assert r.cost == pytest.approx(r.exact_cost)


def test_unmatched_dip_shows_as_fcp_slack():
    from conftest import one_unit_case
    case = one_unit_case(reserve_up=0.0)
    fcp = solve_fcp(case, _decision(case, 0, 10))
    assert fcp.value == pytest.approx(10.0, abs=1e-6)
    assert fcp.scenario.w.item() == pytest.approx(40.0)


def test_zero_budget_reduces_to_the_capped_forecast():
    from conftest import one_unit_case
    case = one_unit_case(budget=0.0)
    short = _decision(case, 0, 0, xi=[[45.0]])
    assert solve_fcp(case, short).value == pytest.approx(5.0, abs=1e-6)  # cap cuts 5 MW
    dec = _decision(case, 5, 0, xi=[[45.0]])
    assert solve_fcp(case, dec).value == pytest.approx(0.0, abs=1e-9)
    sp = solve_sp(case, dec)
    assert sp.value == pytest.approx(solve_recourse(case, dec, np.array([[45.0]])).cost)


def test_worst_case_scenario_is_a_member(toy_case):
    from ddudispatch.ddu import membership
    dec = FirstStageDecision(DECISION.p, np.array([[8.0]]), DECISION.r_down, np.array([[5.5], [4.5]]))
    sp = solve_sp(toy_case, dec)
    assert membership(UncertaintyModel.from_case(toy_case), dec.xi, sp.scenario.w)

import numpy as np
import pytest

from ddudispatch.accg import run_accg
from ddudispatch.evaluator import (compare_models, draw_outputs, evaluate_out_of_sample,
                                   run_model2, uncertainty_sweep, with_band, write_table)
from ddudispatch.predispatch import FirstStageDecision
from ddudispatch.recourse import solve_recourse


@pytest.fixture(scope="module")
def toy_models(toy_case):
    return run_accg(toy_case), run_model2(toy_case)


def test_draws_are_seeded_and_capped(toy_case):
    xi = np.array([[5.0], [4.0]])
    a = draw_outputs(toy_case, xi, 3.0, 200, seed=3)
    b = draw_outputs(toy_case, xi, 3.0, 200, seed=3)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (200, 2, 1)
    assert np.all(a >= 0) and np.all(a <= xi)
    assert not np.array_equal(a, draw_outputs(toy_case, xi, 3.0, 200, seed=4))


def test_evaluation_is_deterministic(toy_case, toy_models):
    one = evaluate_out_of_sample(toy_case, toy_models[0], 1.0, 50, seed=1)
    two = evaluate_out_of_sample(toy_case, toy_models[0], 1.0, 50, seed=1)
    assert one.to_dict() == two.to_dict()


def test_zero_stddev_is_the_capped_forecast(toy_case, toy_models):
    sol = toy_models[0]
    rep = evaluate_out_of_sample(toy_case, sol, 0.0, 5, seed=0)
    w = np.minimum(toy_case.W_e, sol.decision.xi)
    cost = solve_recourse(toy_case, sol.decision, w).exact_cost
    assert rep.infeasible == 0
    assert rep.expected_cost == pytest.approx(cost)
    assert rep.expected_cost_all == pytest.approx(cost)


def test_infeasible_samples_are_counted(toy_case, tmp_path):
    tight = FirstStageDecision(np.array([[42.0]]), np.array([[0.0]]), np.array([[0.0]]),
                               np.array([[6.0], [6.0]]))
    rep = evaluate_out_of_sample(toy_case, tight, 1.0, 40, seed=0)
    assert 0 < rep.infeasible < 40
    feas = [r for r in rep.records if r.feasible]
    assert rep.expected_cost_all == pytest.approx(sum(r.cost for r in feas) / 40)
    assert all(r.slack > 0 for r in rep.records if not r.feasible)
    path = tmp_path / "samples.csv"
    rep.write_csv(path)
    assert len(path.read_text().splitlines()) == 41


def test_model_comparison_rows(toy_case, toy_models, tmp_path):
    rows = compare_models(toy_case, *toy_models)
    assert [r["model"] for r in rows] == ["Model-1", "Model-2"]
    assert rows[1]["objective"] >= rows[0]["objective"] - 1e-6
    write_table(rows, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().startswith("model,")


def test_with_band_keeps_forecast_midpoint(toy_case):
    c = with_band(toy_case, 0.8, 1.2)
    np.testing.assert_allclose(c.W_l.ravel(), [3.2, 3.2])
    np.testing.assert_allclose(c.W_u.ravel(), [4.8, 4.8])
    np.testing.assert_allclose(c.W_e, toy_case.W_e)
    with pytest.raises(ValueError):
        with_band(toy_case, 1.1, 0.9)


def test_sweep_rows(toy_case):
    rows = uncertainty_sweep(toy_case, [(0.9, 1.1)])
    assert rows[0]["band"] == "[0.90,1.10]W^e"
    assert rows[0]["accg_objective"] == pytest.approx(rows[0]["nccg_objective"], rel=1e-6)


def test_zero_budget_models_coincide(toy_case):
    case = toy_case.replace(budget_spatial=0.0, budget_temporal=0.0)
    assert run_model2(case).objective == pytest.approx(run_accg(case).objective)


def test_paired_worst_curtailment(wide_runs):
    from ddudispatch.accg import DispatchSolution
    checked = 0
    for run in wide_runs[:3]:
        m1, m2 = run["accg"], run["model2"]
        if not (isinstance(m1, DispatchSolution) and isinstance(m2, DispatchSolution)):
            continue
        r1 = evaluate_out_of_sample(run["case"], m1, 8.0, 100, seed=0)
        r2 = evaluate_out_of_sample(run["case"], m2, 8.0, 100, seed=0)
        assert r1.worst_curtailment <= r2.worst_curtailment + 1e-6
        checked += 1
    assert checked

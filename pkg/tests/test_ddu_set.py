import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.spatial import ConvexHull

from conftest import budget_usage, toy_uncertainty
from ddudispatch.ddu import (UncertaintyModel, build_ddu_constraints, enumerate_vertex_scenarios,
                             enumerate_vertices, membership)
from ddudispatch.milp import Model, solve

OCTAGON = {(6, 5), (5, 6), (6, 3), (5, 2), (2, 5), (3, 6), (2, 3), (3, 2)}


def _col(*v):
    return np.array(v, float)[:, None]


def test_uncapped_vertices_are_the_octagon():
    pts = np.array([v.ravel() for v in enumerate_vertices(toy_uncertainty(), _col(6, 6))])
    assert {tuple(p) for p in np.round(pts).astype(int)} == OCTAGON
    hull = ConvexHull(pts)
    assert len(hull.vertices) == len(pts)


def test_capped_vertices_match_scipy_hull():
    xi = _col(5.5, 4.5)
    u = toy_uncertainty()
    cands = np.array([s.w.ravel() for s in enumerate_vertex_scenarios(u, xi)])
    hull = {tuple(np.round(cands[k], 9)) for k in ConvexHull(cands).vertices}
    ours = {tuple(np.round(v.ravel(), 9)) for v in enumerate_vertices(u, xi)}
    assert ours == hull


@pytest.mark.parametrize("xi", [(6, 6), (5.5, 4.5), (3, 5), (2, 2)])
def test_enumerated_scenarios_are_members(xi):
    u = toy_uncertainty()
    for sc in enumerate_vertex_scenarios(u, _col(*xi)):
        np.testing.assert_allclose(sc.w, np.minimum(sc.w_hat, _col(*xi)), atol=1e-9)
        assert np.all(sc.dev_up * sc.dev_down <= 1e-12)
        assert membership(u, _col(*xi), sc.w)


def test_worked_example_points():
    u = toy_uncertainty()
    assert membership(u, _col(6, 6), _col(5, 6))
    assert not membership(u, _col(6, 6), _col(6, 6))
    assert membership(u, _col(5.5, 4.5), _col(5.5, 4.5))
    # outside the cap
    assert not membership(u, _col(5.5, 4.5), _col(6.5, 4.5))


def test_cap_at_lower_band_collapses_the_set():
    u = toy_uncertainty()
    low = u.W_l
    assert membership(u, low, low)
    assert [tuple(v.ravel()) for v in enumerate_vertices(u, low)] == [(2.0, 2.0)]
    for other in ((2.0, 1.9), (1.5, 2.0), (2.1, 2.0)):
        assert not membership(u, low, _col(*other))


def test_zero_budget_is_the_capped_forecast():
    u = toy_uncertainty(budget=0.0)
    verts = {tuple(v.ravel()) for v in enumerate_vertices(u, _col(6, 3))}
    assert verts == {(4.0, 3.0)}


def test_rejects_degenerate_models():
    with pytest.raises(ValueError):
        UncertaintyModel(np.full((1, 1), 4.0), np.full((1, 1), 4.0), np.full((1, 1), 4.0), 1.0, 1.0)
    with pytest.raises(ValueError):
        build_ddu_constraints(Model(), toy_uncertainty(), _col(7, 6))


@settings(max_examples=60, deadline=None)
@given(st.tuples(*[st.integers(0, 80)] * 4))
def test_membership_matches_closed_form(grid):
    # quarter-unit grid keeps points off numerically ambiguous boundaries
    xi = 2.0 + np.array(grid[:2]) / 20.0
    w = 1.0 + np.array(grid[2:]) * (6.0 / 80.0)
    need = budget_usage(w, xi)
    expected = need is not None and need <= 1.5 + 1e-12
    assume(need is None or abs(need - 1.5) > 1e-6)
    assert membership(toy_uncertainty(), xi[:, None], w[:, None]) == expected


@settings(max_examples=20, deadline=None)
@given(st.floats(2.0, 6.0), st.floats(2.0, 6.0), st.floats(0.0, 2.0))
def test_max_total_output_matches_closed_form(c1, c2, budget):
    """Max of w1 + w2: spend budget upward on the RGs in order of headroom."""
    u = toy_uncertainty(budget)
    model = Model()
    v = build_ddu_constraints(model, u, _col(c1, c2))
    model.set_objective((v.w.ravel(), [1.0, 1.0]), sense="max")
    res = solve(model)
    left, total = budget, 0.0
    for cap in sorted((c1, c2), reverse=True):
        gain = min(max(cap - 4.0, 0.0), 2.0 * min(left, 1.0))
        left -= gain / 2.0
        total += min(4.0, cap) + gain
    assert res.objective == pytest.approx(total, abs=1e-6)


def single_rg(budget=1.0):
    return UncertaintyModel(np.full((1, 1), 4.0), np.full((1, 1), 2.0), np.full((1, 1), 6.0),
                            budget, budget)


@pytest.mark.parametrize("xi,interval", [(6.0, (2.0, 6.0)), (4.0, (2.0, 4.0)), (2.0, (2.0, 2.0))])
def test_single_rg_projection(xi, interval):
    u = single_rg()
    out = []
    for sense in ("min", "max"):
        model = Model()
        v = build_ddu_constraints(model, u, xi)
        model.set_objective({int(v.w[0, 0]): 1.0}, sense=sense)
        out.append(solve(model).objective)
    assert tuple(out) == pytest.approx(interval)


def test_single_rg_vertices_at_upper_cap():
    assert sorted(v.item() for v in enumerate_vertices(single_rg(), 6.0)) == [2.0, 6.0]


@pytest.mark.parametrize("xi", [(4, 4), (5, 6), (6, 4.5)])
def test_forecast_is_always_a_member(xi):
    assert membership(toy_uncertainty(), _col(*xi), _col(4, 4))

import copy
import json

import numpy as np
import pytest

from ddudispatch import bundled_case
from ddudispatch.case import case_from_dict, case_to_dict, compute_ptdf, load_case, save_case
from ddudispatch.errors import ParseError, ValidationError


def _toy_dict(toy_case):
    return case_to_dict(toy_case)


def test_bundled_cases_load():
    toy = bundled_case("toy_two_rg")
    assert toy.n_rgs == 2 and toy.T == 1
    np.testing.assert_allclose(toy.W_e, [[4.0], [4.0]])
    big = bundled_case("ieee39_reconstruction")
    assert len(big.units) == 10 and big.n_rgs == 3
    np.testing.assert_allclose(big.W_u.ravel(), [225.0] * 3)


def test_round_trip(toy_case, tmp_path):
    path = tmp_path / "case.json"
    save_case(toy_case, path)
    again = load_case(path)
    assert case_to_dict(again) == case_to_dict(toy_case)


def test_forecast_must_be_band_midpoint(toy_case):
    d = _toy_dict(toy_case)
    d["renewables"][0]["forecast"] = [5.0]
    with pytest.raises(ValidationError, match="midpoint"):
        case_from_dict(d)


def test_zero_width_band_rejected(toy_case):
    d = _toy_dict(toy_case)
    d["renewables"][0].update(forecast=[4.0], band_low=[4.0], band_high=[4.0])
    with pytest.raises(ValidationError):
        case_from_dict(d)


@pytest.mark.parametrize("field,value", [("spatial", 3.0), ("temporal", -1.0)])
def test_budget_range(toy_case, field, value):
    d = _toy_dict(toy_case)
    d["budgets"][field] = value
    with pytest.raises(ValidationError):
        case_from_dict(d)


def test_schema_errors_are_parse_errors(toy_case):
    d = _toy_dict(toy_case)
    del d["thermal_units"]
    with pytest.raises((ParseError, ValidationError)):
        case_from_dict(d)


def test_bad_json_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_case(path)


def test_replace_keeps_validation(toy_case):
    changed = toy_case.replace(epsilon=1e-3)
    assert changed.epsilon == 1e-3
    with pytest.raises(ValidationError):
        toy_case.replace(epsilon=0.0)


def test_ptdf_two_bus():
    from ddudispatch.case import Line
    lines = [Line("l1", "a", "b", 0.1, 100.0)]
    ptdf = compute_ptdf(["a", "b"], lines, "a")
    # injection at b withdrawn at the slack flows b -> a
    np.testing.assert_allclose(ptdf, [[0.0, -1.0]], atol=1e-12)


def test_ptdf_parallel_paths_split_by_reactance():
    from ddudispatch.case import Line
    lines = [Line("l1", "a", "b", 0.1, 100.0), Line("l2", "a", "b", 0.3, 100.0)]
    ptdf = compute_ptdf(["a", "b"], lines, "a")
    np.testing.assert_allclose(ptdf[:, 1], [-0.75, -0.25], atol=1e-12)


MINIMAL = {"horizon": 1,
           "thermal_units": [{"id": "g", "bus": "1", "p_min": 70, "p_max": 155,
                              "reserve_max_up": 10, "reserve_max_down": 10, "ramp_up": 50,
                              "ramp_down": 50, "cost_energy": 16.19, "cost_reserve_up": 1,
                              "cost_reserve_down": 1, "cost_redispatch_up": 2,
                              "cost_redispatch_down": 2}],
           "renewables": [{"id": "w", "bus": "1", "forecast": [4], "band_low": [2],
                           "band_high": [6], "cost_precurtail": 1, "cost_recurtail": 1}],
           "loads": [{"id": "l", "bus": "1", "demand": [100]}],
           "network": None, "commitment": [[1]], "budgets": {"spatial": 1, "temporal": 1}}


def test_minimal_case():
    case = case_from_dict(copy.deepcopy(MINIMAL))
    assert (case.T, case.n_units, case.n_rgs) == (1, 1, 1)


def test_midpoint_error_names_rg_and_period():
    d = copy.deepcopy(MINIMAL)
    d["renewables"][0]["forecast"] = [5]
    with pytest.raises(ValidationError) as info:
        case_from_dict(d)
    assert "renewable w period 0" in str(info.value)


def test_ptdf_single_line_reversed_orientation():
    from ddudispatch.case import Line
    ptdf = compute_ptdf(["a", "b"], [Line("l1", "b", "a", 0.1, 100.0)], "a")
    np.testing.assert_allclose(ptdf, [[0.0, 1.0]], atol=1e-12)


def test_ptdf_three_bus_ring():
    from ddudispatch.case import Line
    lines = [Line("12", "1", "2", 1.0, 9.0), Line("23", "2", "3", 1.0, 9.0),
             Line("13", "1", "3", 1.0, 9.0)]
    ptdf = compute_ptdf(["1", "2", "3"], lines, "1")
    # bus 2 injection returns to bus 1 directly (2/3) and around through bus 3 (1/3)
    np.testing.assert_allclose(ptdf[:, 1], [-2 / 3, 1 / 3, -1 / 3], atol=1e-12)
    np.testing.assert_allclose(ptdf[:, 0], 0.0, atol=1e-15)

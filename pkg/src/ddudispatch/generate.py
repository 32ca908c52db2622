"""Seeded random dispatch cases for testing and benchmarking."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .case import DispatchCase, case_from_dict
from .errors import DispatchError, GenerationFailed

MAX_RETRIES = 20


def _draw(rng: np.random.Generator, units: int, rgs: int, periods: int, band: float,
          budget_spatial: Optional[float], budget_temporal: Optional[float],
          reserve_scale: float) -> dict:
    thermal = []
    for i in range(units):
        p_max = float(rng.uniform(60, 150))
        ramp = float(rng.uniform(30, 80))
        energy = float(rng.uniform(10, 40))
        thermal.append({
            "id": f"g{i + 1}", "bus": "1",
            "p_min": float(rng.uniform(0, 0.2) * p_max), "p_max": p_max,
            "reserve_max_up": float(ramp * reserve_scale * rng.uniform(0.3, 0.8)),
            "reserve_max_down": float(ramp * reserve_scale * rng.uniform(0.3, 0.8)),
            "ramp_up": ramp, "ramp_down": ramp,
            "cost_energy": energy,
            "cost_reserve_up": float(rng.uniform(1, 6)),
            "cost_reserve_down": float(rng.uniform(1, 6)),
            "cost_redispatch_up": float(energy + rng.uniform(5, 20)),
            "cost_redispatch_down": float(rng.uniform(1, 10)),
        })
    renewables = []
    for j in range(rgs):
        fc = np.round(rng.uniform(10, 40, periods), 3)
        half = fc * band * rng.uniform(0.6, 1.0, periods)
        lo, hi = fc - half, fc + half
        renewables.append({
            "id": f"w{j + 1}", "bus": "1",
            "forecast": [float(v) for v in (lo + hi) / 2],
            "band_low": [float(v) for v in lo],
            "band_high": [float(v) for v in hi],
            "cost_precurtail": float(rng.uniform(0.1, 1.5)),
            "cost_recurtail": float(rng.uniform(0.5, 3.0)),
        })
    # size demand so the forecast dispatch leaves room for reserves
    p_min = sum(g["p_min"] for g in thermal)
    p_max = sum(g["p_max"] for g in thermal)
    wind = np.sum([r["forecast"] for r in renewables], axis=0)
    thermal_share = rng.uniform(p_min + 0.3 * (p_max - p_min), p_min + 0.6 * (p_max - p_min), periods)
    demand = [round(float(v), 4) for v in thermal_share + wind]
    return {
        "name": "random",
        "horizon": periods,
        "thermal_units": thermal,
        "renewables": renewables,
        "loads": [{"id": "d1", "bus": "1", "demand": demand}],
        "network": None,
        "commitment": [[1] * periods for _ in range(units)],
        "budgets": {
            "spatial": float(rng.uniform(0.5, rgs) if budget_spatial is None else budget_spatial),
            "temporal": float(rng.uniform(0.5, periods) if budget_temporal is None else budget_temporal),
        },
    }


def gen_case_dict(units: int = 3, rgs: int = 2, periods: int = 1, seed: int = 0,
                  band: float = 0.3, budget_spatial: Optional[float] = None,
                  budget_temporal: Optional[float] = None, reserve_scale: float = 1.0,
                  check: bool = True) -> dict:
    """Random copper-plate case dictionary satisfying the robust feasibility assumption.

    ``band`` is the relative half-width of the forecast band and
    ``reserve_scale`` shrinks (< 1) or widens reserve capacities.  With ``check``
    the real-time-only model (caps at the upper band) is solved once and the
    draw is repeated until it succeeds.
    """
    if min(units, rgs, periods) < 1:
        raise ValueError("units, rgs and periods must be positive")
    if not 0 < band < 1:
        raise ValueError("band must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    last: Optional[Exception] = None
    for _ in range(MAX_RETRIES):
        data = _draw(rng, units, rgs, periods, band, budget_spatial, budget_temporal,
                     reserve_scale)
        if not check:
            return data
        try:
            case = case_from_dict(data)
            from .accg import run_accg
            run_accg(case, fix_xi=case.W_u, max_iter=50)
            return data
        except DispatchError as exc:
            last = exc
    raise GenerationFailed(f"no robust feasible case after {MAX_RETRIES} draws: {last}")


def gen_case(units: int = 3, rgs: int = 2, periods: int = 1, seed: int = 0,
             band: float = 0.3, **kwargs) -> DispatchCase:
    return case_from_dict(gen_case_dict(units, rgs, periods, seed, band, **kwargs))

"""Brute-force cross-checks of the worst-case MILPs against vertex enumeration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .accg import build_master, seed_active_set
from .case import DispatchCase
from .ddu import UncertaintyModel, enumerate_vertex_scenarios
from .errors import InfeasibleModelError, InfeasibleRecourse
from .predispatch import FirstStageDecision
from .recourse import (build_recourse_system, feasibility_system, recourse_slack, solve_fcp,
                       solve_recourse, solve_sp)

SLACK_TOL = 1e-6


@dataclass
class OracleCheck:
    xi: list
    vertices: int
    fcp_value: float
    brute_slack: float
    sp_value: Optional[float]     # None when the decision is not robust feasible
    brute_sp: Optional[float]

    @property
    def sign_match(self) -> bool:
        return (self.fcp_value > SLACK_TOL) == (self.brute_slack > SLACK_TOL)

    @property
    def discrepancy(self) -> float:
        gaps = [abs(self.fcp_value - self.brute_slack)]
        if self.sp_value is not None:
            gaps.append(abs(self.sp_value - self.brute_sp))
        return max(gaps)

    def to_dict(self) -> dict:
        return {"xi": self.xi, "vertices": self.vertices, "fcp": self.fcp_value,
                "brute_slack": self.brute_slack, "sp": self.sp_value, "brute_sp": self.brute_sp,
                "sign_match": self.sign_match, "discrepancy": self.discrepancy}


def check_decision(case: DispatchCase, decision: FirstStageDecision) -> OracleCheck:
    """Compare both worst-case MILPs with the best vertex of the uncertainty set."""
    u = UncertaintyModel.from_case(case)
    system, fsys = build_recourse_system(case), feasibility_system(case)
    scenarios = enumerate_vertex_scenarios(u, decision.xi)
    slacks, costs = [], []
    for sc in scenarios:
        slacks.append(recourse_slack(case, decision, sc.w, fsys))
        if slacks[-1] <= SLACK_TOL:
            try:
                costs.append(solve_recourse(case, decision, sc.w, system).cost)
            except InfeasibleRecourse:
                pass
    fcp = solve_fcp(case, decision, fsys)
    sp_value = brute_sp = None
    if fcp.value <= SLACK_TOL and max(slacks) <= SLACK_TOL:
        sp_value = solve_sp(case, decision, system).value
        brute_sp = max(costs)
    return OracleCheck(decision.xi.ravel().tolist(), len(scenarios), fcp.value, max(slacks),
                       sp_value, brute_sp)


def sample_decisions(case: DispatchCase, count: int, seed: int = 0) -> list[FirstStageDecision]:
    """Forecast-optimal thermal schedule with reserves and caps drawn at random.

    The first decision keeps the caps at the upper band.
    """
    master = build_master(case, [seed_active_set(UncertaintyModel.from_case(case))])
    res = master.solve()
    if not res.optimal:
        raise InfeasibleModelError("forecast dispatch is infeasible")
    base = master.first_stage.vars.decision(res)
    rng = np.random.default_rng(seed)
    u = case.commitment.astype(float)
    out = [FirstStageDecision(base.p, base.r_up, base.r_down, case.W_u.copy())]
    for _ in range(count - 1):
        head_up = np.minimum(case.reserve_max_up[:, None] * u, case.p_max[:, None] * u - base.p)
        head_dn = np.minimum(case.reserve_max_down[:, None] * u, base.p - case.p_min[:, None] * u)
        r_up = rng.uniform(0, 1, head_up.shape) * np.maximum(head_up, 0)
        r_dn = rng.uniform(0, 1, head_dn.shape) * np.maximum(head_dn, 0)
        xi = rng.uniform(case.W_l, case.W_u)
        out.append(FirstStageDecision(base.p, r_up, r_dn, xi))
    return out


def run_oracle(case: DispatchCase, count: int = 5, seed: int = 0) -> list[OracleCheck]:
    return [check_decision(case, d) for d in sample_decisions(case, count, seed)]

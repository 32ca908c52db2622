"""Adaptive column-and-constraint generation for the dispatch problem.

Each master scenario is an affine map ``w_tilde = A xi + b`` harvested from
a worst case, followed by the clamp ``w = min(max(w_tilde, W^l), xi)``, so
the scenario moves with whatever cap the master picks.  A harvested map is
used only if its clamped point stays inside the uncertainty set for every
cap the master can choose; otherwise a budget-first basis is tried, and as a
last resort the worst case enters in pre-curtailment form
``w = min(w_hat, xi)``, which is always a member.
"""

from __future__ import annotations

import csv
import logging
import time
import warnings
from pathlib import Path
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .active_set import (BUDGET_PRIORITY, DEFAULT_PRIORITY, ActiveSet, identify_active,
                         map_bounds, map_validity_excess, precap_active_set, seed_active_set)
from .case import DispatchCase
from .ddu import Scenario, UncertaintyModel, membership
from .errors import (DegeneracyUnresolved, InfeasibleModelError, InvariantViolation,
                     MaxIterations, SingularBasis)
from .milp import INF, Model, SolveResult, Status, solve
from .predispatch import (FirstStageBlock, FirstStageDecision, build_first_stage,
                          curtailment_cost_piecewise, first_stage_costs)
from .recourse import (RecourseSystem, SpResult, add_recourse_block, build_recourse_system,
                       feasibility_system, solve_fcp, solve_sp)

log = logging.getLogger(__name__)

UB_INIT = 1e12
DEFAULT_MAX_ITER = 100
FEASIBILITY_TOL = 1e-5
TRACE_COLUMNS = ("iteration", "LB", "UB", "Sf", "scenario_hash", "activeset_id", "seconds")


# -- iteration log ------------------------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    lb: float
    ub: float
    xi: list
    x_summary: dict
    sf: float
    scenario_hash: str
    activeset_id: str = ""
    activeset_kind: str = ""
    repeated: bool = False
    seconds: float = 0.0

    def row(self) -> dict:
        return {"iteration": self.iteration, "LB": self.lb, "UB": self.ub, "Sf": self.sf,
                "scenario_hash": self.scenario_hash, "activeset_id": self.activeset_id,
                "seconds": round(self.seconds, 6)}


@dataclass
class IterationLog:
    algorithm: str = "accg"
    epsilon: float = 1e-4
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, rec: IterationRecord):
        self.records.append(rec)

    @property
    def lbs(self) -> list:
        return [r.lb for r in self.records]

    @property
    def ubs(self) -> list:
        return [r.ub for r in self.records]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
            writer.writeheader()
            for r in self.records:
                writer.writerow(r.row())

    def to_list(self) -> list:
        return [dict(r.row(), xi=r.xi, kind=r.activeset_kind, repeated=r.repeated)
                for r in self.records]


@dataclass
class InvariantReport:
    passed: bool
    failures: list

    def __bool__(self):
        return self.passed


def _close(a, b):
    return 1e-6 * (1 + abs(a) + abs(b))


def check_run_invariants(log_: IterationLog, epsilon: Optional[float] = None) -> InvariantReport:
    """Check bound monotonicity, ``LB <= UB + eps`` and the no-repeat rule on a run log."""
    eps = log_.epsilon if epsilon is None else epsilon
    fails = []
    recs = log_.records
    for a, b in zip(recs, recs[1:]):
        if b.lb < a.lb - _close(a.lb, b.lb):
            fails.append(f"(a) LB decreased at iteration {b.iteration}: {a.lb:.10g} -> {b.lb:.10g}")
        if b.ub > a.ub + _close(a.ub, b.ub):
            fails.append(f"(a) UB increased at iteration {b.iteration}: {a.ub:.10g} -> {b.ub:.10g}")
    final_ub = recs[-1].ub if recs else INF
    for r in recs:
        if r.lb > r.ub + eps + _close(r.lb, r.ub):
            fails.append(f"(a) LB above UB at iteration {r.iteration}")
        if r.lb > final_ub + eps + _close(r.lb, final_ub):
            fails.append(f"(a) LB at iteration {r.iteration} exceeds the final UB")
    seen: dict = {}
    for k, r in enumerate(recs):
        if not r.activeset_id:
            continue
        if r.activeset_id in seen:
            if k != len(recs) - 1:
                fails.append(f"(b) active set {r.activeset_id} of iteration {r.iteration} "
                             f"repeats iteration {seen[r.activeset_id]}")
        else:
            seen[r.activeset_id] = r.iteration
    for k, r in enumerate(recs):
        if r.repeated and k != len(recs) - 1:
            fails.append(f"(c) repeat at iteration {r.iteration} did not terminate the run")
    return InvariantReport(not fails, fails)


# -- master problem -------------------------------------------------------------

def add_clamp(model: Model, w_tilde: int, xi: int, w_low: float, wt_bounds, xi_bounds,
              name: str = "w"):
    """``w = min(max(w_tilde, w_low), xi)`` with two big-M binary gadgets.

    Returns ``(w, z_low, z_cap)``; a binary is ``None`` when the bounds
    already decide its branch.  ``z_cap = 1`` selects ``w = xi``.
    """
    wt_lo, wt_hi = wt_bounds
    xi_lo, xi_hi = xi_bounds
    z_low = z_cap = None
    if wt_lo >= w_low:
        v = w_tilde
    elif wt_hi <= w_low:
        v = model.add_var(w_low, w_low, name=f"{name}_v")
    else:
        v = model.add_var(w_low, wt_hi, name=f"{name}_v")
        z_low = model.add_var(binary=True, name=f"{name}_zl")
        model.add_ge({v: 1, w_tilde: -1}, 0.0)
        model.add_le({v: 1, w_tilde: -1, z_low: -(w_low - wt_lo)}, 0.0)
        model.add_le({v: 1, z_low: wt_hi - w_low}, wt_hi)
    v_lo, v_hi = max(wt_lo, w_low), max(wt_hi, w_low)
    if v_hi <= xi_lo:
        return v, z_low, z_cap
    if v_lo >= xi_hi:
        return xi, z_low, z_cap
    w = model.add_var(min(v_lo, xi_lo), min(v_hi, xi_hi), name=name)
    z_cap = model.add_var(binary=True, name=f"{name}_zw")
    model.add_le({w: 1, v: -1}, 0.0)
    model.add_le({w: 1, xi: -1}, 0.0)
    model.add_ge({w: 1, v: -1, z_cap: v_hi - xi_lo}, 0.0)
    model.add_ge({w: 1, xi: -1, z_cap: -(xi_hi - v_lo)}, -(xi_hi - v_lo))
    return w, z_low, z_cap


@dataclass
class ScenarioBlock:
    active: ActiveSet
    w_tilde: np.ndarray
    w: np.ndarray
    y: np.ndarray


@dataclass
class MasterModel:
    model: Model
    first_stage: FirstStageBlock
    eta: int
    blocks: list
    xi_bounds: tuple

    def solve(self) -> SolveResult:
        return solve(self.model)

    def scenario_outputs(self, res: SolveResult) -> list:
        return [res.value(b.w) for b in self.blocks]


def xi_domain(case: DispatchCase, fix_xi=None):
    if fix_xi is None:
        return case.W_l.copy(), case.W_u.copy()
    xi = np.broadcast_to(np.asarray(fix_xi, float), case.W_e.shape).copy()
    return xi, xi.copy()


def build_master(case: DispatchCase, active_sets, fix_xi=None,
                 system: Optional[RecourseSystem] = None) -> MasterModel:
    """Master MILP: first stage, epigraph ``eta`` and one recourse copy per scenario map."""
    system = system or build_recourse_system(case)
    model = Model("master")
    fs = build_first_stage(case, model, fix_xi=fix_xi)
    xi_lo, xi_hi = xi_domain(case, fix_xi)
    eta = model.add_var(0.0, INF, name="eta")
    xi_vars = fs.vars.xi.ravel()
    lo, hi = xi_lo.ravel(), xi_hi.ravel()
    Wl = case.W_l.ravel()
    blocks = []
    for n, a in enumerate(active_sets):
        wt_lo, wt_hi = map_bounds(a, lo, hi)
        wt = model.add_vars(len(lo), lb=wt_lo, ub=wt_hi, name=f"wt{n}")
        ws = []
        for e in range(len(lo)):
            nz = np.flatnonzero(a.A[e])
            model.add_eq([(int(wt[e]), 1.0)] + [(int(xi_vars[k]), -a.A[e, k]) for k in nz],
                         a.b[e], name=f"map{n}_{e}")
            w, _, _ = add_clamp(model, int(wt[e]), int(xi_vars[e]), Wl[e], (wt_lo[e], wt_hi[e]),
                                (lo[e], hi[e]), name=f"w{n}_{e}")
            ws.append(w)
        ws = np.array(ws, dtype=int)
        y = add_recourse_block(model, system, fs.vars.x, ws, True, True, name=f"y{n}")
        model.add_ge([(eta, 1.0)] + [(int(y[k]), -system.d[k]) for k in np.flatnonzero(system.d)],
                     0.0, name=f"epigraph{n}")
        blocks.append(ScenarioBlock(a, wt, ws, y))
    model.set_objective({**fs.objective, eta: 1.0})
    return MasterModel(model, fs, eta, blocks, (xi_lo, xi_hi))


# -- scenario harvesting ---------------------------------------------------------

def harvest_active_set(u: UncertaintyModel, xi, scenario: Scenario, xi_lo, xi_hi,
                       adaptive: bool = True) -> ActiveSet:
    """Turn a worst case into a master scenario map that is valid on the cap box."""
    if adaptive:
        for priority, reduce in ((DEFAULT_PRIORITY, True), (BUDGET_PRIORITY, False)):
            try:
                a = identify_active(u, xi, scenario, priority=priority, reduce=reduce)
            except (DegeneracyUnresolved, SingularBasis, InvariantViolation) as exc:
                log.debug("active-set identification failed: %s", exc)
                continue
            excess = map_validity_excess(u, a, xi_lo, xi_hi)
            if excess <= 1e-6:
                return a
            log.debug("map %s overruns a budget by %.3g on the cap box", a.id, excess)
    return precap_active_set(u, scenario)


# -- main loop -------------------------------------------------------------------

@dataclass
class DispatchSolution:
    algorithm: str
    decision: FirstStageDecision
    costs: dict
    worst_case: Optional[Scenario]
    iterations: int
    lower_bound: float
    upper_bound: float
    log: IterationLog
    active_sets: list = field(default_factory=list, repr=False)

    @property
    def objective(self) -> float:
        """Optimized objective (piecewise curtailment costs), comparable across algorithms."""
        return self.upper_bound

    @property
    def total_cost(self) -> float:
        return self.costs["total"]

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm, "iterations": self.iterations,
                "objective": self.objective, "lower_bound": self.lower_bound,
                "upper_bound": self.upper_bound, "costs": self.costs,
                "decision": self.decision.to_dict(),
                "worst_case": None if self.worst_case is None else self.worst_case.to_dict(),
                "active_sets": [a.to_dict() for a in self.active_sets],
                "trace": self.log.to_list()}


def _x_summary(dec: FirstStageDecision) -> dict:
    return {"p_total": float(dec.p.sum()), "r_up_total": float(dec.r_up.sum()),
            "r_down_total": float(dec.r_down.sum())}


def _first_stage_piecewise(case: DispatchCase, dec: FirstStageDecision) -> float:
    c = first_stage_costs(case, dec)
    return c["generation"] + c["reserve"] + curtailment_cost_piecewise(case, dec.xi)


def solution_costs(case: DispatchCase, dec: FirstStageDecision, sp: SpResult) -> dict:
    """Exact cost breakdown at the worst case of ``dec``."""
    fs = first_stage_costs(case, dec)
    rec = sp.recourse
    up = float(np.sum(case.d_up[:, None] * rec.p_up))
    dn = float(np.sum(case.d_down[:, None] * rec.p_down))
    recur = float(np.sum(case.gamma_hat[:, None] * rec.recurtail ** 2))
    worst = up + dn + recur
    return {"generation": fs["generation"], "reserve": fs["reserve"],
            "precurtailment": fs["precurtailment"], "redispatch_up": up, "redispatch_down": dn,
            "recurtailment": recur, "worst_case_recourse": worst, "total": fs["total"] + worst,
            "total_piecewise": _first_stage_piecewise(case, dec) + sp.value,
            "worst_case_curtailment": float(np.sum(rec.recurtail))}


def _warn_scale(case: DispatchCase):
    scale = float(np.sum(case.alpha * case.p_max) * case.T
                  + np.sum(case.gamma[:, None] * (case.W_u - case.W_l) ** 2)
                  + np.sum((case.d_up + case.d_down) * case.p_max) * case.T)
    if scale * 10 >= UB_INIT:
        warnings.warn(f"initial upper bound {UB_INIT:g} is within 10x of the cost scale {scale:.3g}",
                      RuntimeWarning)


def run_ccg(case: DispatchCase, adaptive: bool = True, fix_xi=None,
            max_iter: int = DEFAULT_MAX_ITER, epsilon: Optional[float] = None,
            check_scenarios: bool = False,
            on_iteration: Optional[Callable[[IterationRecord], None]] = None,
            dump_dir=None) -> DispatchSolution:
    """Column-and-constraint generation with adaptive (``adaptive=True``) or
    pre-curtailment scenario maps; see :func:`run_accg`.

    ``dump_dir`` receives the master, feasibility-check and subproblem models
    of every iteration in LP format.
    """
    algorithm = "accg" if adaptive else "nccg"
    eps = case.epsilon if epsilon is None else epsilon
    _warn_scale(case)
    u = UncertaintyModel.from_case(case)
    system = build_recourse_system(case)
    fsys = feasibility_system(case)
    xi_lo, xi_hi = xi_domain(case, fix_xi)
    sets = [seed_active_set(u)]
    ids = {sets[0].id}
    trace = IterationLog(algorithm, eps)
    ub, lb = UB_INIT, -INF
    incumbent: Optional[tuple] = None
    for it in range(1, max_iter + 1):
        t0 = time.perf_counter()
        master = build_master(case, sets, fix_xi, system)
        dump = (lambda kind: None) if dump_dir is None else \
            (lambda kind: str(Path(dump_dir) / f"{algorithm}_{it:03d}_{kind}.lp"))
        if dump_dir is not None:
            Path(dump_dir).mkdir(parents=True, exist_ok=True)
            master.model.write_lp(dump("master"))
        res = master.solve()
        if res.status is Status.INFEASIBLE:
            raise InfeasibleModelError("master problem is infeasible: no first stage copes with "
                                       "the scenarios found so far")
        if not res.optimal:
            raise InfeasibleModelError(f"master problem ended with status {res.status.value}")
        lb = float(res.objective)
        dec = master.first_stage.vars.decision(res)
        if check_scenarios:
            for blk, w in zip(master.blocks, master.scenario_outputs(res)):
                if not membership(u, dec.xi, w, tol=1e-6):
                    raise InvariantViolation(f"master scenario {blk.active.id} left the uncertainty set")
        fcp = solve_fcp(case, dec, fsys, dump_path=dump("fcp"))
        if fcp.value > FEASIBILITY_TOL:
            sf, scenario = fcp.value, fcp.scenario
        else:
            sf = 0.0
            sp = solve_sp(case, dec, system, dump_path=dump("sp"))
            scenario = sp.scenario
            value = _first_stage_piecewise(case, dec) + sp.value
            if value < ub:
                ub = value
                incumbent = (dec, sp)
        rec = IterationRecord(it, lb, ub, dec.xi.ravel().tolist(), _x_summary(dec), sf,
                              scenario.fingerprint())
        trace.append(rec)
        done = sf == 0.0 and ub - lb <= eps
        if not done:
            a = harvest_active_set(u, dec.xi, scenario, xi_lo, xi_hi, adaptive)
            rec.activeset_id, rec.activeset_kind = a.id, a.kind
            if a.id in ids:
                rec.repeated = True
                if incumbent is None:
                    rec.seconds = time.perf_counter() - t0
                    raise InvariantViolation("a scenario map repeated before any robust feasible "
                                             "first stage was found")
                done = True
            else:
                ids.add(a.id)
                sets.append(a)
        rec.seconds = time.perf_counter() - t0
        if on_iteration:
            on_iteration(rec)
        log.info("%s iteration %d: LB=%.6f UB=%.6f Sf=%.3g", algorithm, it, lb, ub, sf)
        if done:
            dec_star, sp_star = incumbent
            return DispatchSolution(algorithm, dec_star, solution_costs(case, dec_star, sp_star),
                                    sp_star.scenario, it, lb, ub, trace, sets)
    raise MaxIterations(f"{algorithm} did not converge within {max_iter} iterations "
                        f"(LB={lb:.6g}, UB={ub:.6g})", trace)


def run_accg(case: DispatchCase, fix_xi=None, max_iter: int = DEFAULT_MAX_ITER,
             epsilon: Optional[float] = None, check_scenarios: bool = False,
             on_iteration=None, dump_dir=None) -> DispatchSolution:
    """Solve the dispatch problem with adaptive scenario maps.

    Terminates when ``UB - LB <= epsilon`` with a robust feasible first stage,
    or when a harvested map repeats (the bounds then coincide up to solver
    tolerance).  Costs in the result are re-evaluated with the exact
    quadratics at the incumbent's worst case.
    """
    return run_ccg(case, True, fix_xi, max_iter, epsilon, check_scenarios, on_iteration, dump_dir)

"""Nested column-and-constraint generation baseline.

The pre-curtailment output ``w_hat`` becomes the adversary's variable, ranging
over a decision-independent set, and ``w = min(w_hat, xi)`` moves into the
inner minimization as a binary choice.  The middle maximization is solved
exactly by the same KKT subproblem used elsewhere, and each worst ``w_hat``
enters the master as a fixed pre-curtailment scenario.
"""

from __future__ import annotations

import itertools
from typing import Optional

import numpy as np

from .accg import DispatchSolution, add_clamp, run_ccg
from .case import DispatchCase
from .errors import BackendError, InfeasibleRecourse
from .milp import INF, Model, Status, solve
from .predispatch import FirstStageDecision
from .recourse import add_recourse_block, build_recourse_system, solve_recourse

DEFAULT_MAX_OUTER = 200


def run_nccg(case: DispatchCase, max_outer: int = DEFAULT_MAX_OUTER, fix_xi=None,
             epsilon: Optional[float] = None, on_iteration=None, dump_dir=None) -> DispatchSolution:
    """Run the baseline; iteration counts are outer loops.  Raises MaxIterations."""
    return run_ccg(case, adaptive=False, fix_xi=fix_xi, max_iter=max_outer, epsilon=epsilon,
                   on_iteration=on_iteration, dump_dir=dump_dir)


def inner_min(case: DispatchCase, decision: FirstStageDecision, w_hat) -> float:
    """Re-dispatch cost with ``w = min(w_hat, xi)`` chosen through binaries in one MILP.

    Returns ``inf`` when no re-dispatch exists.
    """
    system = build_recourse_system(case)
    model = Model("inner_min")
    w_hat = np.asarray(w_hat, float).ravel()
    xi = np.asarray(decision.xi, float).ravel()
    ws = []
    for e, (a, b) in enumerate(zip(w_hat, xi)):
        wh = model.add_var(a, a, name=f"what_{e}")
        xv = model.add_var(b, b, name=f"xi_{e}")
        w, _, _ = add_clamp(model, wh, xv, -INF, (a, a), (b, b), name=f"w_{e}")
        ws.append(w)
    y = add_recourse_block(model, system, decision.x, np.array(ws, dtype=int), False, True)
    model.set_objective((y, system.d))
    res = solve(model)
    if res.status is Status.INFEASIBLE:
        return INF
    if not res.optimal:
        raise BackendError(f"inner minimization ended with status {res.status.value}")
    return float(res.objective)


def inner_min_enumerated(case: DispatchCase, decision: FirstStageDecision, w_hat) -> float:
    """Brute force over the ``2^(N_w T)`` choices ``w = z w_hat + (1 - z) xi`` with ``w <= w_hat, xi``."""
    w_hat = np.asarray(w_hat, float).ravel()
    xi = np.asarray(decision.xi, float).ravel()
    best = INF
    for bits in itertools.product((0, 1), repeat=len(xi)):
        z = np.array(bits)
        w = z * w_hat + (1 - z) * xi
        if np.any(w > np.minimum(w_hat, xi) + 1e-12):
            continue
        try:
            best = min(best, solve_recourse(case, decision, w.reshape(case.W_e.shape)).cost)
        except InfeasibleRecourse:
            pass
    return best

"""First-stage (pre-dispatch) feasible set and cost.

The quadratic pre-curtailment cost ``gamma_j (W^u - xi)^2`` is replaced inside
every MILP by a convex combination of breakpoint evaluations, so all models
stay linear.  Reported costs always use the exact quadratic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .case import DispatchCase
from .errors import InvariantViolation
from .milp import Model, SolveResult, check_feasible


@dataclass(frozen=True)
class PiecewiseQuadratic:
    """``coef * (x - anchor)^2`` sampled at increasing breakpoints."""

    breakpoints: np.ndarray
    coef: float
    anchor: float = 0.0

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        if bp.ndim != 1 or bp.size < 2 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be a strictly increasing 1-D array of length >= 2")
        object.__setattr__(self, "breakpoints", bp)

    @classmethod
    def uniform(cls, lo, hi, n, coef, anchor=0.0):
        return cls(np.linspace(lo, hi, n), coef, anchor)

    @property
    def values(self) -> np.ndarray:
        return self.coef * (self.breakpoints - self.anchor) ** 2

    @property
    def spacing(self) -> float:
        return float(np.max(np.diff(self.breakpoints)))

    def exact(self, x):
        return self.coef * (np.asarray(x, dtype=float) - self.anchor) ** 2

    def interpolate(self, x):
        return np.interp(x, self.breakpoints, self.values)

    def weights(self, x: float) -> np.ndarray:
        """Convex-combination weights on the two breakpoints bracketing ``x``."""
        bp = self.breakpoints
        x = float(np.clip(x, bp[0], bp[-1]))
        k = int(np.clip(np.searchsorted(bp, x, side="right") - 1, 0, bp.size - 2))
        lam = (x - bp[k]) / (bp[k + 1] - bp[k])
        sig = np.zeros(bp.size)
        sig[k] = 1.0 - lam
        sig[k + 1] = lam
        return sig

    def error_bound(self) -> float:
        """Worst interpolation error of a quadratic on the widest segment."""
        return self.coef * (self.spacing / 2.0) ** 2


def curtailment_pieces(case: DispatchCase) -> list[list[PiecewiseQuadratic]]:
    """Pre-curtailment cost pieces per (RG, period), uniform over [W^l, W^u]."""
    return [[PiecewiseQuadratic.uniform(case.W_l[j, t], case.W_u[j, t], case.breakpoints,
                                        case.gamma[j], anchor=case.W_u[j, t])
             for t in range(case.T)] for j in range(case.n_rgs)]


def recurtailment_pieces(case: DispatchCase, n: Optional[int] = None) -> list[list[PiecewiseQuadratic]]:
    """Real-time curtailment cost pieces per (RG, period), uniform over [0, W^u - W^l]."""
    n = case.breakpoints if n is None else n
    return [[PiecewiseQuadratic.uniform(0.0, case.W_u[j, t] - case.W_l[j, t], n,
                                        case.gamma_hat[j])
             for t in range(case.T)] for j in range(case.n_rgs)]


@dataclass(frozen=True)
class FirstStageDecision:
    p: np.ndarray
    r_up: np.ndarray
    r_down: np.ndarray
    xi: np.ndarray

    @property
    def x(self) -> np.ndarray:
        """Flattened thermal decisions (p, r_up, r_down), the recourse ``x`` vector."""
        return np.concatenate([self.p.ravel(), self.r_up.ravel(), self.r_down.ravel()])

    def to_dict(self) -> dict:
        return {"p": self.p.tolist(), "r_up": self.r_up.tolist(),
                "r_down": self.r_down.tolist(), "xi": self.xi.tolist()}


@dataclass(frozen=True)
class FirstStageVars:
    p: np.ndarray
    r_up: np.ndarray
    r_down: np.ndarray
    xi: np.ndarray
    sigma: np.ndarray  # (N_w, T, N)

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.p.ravel(), self.r_up.ravel(), self.r_down.ravel()])

    def decision(self, res: SolveResult) -> FirstStageDecision:
        return FirstStageDecision(p=res.value(self.p), r_up=res.value(self.r_up),
                                  r_down=res.value(self.r_down), xi=res.value(self.xi))


@dataclass
class FirstStageBlock:
    vars: FirstStageVars
    objective: dict  # variable handle -> linear cost


def build_first_stage(case: DispatchCase, model: Model, fix_xi=None) -> FirstStageBlock:
    """Add the pre-dispatch variables, constraints and linear objective to ``model``.

    ``fix_xi`` pins the curtailment caps (used for the real-time-only model).
    """
    G, W, T, N = case.n_units, case.n_rgs, case.T, case.breakpoints
    u = case.commitment.astype(float)
    Pl, Pu = case.p_min[:, None] * u, case.p_max[:, None] * u

    p = model.add_vars((G, T), lb=Pl, ub=Pu, name="p")
    r_up = model.add_vars((G, T), lb=0.0, ub=case.reserve_max_up[:, None] * u, name="rup")
    r_dn = model.add_vars((G, T), lb=0.0, ub=case.reserve_max_down[:, None] * u, name="rdn")
    xi_lo, xi_hi = case.W_l, case.W_u
    if fix_xi is not None:
        xi_lo = xi_hi = np.broadcast_to(np.asarray(fix_xi, dtype=float), (W, T))
    xi = model.add_vars((W, T), lb=xi_lo, ub=xi_hi, name="xi")
    sigma = model.add_vars((W, T, N), lb=0.0, ub=1.0, name="sig")

    objective: dict[int, float] = {}
    for i in range(G):
        for t in range(T):
            objective[int(p[i, t])] = case.alpha[i]
            objective[int(r_up[i, t])] = case.beta_up[i]
            objective[int(r_dn[i, t])] = case.beta_down[i]

    pieces = curtailment_pieces(case)
    for j in range(W):
        for t in range(T):
            pw = pieces[j][t]
            model.add_eq({int(xi[j, t]): 1.0, **{int(s): -b for s, b in zip(sigma[j, t], pw.breakpoints)}},
                         0.0, name=f"xi_conv_{j}_{t}")
            model.add_eq({int(s): 1.0 for s in sigma[j, t]}, 1.0, name=f"xi_simplex_{j}_{t}")
            for s, g in zip(sigma[j, t], pw.values):
                if g:
                    objective[int(s)] = objective.get(int(s), 0.0) + g

    # ramping with reserve deployment, periods after the first
    for i in range(G):
        for t in range(1, T):
            up_prev = u[i, t - 1] * case.ramp_up[i] + (1 - u[i, t - 1]) * case.p_max[i]
            dn_now = u[i, t] * case.ramp_down[i] + (1 - u[i, t]) * case.p_max[i]
            a, b, c, d = int(p[i, t]), int(r_up[i, t]), int(r_dn[i, t]), int(p[i, t - 1])
            bp, cp = int(r_up[i, t - 1]), int(r_dn[i, t - 1])
            model.add_le({a: 1, b: 1, d: -1, cp: 1}, up_prev, name=f"ramp1_{i}_{t}")
            model.add_le({a: -1, b: -1, d: 1, cp: -1}, dn_now, name=f"ramp2_{i}_{t}")
            model.add_le({a: 1, c: -1, d: -1, bp: -1}, up_prev, name=f"ramp3_{i}_{t}")
            model.add_le({a: -1, c: 1, d: 1, bp: 1}, dn_now, name=f"ramp4_{i}_{t}")

    # generation adequacy: deployed reserve stays within the output range
    for i in range(G):
        for t in range(T):
            model.add_ge({int(p[i, t]): 1, int(r_dn[i, t]): -1}, Pl[i, t], name=f"adeq_lo_{i}_{t}")
            model.add_le({int(p[i, t]): 1, int(r_up[i, t]): 1}, Pu[i, t], name=f"adeq_hi_{i}_{t}")

    # balance and flows at the forecast
    for t in range(T):
        rhs = case.total_demand[t] - case.W_e[:, t].sum()
        model.add_eq({int(p[i, t]): 1.0 for i in range(G)}, rhs, name=f"bal_{t}")
    if case.network is not None:
        F = case.network.capacity
        for k in range(len(F)):
            for t in range(T):
                const = case.ptdf_rgs[k] @ case.W_e[:, t] - case.ptdf_loads[k] @ case.demand[:, t]
                terms = {int(p[i, t]): case.ptdf_units[k, i] for i in range(G)}
                model.add_le(terms, F[k] - const, name=f"flow_hi_{k}_{t}")
                model.add_ge(terms, -F[k] - const, name=f"flow_lo_{k}_{t}")

    return FirstStageBlock(FirstStageVars(p, r_up, r_dn, xi, sigma), objective)


def curtailment_cost(case: DispatchCase, xi) -> float:
    """Exact pre-curtailment cost sum_jt gamma_j (W^u_jt - xi_jt)^2."""
    xi = np.asarray(xi, dtype=float)
    return float(np.sum(case.gamma[:, None] * (case.W_u - xi) ** 2))


def curtailment_cost_piecewise(case: DispatchCase, xi) -> float:
    """Breakpoint-interpolated pre-curtailment cost (what the MILPs see)."""
    xi = np.asarray(xi, dtype=float)
    pieces = curtailment_pieces(case)
    return float(sum(pieces[j][t].interpolate(xi[j, t])
                     for j in range(case.n_rgs) for t in range(case.T)))


def first_stage_costs(case: DispatchCase, decision: FirstStageDecision) -> dict:
    """Exact cost breakdown of a first-stage decision."""
    gen = float(np.sum(case.alpha[:, None] * decision.p))
    res = float(np.sum(case.beta_up[:, None] * decision.r_up)
                + np.sum(case.beta_down[:, None] * decision.r_down))
    cur = curtailment_cost(case, decision.xi)
    return {"generation": gen, "reserve": res, "precurtailment": cur, "total": gen + res + cur}


def check_first_stage(case: DispatchCase, decision: FirstStageDecision, tol=1e-6):
    """Violations of the pre-dispatch constraints at ``decision`` (empty if feasible)."""
    model = Model("first_stage_check")
    block = build_first_stage(case, model)
    v = block.vars
    x = np.zeros(model.num_vars)
    x[v.p] = decision.p
    x[v.r_up] = decision.r_up
    x[v.r_down] = decision.r_down
    x[v.xi] = decision.xi
    pieces = curtailment_pieces(case)
    for j in range(case.n_rgs):
        for t in range(case.T):
            x[v.sigma[j, t]] = pieces[j][t].weights(decision.xi[j, t])
    return check_feasible(model, x, tol)


def evaluate_first_stage_cost(case: DispatchCase, decision: FirstStageDecision,
                              tol: float = 1e-6) -> float:
    """Exact first-stage cost ``c @ x + g(xi)``; raises if ``decision`` is infeasible."""
    bad = check_first_stage(case, decision, tol)
    if bad:
        worst = min(bad, key=lambda v: v.slack)
        raise InvariantViolation(
            f"first-stage decision violates {len(bad)} constraint(s); worst {worst.name} "
            f"by {-worst.slack:.3g}")
    return first_stage_costs(case, decision)["total"]

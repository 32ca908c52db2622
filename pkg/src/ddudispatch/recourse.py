"""Re-dispatch LP and the two max-min problems built on it.

The re-dispatch problem for a first stage ``x = (p, r_up, r_down)`` and a
renewable output ``w`` is written in the stacked form

    min d @ y   s.t.   E y <= f - R w - D x   (some rows are equalities)

with ``y = (p_up, p_down, sigma_hat)``; ``sigma_hat`` are convex-combination
weights of the real-time curtailment quadratic.  Replacing this LP by its
KKT conditions, with big-M complementarity, turns the worst case over the
uncertainty set into a single MILP.  The feasibility check maximizes the
minimal slack needed to make the LP feasible; the subproblem maximizes the
re-dispatch cost itself.

Slack is placed only on rows with physical meaning (reserve limits, power
balance, line flows).  The sign and simplex rows of ``y`` stay hard, otherwise
a negative weight would act as fictitious generation and the slack would no
longer measure MW of violation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .case import DispatchCase
from .ddu import DduVars, Scenario, UncertaintyModel, build_ddu_constraints
from .errors import BackendError, BigMTooSmall, InfeasibleRecourse, UnboundedError
from .milp import INF, Model, Status, solve
from .predispatch import FirstStageDecision, recurtailment_pieces

AUDIT_REL = 1e-6
HARD_PREFIXES = ("pup_lo", "pdn_lo", "sig_lo", "sig_sum")


@dataclass(frozen=True)
class RecourseSystem:
    E: np.ndarray
    f: np.ndarray
    R: np.ndarray
    D: np.ndarray
    eq: np.ndarray
    d: np.ndarray
    names: tuple
    shape_units: tuple   # (G, T)
    shape_rgs: tuple     # (W, T)
    breakpoints: np.ndarray  # (W, T, N)

    @property
    def n_rows(self) -> int:
        return self.E.shape[0]

    @property
    def soft(self) -> np.ndarray:
        """Rows with physical meaning; sign and convex-combination rows of ``y`` are not."""
        return np.array([not n.startswith(HARD_PREFIXES) for n in self.names], dtype=bool)

    @property
    def n_y(self) -> int:
        return self.E.shape[1]

    def split(self, y: np.ndarray) -> dict:
        """Named blocks of a flat ``y`` vector."""
        G, T = self.shape_units
        W, _ = self.shape_rgs
        n = G * T
        sig = y[2 * n:].reshape(self.breakpoints.shape)
        return {"p_up": y[:n].reshape(G, T), "p_down": y[n:2 * n].reshape(G, T),
                "sigma": sig, "recurtail": np.sum(sig * self.breakpoints, axis=2)}

    def rhs(self, x, w) -> np.ndarray:
        return self.f - self.R @ np.ravel(w) - self.D @ np.ravel(x)


def build_recourse_system(case: DispatchCase, breakpoints: Optional[int] = None) -> RecourseSystem:
    """Stacked re-dispatch rows; ``breakpoints`` overrides the case's piece count."""
    G, W, T = case.n_units, case.n_rgs, case.T
    N = case.breakpoints if breakpoints is None else breakpoints
    pieces = recurtailment_pieces(case, N)
    bps = np.array([[pieces[j][t].breakpoints for t in range(T)] for j in range(W)]).reshape(W, T, N)
    vals = np.array([[pieces[j][t].values for t in range(T)] for j in range(W)]).reshape(W, T, N)

    n_units = G * T
    ny = 2 * n_units + W * T * N
    nx = 3 * n_units
    nw = W * T
    up = np.arange(n_units).reshape(G, T)
    dn = n_units + up
    sig = 2 * n_units + np.arange(W * T * N).reshape(W, T, N)
    xp = np.arange(n_units).reshape(G, T)
    xru = n_units + xp
    xrd = 2 * n_units + xp
    widx = np.arange(nw).reshape(W, T)

    rows_E, rows_R, rows_D, f, eq, names = [], [], [], [], [], []

    def row(name, e=(), r=(), dx=(), rhs=0.0, is_eq=False):
        Er, Rr, Dr = np.zeros(ny), np.zeros(nw), np.zeros(nx)
        for k, v in e:
            Er[k] += v
        for k, v in r:
            Rr[k] += v
        for k, v in dx:
            Dr[k] += v
        rows_E.append(Er)
        rows_R.append(Rr)
        rows_D.append(Dr)
        f.append(rhs)
        eq.append(is_eq)
        names.append(name)

    for i in range(G):
        for t in range(T):
            row(f"pup_cap_{i}_{t}", e=[(up[i, t], 1)], dx=[(xru[i, t], -1)])
            row(f"pdn_cap_{i}_{t}", e=[(dn[i, t], 1)], dx=[(xrd[i, t], -1)])
            row(f"pup_lo_{i}_{t}", e=[(up[i, t], -1)])
            row(f"pdn_lo_{i}_{t}", e=[(dn[i, t], -1)])
    for j in range(W):
        for t in range(T):
            for k in range(N):
                row(f"sig_lo_{j}_{t}_{k}", e=[(sig[j, t, k], -1)])
    for j in range(W):
        for t in range(T):
            row(f"sig_sum_{j}_{t}", e=[(s, 1) for s in sig[j, t]], rhs=1.0, is_eq=True)
    for t in range(T):
        e = [(up[i, t], 1) for i in range(G)] + [(dn[i, t], -1) for i in range(G)]
        e += [(sig[j, t, k], -bps[j, t, k]) for j in range(W) for k in range(N)]
        row(f"bal_{t}", e=e, r=[(widx[j, t], 1) for j in range(W)],
            dx=[(xp[i, t], 1) for i in range(G)], rhs=case.total_demand[t], is_eq=True)
    if case.network is not None:
        Pg, Pw, Pl = case.ptdf_units, case.ptdf_rgs, case.ptdf_loads
        F = case.network.capacity
        for k in range(len(F)):
            for t in range(T):
                load_flow = float(Pl[k] @ case.demand[:, t])
                for sgn, tag in ((1.0, "hi"), (-1.0, "lo")):
                    e = [(up[i, t], sgn * Pg[k, i]) for i in range(G)]
                    e += [(dn[i, t], -sgn * Pg[k, i]) for i in range(G)]
                    e += [(sig[j, t, n], -sgn * Pw[k, j] * bps[j, t, n]) for j in range(W) for n in range(N)]
                    row(f"flow_{tag}_{k}_{t}", e=e, r=[(widx[j, t], sgn * Pw[k, j]) for j in range(W)],
                        dx=[(xp[i, t], sgn * Pg[k, i]) for i in range(G)],
                        rhs=F[k] + sgn * load_flow)

    d = np.concatenate([np.repeat(case.d_up, T), np.repeat(case.d_down, T), vals.ravel()])
    return RecourseSystem(np.array(rows_E), np.array(f), np.array(rows_R), np.array(rows_D),
                          np.array(eq, dtype=bool), d, tuple(names), (G, T), (W, T), bps)


def add_recourse_block(model: Model, system: RecourseSystem, x, w, x_is_var: bool,
                       w_is_var: bool, name: str = "y") -> np.ndarray:
    """Add ``y`` and the rows ``E y <= f - R w - D x`` to ``model``.

    ``x`` and ``w`` are either arrays of variable handles (``*_is_var``) or
    numeric values that are folded into the right-hand side.
    """
    x, w = np.ravel(x), np.ravel(w)
    y = model.add_vars(system.n_y, lb=-INF, ub=INF, name=name)
    rhs = system.f.copy()
    if not x_is_var:
        rhs -= system.D @ x
    if not w_is_var:
        rhs -= system.R @ w
    for r in range(system.n_rows):
        terms = [(int(y[k]), v) for k, v in zip(*_nz(system.E[r]))]
        if x_is_var:
            terms += [(int(x[k]), v) for k, v in zip(*_nz(system.D[r]))]
        if w_is_var:
            terms += [(int(w[k]), v) for k, v in zip(*_nz(system.R[r]))]
        if system.eq[r]:
            model.add_eq(terms, rhs[r], name=f"{name}_{system.names[r]}")
        else:
            model.add_le(terms, rhs[r], name=f"{name}_{system.names[r]}")
    return y


def _nz(vec):
    k = np.flatnonzero(vec)
    return k, vec[k]


# -- re-dispatch LP ---------------------------------------------------------

@dataclass
class RecourseResult:
    p_up: np.ndarray
    p_down: np.ndarray
    recurtail: np.ndarray
    sigma: np.ndarray
    cost: float        # linearized objective, what the MILPs see
    exact_cost: float  # with the exact real-time curtailment quadratic
    y: np.ndarray = field(repr=False, default=None)


def exact_recourse_cost(case: DispatchCase, p_up, p_down, recurtail) -> float:
    return float(np.sum(case.d_up[:, None] * p_up) + np.sum(case.d_down[:, None] * p_down)
                 + np.sum(case.gamma_hat[:, None] * np.asarray(recurtail) ** 2))


def solve_recourse(case: DispatchCase, decision: FirstStageDecision, w,
                   system: Optional[RecourseSystem] = None) -> RecourseResult:
    """Optimal re-dispatch for renewable output ``w``; raises InfeasibleRecourse."""
    system = system or build_recourse_system(case)
    w = np.asarray(w, dtype=float).reshape(system.shape_rgs)
    model = Model("recourse")
    y = add_recourse_block(model, system, decision.x, w, False, False)
    model.set_objective((y, system.d))
    res = solve(model)
    if res.status is Status.INFEASIBLE:
        raise InfeasibleRecourse("re-dispatch LP is infeasible for this scenario")
    if res.status is Status.UNBOUNDED:
        raise UnboundedError("re-dispatch LP reported unbounded")
    if not res.optimal:
        raise BackendError(f"re-dispatch LP ended with status {res.status.value}")
    yv = res.value(y)
    parts = system.split(yv)
    return RecourseResult(parts["p_up"], parts["p_down"], parts["recurtail"], parts["sigma"],
                          float(res.objective),
                          exact_recourse_cost(case, parts["p_up"], parts["p_down"], parts["recurtail"]),
                          yv)


def feasibility_system(case: DispatchCase) -> RecourseSystem:
    """Re-dispatch rows with two curtailment breakpoints.

    Feasibility only depends on the curtailment amount lying in
    ``[0, W^u - W^l]``, which two weights already express; the fewer rows
    keep the feasibility-check MILP small.
    """
    return build_recourse_system(case, breakpoints=2)


def recourse_slack(case: DispatchCase, decision: FirstStageDecision, w,
                   system: Optional[RecourseSystem] = None) -> float:
    """Minimal total slack that makes the re-dispatch rows satisfiable (0 iff feasible)."""
    system = system or feasibility_system(case)
    rhs = system.rhs(decision.x, w)
    model = Model("recourse_slack")
    y = model.add_vars(system.n_y, lb=-INF, ub=INF, name="y")
    rows, signs, h = _split_rows(system, rhs)
    soft = system.soft[rows]
    s = model.add_vars(len(rows), lb=0.0, ub=np.where(soft, INF, 0.0), name="s")
    for k, (r, sg) in enumerate(zip(rows, signs)):
        idx, val = _nz(system.E[r])
        model.add_le([(int(y[a]), sg * v) for a, v in zip(idx, val)] + [(int(s[k]), -1.0)], h[k])
    model.set_objective((s, soft.astype(float)))
    res = solve(model)
    if not res.optimal:
        raise BackendError(f"slack LP ended with status {res.status.value}")
    return float(res.objective)


def _split_rows(system: RecourseSystem, rhs=None):
    """Inequality-only view: every equality becomes a <= and a >= row."""
    rows, signs = [], []
    for r in range(system.n_rows):
        rows.append(r)
        signs.append(1.0)
        if system.eq[r]:
            rows.append(r)
            signs.append(-1.0)
    rows, signs = np.array(rows), np.array(signs)
    h = None if rhs is None else signs * rhs[rows]
    return rows, signs, h


# -- KKT reformulations -----------------------------------------------------

@dataclass
class FcpResult:
    value: float
    scenario: Scenario
    y: np.ndarray
    slack: np.ndarray

    @property
    def feasible(self) -> bool:
        return self.value <= 1e-6


@dataclass
class SpResult:
    value: float       # re-dispatch LP value at the worst case (linearized)
    kkt_value: float   # objective of the KKT MILP, a consistency check on ``value``
    scenario: Scenario
    recourse: RecourseResult


def audit_big_m(big_m: float, **arrays) -> None:
    """Raise BigMTooSmall if any complementarity quantity reached ``big_m``."""
    limit = big_m * (1 - AUDIT_REL)
    for name, arr in arrays.items():
        arr = np.abs(np.asarray(arr, dtype=float))
        if arr.size and arr.max() >= limit:
            k = int(np.argmax(arr))
            raise BigMTooSmall(f"{name}[{k}] = {arr[k]:.6g} reached big-M {big_m:g}; raise big_m")


def _ddu_block(case, model, decision):
    u = UncertaintyModel.from_case(case)
    return build_ddu_constraints(model, u, decision.xi)


def solve_fcp(case: DispatchCase, decision: FirstStageDecision,
              system: Optional[RecourseSystem] = None, dump_path=None) -> FcpResult:
    """Worst-case minimal slack over the uncertainty set at the decision's cap.

    ``system`` defaults to :func:`feasibility_system`; any piece count gives
    the same value.
    """
    system = system or feasibility_system(case)
    M = case.big_m
    model = Model("fcp")
    v = _ddu_block(case, model, decision)
    wv = v.w.ravel()
    rows, signs, _ = _split_rows(system)
    soft = system.soft[rows]
    h0 = signs * (system.f - system.D @ decision.x)[rows]
    m = len(rows)
    y = model.add_vars(system.n_y, lb=-M, ub=M, name="y")
    s = model.add_vars(m, lb=0.0, ub=np.where(soft, M, 0.0), name="s")
    sl = model.add_vars(m, lb=0.0, ub=M, name="sl")
    mu = model.add_vars(m, lb=0.0, ub=M, name="mu")
    zm = model.add_vars(m, binary=True, name="zmu")
    for k, (r, sg) in enumerate(zip(rows, signs)):
        ei, ev = _nz(system.E[r])
        ri, rv = _nz(system.R[r])
        # sl = h - E y - R w + s
        terms = [(int(sl[k]), 1.0), (int(s[k]), -1.0)]
        terms += [(int(y[a]), sg * b) for a, b in zip(ei, ev)]
        terms += [(int(wv[a]), sg * b) for a, b in zip(ri, rv)]
        model.add_eq(terms, h0[k], name=f"fcp_slack_{k}")
        # multipliers of soft rows lie in [0, 1]
        model.add_le({int(mu[k]): 1, int(zm[k]): -(1.0 if soft[k] else M)}, 0.0)
        model.add_le({int(sl[k]): 1, int(zm[k]): M}, M)
        if soft[k]:
            # dual of s >= 0 is 1 - mu; complementarity with s
            mus = model.add_var(0.0, 1.0, name=f"mus_{k}")
            zs = model.add_var(binary=True, name=f"zmus_{k}")
            model.add_le({mus: 1, zs: -M}, 0.0)
            model.add_le({int(s[k]): 1, zs: M}, M)
            model.add_eq({int(mu[k]): 1, mus: 1}, 1.0)
    Es = signs[:, None] * system.E[rows]
    for c in range(system.n_y):
        idx, val = _nz(Es[:, c])
        model.add_eq([(int(mu[a]), b) for a, b in zip(idx, val)], 0.0, name=f"fcp_stat_{c}")
    model.set_objective((s, soft.astype(float)), sense="max")
    if dump_path:
        model.write_lp(dump_path)
    res = solve(model)
    if not res.optimal:
        raise BackendError(f"feasibility-check MILP ended with status {res.status.value}")
    audit_big_m(M, slack=res.value(sl), s=res.value(s), y=res.value(y))
    return FcpResult(max(0.0, float(res.objective)), v.scenario(res), res.value(y), res.value(s))


def solve_sp(case: DispatchCase, decision: FirstStageDecision,
             system: Optional[RecourseSystem] = None, dump_path=None,
             fix_w=None) -> SpResult:
    """Worst-case re-dispatch cost over the uncertainty set at the decision's cap.

    ``fix_w`` pins the renewable output, which reduces the MILP to the KKT
    system of a single LP (used to cross-check the reformulation).
    """
    system = system or build_recourse_system(case)
    M = case.big_m
    model = Model("sp")
    v = _ddu_block(case, model, decision)
    wv = v.w.ravel()
    if fix_w is not None:
        for idx, val in zip(wv, np.ravel(fix_w)):
            model.fix(int(idx), float(val))
    h0 = system.f - system.D @ decision.x
    y = model.add_vars(system.n_y, lb=-M, ub=M, name="y")
    ineq = np.flatnonzero(~system.eq)
    eqr = np.flatnonzero(system.eq)
    sl = model.add_vars(len(ineq), lb=0.0, ub=M, name="sl")
    mu = model.add_vars(len(ineq), lb=0.0, ub=M, name="mu")
    lam = model.add_vars(len(eqr), lb=-M, ub=M, name="lam")
    zm = model.add_vars(len(ineq), binary=True, name="zmu")
    for k, r in enumerate(ineq):
        ei, ev = _nz(system.E[r])
        ri, rv = _nz(system.R[r])
        terms = [(int(sl[k]), 1.0)] + [(int(y[a]), b) for a, b in zip(ei, ev)]
        terms += [(int(wv[a]), b) for a, b in zip(ri, rv)]
        model.add_eq(terms, h0[r], name=f"sp_slack_{system.names[r]}")
        model.add_le({int(mu[k]): 1, int(zm[k]): -M}, 0.0)
        model.add_le({int(sl[k]): 1, int(zm[k]): M}, M)
    for k, r in enumerate(eqr):
        ei, ev = _nz(system.E[r])
        ri, rv = _nz(system.R[r])
        terms = [(int(y[a]), b) for a, b in zip(ei, ev)] + [(int(wv[a]), b) for a, b in zip(ri, rv)]
        model.add_eq(terms, h0[r], name=f"sp_{system.names[r]}")
    for c in range(system.n_y):
        ii, iv = _nz(system.E[ineq, c])
        ei, ev = _nz(system.E[eqr, c])
        terms = [(int(mu[a]), b) for a, b in zip(ii, iv)] + [(int(lam[a]), b) for a, b in zip(ei, ev)]
        model.add_eq(terms, -system.d[c], name=f"sp_stat_{c}")
    model.set_objective((y, system.d), sense="max")
    if dump_path:
        model.write_lp(dump_path)
    res = solve(model)
    if res.status is Status.UNBOUNDED:
        raise UnboundedError("subproblem reported unbounded; the re-dispatch LP is box-bounded")
    if res.status is Status.INFEASIBLE:
        raise InfeasibleRecourse("subproblem infeasible: the first stage is not robust feasible")
    if not res.optimal:
        raise BackendError(f"subproblem MILP ended with status {res.status.value}")
    audit_big_m(M, slack=res.value(sl), mu=res.value(mu), lam=res.value(lam), y=res.value(y))
    scenario = v.scenario(res)
    rec = solve_recourse(case, decision, scenario.w, system)
    kkt = float(res.objective)
    if abs(kkt - rec.cost) > 1e-5 * (1 + abs(rec.cost)):
        raise BigMTooSmall(f"KKT value {kkt:.8g} disagrees with the LP value {rec.cost:.8g} "
                           "at the worst case; the complementarity big-M cuts off the optimum")
    return SpResult(rec.cost, kkt, scenario, rec)


def solve_sp_integer_recourse(case, decision, **kwargs):
    """Extension point for re-dispatch models with integer variables.

    Such models need a nested min-max-min reformulation whose innermost
    problem cannot be replaced by KKT conditions; it is not implemented.
    """
    raise NotImplementedError("integer re-dispatch variables are not supported")

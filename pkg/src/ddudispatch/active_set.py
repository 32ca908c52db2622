"""Active constraint sets of worst-case scenarios.

With the binaries frozen, the uncertainty set at a cap ``xi`` is a polytope
``Q u <= F xi + c`` in ``u = (w, w_hat, dev_up, dev_down)``.  A worst case
found by the subproblem sits at a vertex; picking ``4 * N_w * T`` linearly
independent tight rows pins ``u`` as an affine function of ``xi``, which the
master problem uses to move the scenario along with the cap.

Row identifiers are ``family[j,t]`` (budgets: ``bud_s[t]``, ``bud_t[j]``),
with ``|z=..`` appended to rows whose coefficients depend on a binary.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .ddu import Scenario, UncertaintyModel
from .errors import DegeneracyUnresolved, InvariantViolation, SingularBasis
from .milp import Model, lp_feasible, solve

FAMILIES = ("def", "min_le", "min_ge", "cap", "cap_ge", "up_lo", "dn_lo", "up_hi", "dn_hi",
            "comp_dn", "comp_up", "bud_s", "bud_t")

# Selection order used when several tight rows compete for the basis.  Cap
# rows come first so scenarios keep following the curtailment cap.
DEFAULT_PRIORITY = ("cap", "cap_ge", "def", "min_le", "min_ge", "comp_dn", "comp_up",
                    "bud_s", "bud_t", "dn_lo", "up_lo", "up_hi", "dn_hi")
# Budget-first order, tried when the default map is not valid on the whole cap box.
BUDGET_PRIORITY = ("def", "min_le", "min_ge", "comp_dn", "comp_up", "bud_s", "bud_t",
                   "cap", "cap_ge", "dn_lo", "up_lo", "up_hi", "dn_hi")

TIGHT_TOL = 1e-6
REDUNDANCY_TOL = 1e-7
PIVOT_TOL = 1e-9
VALIDITY_TOL = 1e-7


@dataclass(frozen=True)
class RowSystem:
    """Rows ``Q u <= F xi + c`` (``eq`` rows hold with equality)."""

    ids: tuple
    families: tuple
    Q: np.ndarray
    F: np.ndarray
    c: np.ndarray
    eq: np.ndarray

    def rhs(self, xi) -> np.ndarray:
        return self.F @ np.ravel(xi) + self.c

    def __len__(self):
        return len(self.ids)


def ddu_rows(u: UncertaintyModel, z_min, z_comp) -> RowSystem:
    """Linear description of the uncertainty set with both binaries fixed."""
    W, T = u.shape
    n = u.size
    z_min = np.asarray(z_min).reshape(W, T).round().astype(int)
    z_comp = np.asarray(z_comp).reshape(W, T).round().astype(int)
    Wl, Wu, We, Wh = u.W_l.ravel(), u.W_u.ravel(), u.W_e.ravel(), u.W_h.ravel()
    iw, ih, iu, idn = 0, n, 2 * n, 3 * n
    by_family: dict[str, list] = {f: [] for f in FAMILIES}

    def add(fam, rid, coefs, fcoef=None, const=0.0, is_eq=False):
        q = np.zeros(4 * n)
        for k, v in coefs:
            q[k] += v
        fr = np.zeros(n)
        if fcoef is not None:
            fr[fcoef[0]] = fcoef[1]
        by_family[fam].append((rid, q, fr, float(const), is_eq))

    for j in range(W):
        for t in range(T):
            e = j * T + t
            z, zc = int(z_min.flat[e]), int(z_comp.flat[e])
            tag = f"[{j},{t}]"
            add("def", f"def{tag}", [(ih + e, 1), (iu + e, -1), (idn + e, 1)], const=We[e], is_eq=True)
            add("min_le", f"min_le{tag}", [(iw + e, 1), (ih + e, -1)])
            add("min_ge", f"min_ge{tag}|z={z}", [(ih + e, 1), (iw + e, -1)], const=(Wu[e] - Wl[e]) * (1 - z))
            add("cap", f"cap{tag}", [(iw + e, 1)], fcoef=(e, 1.0))
            # -w <= -xi + (xi - W^l) z
            add("cap_ge", f"cap_ge{tag}|z={z}", [(iw + e, -1)], fcoef=(e, -(1 - z)), const=-Wl[e] * z)
            add("up_lo", f"up_lo{tag}", [(iu + e, -1)])
            add("dn_lo", f"dn_lo{tag}", [(idn + e, -1)])
            add("up_hi", f"up_hi{tag}", [(iu + e, 1)], const=Wh[e])
            add("dn_hi", f"dn_hi{tag}", [(idn + e, 1)], const=Wh[e])
            add("comp_dn", f"comp_dn{tag}|zc={zc}", [(idn + e, 1)], const=Wu[e] * zc)
            add("comp_up", f"comp_up{tag}|zc={zc}", [(iu + e, 1)], const=Wu[e] * (1 - zc))
    for t in range(T):
        coefs = []
        for j in range(W):
            e = j * T + t
            coefs += [(iu + e, 1 / Wh[e]), (idn + e, 1 / Wh[e])]
        add("bud_s", f"bud_s[{t}]", coefs, const=u.gamma_s)
    for j in range(W):
        coefs = []
        for t in range(T):
            e = j * T + t
            coefs += [(iu + e, 1 / Wh[e]), (idn + e, 1 / Wh[e])]
        add("bud_t", f"bud_t[{j}]", coefs, const=u.gamma_t)

    rows = [(fam, *r) for fam in FAMILIES for r in by_family[fam]]
    return RowSystem(ids=tuple(r[1] for r in rows), families=tuple(r[0] for r in rows),
                     Q=np.array([r[2] for r in rows]), F=np.array([r[3] for r in rows]),
                     c=np.array([r[4] for r in rows]), eq=np.array([r[5] for r in rows], dtype=bool))


def _rank(M: np.ndarray) -> int:
    if M.size == 0:
        return 0
    R = scipy.linalg.qr(M.T, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(R))
    return int(np.sum(diag > PIVOT_TOL * max(1.0, np.abs(M).max())))


def is_redundant(Q, q, eq, j, others, tol=REDUNDANCY_TOL) -> bool:
    """Whether row ``j`` is implied by ``others``: some multipliers ``v >= 0``
    (free on equality rows) reproduce its coefficients with ``v @ q <= q_j``."""
    others = [k for k in others if k != j]
    if not others:
        return False
    Qo = Q[others]
    lb = np.where(eq[others], -np.inf, 0.0)
    return lp_feasible(A_ub=np.atleast_2d(q[others]), b_ub=[q[j] + tol * (1 + abs(q[j]))],
                       A_eq=Qo.T, b_eq=Q[j], lb=lb, n=len(others))


def remove_redundant(Q, q, eq=None, candidates: Optional[Sequence[int]] = None,
                     order: Optional[Sequence[int]] = None, tol=REDUNDANCY_TOL) -> list[int]:
    """Indices of rows kept after dropping redundant ones one at a time.

    Rows are tested in ``order`` (default: last to first) against the rows
    still kept among ``candidates``; equality rows are never dropped.
    """
    Q, q = np.atleast_2d(np.asarray(Q, float)), np.asarray(q, float)
    m = len(q)
    eq = np.zeros(m, bool) if eq is None else np.asarray(eq, bool)
    kept = list(range(m)) if candidates is None else list(candidates)
    order = list(reversed(kept)) if order is None else [k for k in order if k in kept]
    for j in order:
        if eq[j]:
            continue
        if is_redundant(Q, q, eq, j, kept, tol):
            kept.remove(j)
    return sorted(kept)


@dataclass(frozen=True)
class ActiveSet:
    """An affine scenario map ``u(xi) = Q^-1 (F xi + c)`` and its provenance.

    ``kind`` is ``"active"`` for a basis of tight rows, ``"seed"`` for the
    forecast scenario and ``"precap"`` for a fixed pre-curtailment output
    ``w_hat`` (in the last two the map is constant).
    """

    kind: str
    rows: tuple
    Q: np.ndarray
    F: np.ndarray
    c: np.ndarray
    z_min: np.ndarray
    z_comp: np.ndarray
    A: np.ndarray       # w_tilde = A xi + b
    b: np.ndarray
    A_hat: np.ndarray   # w_hat = A_hat xi + b_hat
    b_hat: np.ndarray
    origin_xi: Optional[np.ndarray] = None
    priority: str = ""
    info: dict = field(default_factory=dict, compare=False)

    @property
    def id(self) -> str:
        h = hashlib.sha1(self.kind.encode())
        h.update("|".join(self.rows).encode())
        h.update(np.round(self.z_min.ravel()).astype(np.int8).tobytes())
        h.update(np.round(self.z_comp.ravel()).astype(np.int8).tobytes())
        if self.kind != "active":
            h.update(np.round(self.b, 6).tobytes())
        return h.hexdigest()[:12]

    def same_as(self, other: "ActiveSet") -> bool:
        return self.id == other.id

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "rows": list(self.rows),
                "z_min": self.z_min.ravel().astype(int).tolist(),
                "z_comp": self.z_comp.ravel().astype(int).tolist(),
                "A": self.A.tolist(), "b": self.b.tolist()}


def _constant_set(kind, u: UncertaintyModel, w_hat) -> ActiveSet:
    n = u.size
    w_hat = np.asarray(w_hat, float).ravel()
    zero = np.zeros((n, n))
    return ActiveSet(kind=kind, rows=(f"{kind}",), Q=np.eye(n), F=zero, c=w_hat.copy(),
                     z_min=np.ones(n), z_comp=np.zeros(n), A=zero, b=w_hat.copy(),
                     A_hat=zero, b_hat=w_hat.copy())


def seed_active_set(u: UncertaintyModel) -> ActiveSet:
    """Forecast scenario: identity basis with right-hand side W^e."""
    return _constant_set("seed", u, u.W_e)


def precap_active_set(u: UncertaintyModel, scenario: Scenario) -> ActiveSet:
    """Scenario held at its pre-curtailment output; ``w = min(w_hat, xi)`` stays a member for every cap."""
    return _constant_set("precap", u, np.clip(scenario.w_hat, u.W_l, u.W_u))


def normalize_binaries(u: UncertaintyModel, xi, sc: Scenario, tol: float = TIGHT_TOL):
    """Binary values consistent with the continuous part of ``sc``.

    Where both deviations vanish the selector is set to 0, which keeps
    ``dev_down = 0`` among the tight rows.  The cap is marked binding only
    when it actually cuts the output (``w_hat > w``).
    """
    xi = np.broadcast_to(np.asarray(xi, float), u.shape)
    zc = np.where(sc.dev_down > tol, 1.0, 0.0)
    zc = np.where(sc.dev_up > tol, 0.0, zc)
    z = np.where(sc.w_hat > sc.w + tol, 0.0, 1.0)
    return z, zc


def identify_active(u: UncertaintyModel, xi, scenario: Scenario,
                    priority: Sequence[str] = DEFAULT_PRIORITY, reduce: bool = True,
                    tol: float = TIGHT_TOL) -> ActiveSet:
    """Full-rank equality subsystem reproducing ``scenario`` at ``xi``.

    Tight rows are first stripped of redundant ones (tested in reverse
    priority, so higher-priority rows survive ties), then picked greedily by
    priority into a basis.  If the tight rows do not reach full rank, inactive
    rows are appended in canonical order as long as the face stays nonempty.
    """
    xi = np.broadcast_to(np.asarray(xi, float), u.shape)
    z, zc = normalize_binaries(u, xi, scenario, tol)
    rs = ddu_rows(u, z, zc)
    q = rs.rhs(xi)
    point = scenario.u
    resid = rs.Q @ point - q
    scale = 1.0 + np.abs(q)
    viol = np.where(rs.eq, np.abs(resid), resid) / scale
    if viol.max() > 1e-5:
        k = int(np.argmax(viol))
        raise InvariantViolation(f"scenario violates {rs.ids[k]} by {resid[k]:.3g}")
    tight = [k for k in range(len(rs)) if rs.eq[k] or abs(resid[k]) <= tol * scale[k]]

    rank_of = {fam: r for r, fam in enumerate(priority)}
    by_priority = sorted(tight, key=lambda k: (rank_of[rs.families[k]], k))
    if reduce:
        kept = remove_redundant(rs.Q, q, rs.eq, candidates=tight, order=list(reversed(by_priority)))
        by_priority = [k for k in by_priority if k in kept]

    dim = 4 * u.size
    chosen: list[int] = []
    for k in by_priority:
        if _rank(rs.Q[chosen + [k]]) > len(chosen):
            chosen.append(k)
        if len(chosen) == dim:
            break

    if len(chosen) < dim:
        ineq = ~rs.eq
        for k in range(len(rs)):
            if k in chosen or rs.eq[k]:
                continue
            trial = chosen + [k]
            if _rank(rs.Q[trial]) == len(chosen):
                continue
            A_eq = np.vstack([rs.Q[trial], rs.Q[rs.eq]])
            b_eq = np.concatenate([q[trial], q[rs.eq]])
            if lp_feasible(A_ub=rs.Q[ineq], b_ub=q[ineq] + 1e-9 * scale[ineq], A_eq=A_eq, b_eq=b_eq,
                           n=dim):
                chosen = trial
                if len(chosen) == dim:
                    break
        if len(chosen) < dim:
            raise DegeneracyUnresolved(f"only {len(chosen)} of {dim} independent rows found")

    chosen.sort()
    Qs, Fs, cs = rs.Q[chosen], rs.F[chosen], rs.c[chosen]
    try:
        inv = np.linalg.inv(Qs)
    except np.linalg.LinAlgError as exc:
        raise SingularBasis("active-set basis is singular") from exc
    rec = inv @ (Fs @ xi.ravel() + cs)
    if np.any((rs.Q @ rec - q)[~rs.eq] > 1e-6 * scale[~rs.eq]):
        raise DegeneracyUnresolved("completed basis leaves the polytope")
    n = u.size
    M = inv @ Fs
    m0 = inv @ cs
    info = {"dual_completed": len([k for k in chosen if k not in tight]),
            "tight": len(tight), "reproduction_error": float(np.max(np.abs(rec[:n] - point[:n])))}
    return ActiveSet(kind="active", rows=tuple(rs.ids[k] for k in chosen), Q=Qs, F=Fs, c=cs,
                     z_min=z.ravel(), z_comp=zc.ravel(), A=M[:n], b=m0[:n],
                     A_hat=M[n:2 * n], b_hat=m0[n:2 * n], origin_xi=xi.copy(),
                     priority=priority[0], info=info)


@dataclass(frozen=True)
class RecoveredScenario:
    w_tilde: np.ndarray
    w_hat: np.ndarray
    w: np.ndarray


def recover_scenario(a: ActiveSet, u: UncertaintyModel, xi_new) -> RecoveredScenario:
    """Evaluate the map at ``xi_new`` and clamp the output to ``[W^l, xi_new]``."""
    xi_new = np.broadcast_to(np.asarray(xi_new, float), u.shape)
    if a.kind == "active" and _rank(a.Q) < a.Q.shape[0]:
        raise SingularBasis("active-set basis is singular")
    wt = (a.A @ xi_new.ravel() + a.b).reshape(u.shape)
    wh = (a.A_hat @ xi_new.ravel() + a.b_hat).reshape(u.shape)
    w = np.minimum(np.maximum(wt, u.W_l), xi_new)
    return RecoveredScenario(wt, wh, w)


def map_bounds(a: ActiveSet, xi_lo, xi_hi):
    """Interval bounds of ``w_tilde = A xi + b`` over the box ``[xi_lo, xi_hi]``."""
    lo, hi = np.ravel(xi_lo), np.ravel(xi_hi)
    Ap, An = np.maximum(a.A, 0), np.minimum(a.A, 0)
    return a.b + Ap @ lo + An @ hi, a.b + Ap @ hi + An @ lo


def map_validity_excess(u: UncertaintyModel, a: ActiveSet, xi_lo, xi_hi) -> float:
    """Largest budget overrun of the clamped map over all caps in the box.

    A non-positive value means the clamped scenario is a member of the
    uncertainty set at every cap in ``[xi_lo, xi_hi]``.  Each budget row is
    checked with one small MILP that maximizes its normalized deviation.
    """
    if a.kind != "active" or not np.any(a.A):
        return 0.0 if a.kind != "active" else _constant_excess(u, a)
    W, T = u.shape
    n = u.size
    lo, hi = np.ravel(xi_lo).astype(float), np.ravel(xi_hi).astype(float)
    wt_lo, wt_hi = map_bounds(a, lo, hi)
    Wl, Wu, We, Wh = u.W_l.ravel(), u.W_u.ravel(), u.W_e.ravel(), u.W_h.ravel()
    worst = -np.inf
    rows = [("s", t, [j * T + t for j in range(W)], u.gamma_s) for t in range(T)]
    rows += [("t", j, [j * T + t for t in range(T)], u.gamma_t) for j in range(W)]
    for _, _, entries, gamma in rows:
        m = Model("map_validity")
        xi = m.add_vars(n, lb=lo, ub=hi, name="xi")
        usage = []
        for e in entries:
            wt = m.add_var(wt_lo[e], wt_hi[e], name=f"wt_{e}")
            m.add_eq([(wt, 1.0)] + [(int(xi[k]), -a.A[e, k]) for k in np.flatnonzero(a.A[e])], a.b[e])
            v = m.add_var(max(wt_lo[e], Wl[e]), max(wt_hi[e], Wl[e]), name=f"v_{e}")
            zl = m.add_var(binary=True, name=f"zl_{e}")
            big = max(wt_hi[e], Wu[e], hi[e]) - min(wt_lo[e], Wl[e], lo[e]) + 1.0
            # v = max(wt, W^l): zl = 1 selects W^l
            m.add_ge({v: 1, wt: -1}, 0.0)
            m.add_le({v: 1, wt: -1, zl: -big}, 0.0)
            m.add_le({v: 1, zl: big}, Wl[e] + big)
            w = m.add_var(Wl[e], Wu[e], name=f"w_{e}")
            zc = m.add_var(binary=True, name=f"zc_{e}")
            # w = min(v, xi); zc = 1 iff the cap binds, ties within tolerance count as binding
            x = int(xi[e])
            m.add_le({w: 1, v: -1}, 0.0)
            m.add_le({w: 1, x: -1}, 0.0)
            m.add_ge({w: 1, x: -1, zc: -big}, -big)
            m.add_ge({w: 1, v: -1, zc: big}, 0.0)
            m.add_ge({v: 1, x: -1, zc: -big}, -VALIDITY_TOL - big)
            m.add_le({v: 1, x: -1, zc: -big}, -VALIDITY_TOL)
            us = m.add_var(-3.0, 3.0, name=f"use_{e}")
            su, sd, s0 = (m.add_var(binary=True, name=f"{k}_{e}") for k in ("su", "sd", "s0"))
            m.add_eq({su: 1, sd: 1, s0: 1}, 1.0)
            m.add_le({us: 1, w: -1 / Wh[e], su: 3}, -We[e] / Wh[e] + 3)
            m.add_le({us: 1, w: 1 / Wh[e], sd: 3}, We[e] / Wh[e] + 3)
            m.add_le({sd: 1, zc: 1}, 1.0)
            m.add_le({us: 1, s0: 3}, 3.0)
            usage.append(us)
        m.set_objective({k: 1.0 for k in usage}, sense="max")
        res = solve(m)
        if not res.optimal:
            return np.inf
        worst = max(worst, res.objective - gamma)
    return float(worst)


def _constant_excess(u: UncertaintyModel, a: ActiveSet) -> float:
    """Budget overrun of a constant map; the clamp only lowers deviations above W^e
    and may raise them below, so the worst cap keeps every entry at its value."""
    b = np.clip(a.b.reshape(u.shape), u.W_l, u.W_u)
    use = np.abs(b - u.W_e) / u.W_h
    return float(max((use.sum(axis=0) - u.gamma_s).max(), (use.sum(axis=1) - u.gamma_t).max()))

"""Decision-dependent uncertainty set of curtailed renewable output.

For a curtailment cap ``xi`` the set contains every ``w = min(w_hat, xi)``
where ``w_hat = W^e + dev_up - dev_down`` deviates from the forecast by at
most the half-width ``W^h`` per entry, deviations point one way only, and
their normalized sums respect the spatial and temporal budgets.

Arrays indexed by (RG, period) have shape ``(N_w, T)`` and are flattened in
C order wherever a vector is needed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .case import DispatchCase
from .errors import SizeError
from .milp import Model, lp_feasible, solve

VERTEX_TOL = 1e-7
MAX_ENUM_ENTRIES = 8


@dataclass(frozen=True)
class UncertaintyModel:
    W_e: np.ndarray
    W_l: np.ndarray
    W_u: np.ndarray
    gamma_s: float
    gamma_t: float

    def __post_init__(self):
        for name in ("W_e", "W_l", "W_u"):
            arr = np.array(getattr(self, name), dtype=float, ndmin=2)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.W_h <= 0):
            raise ValueError("uncertainty half-width must be positive everywhere")
        if self.gamma_s < 0 or self.gamma_t < 0:
            raise ValueError("budgets must be nonnegative")

    @classmethod
    def from_case(cls, case: DispatchCase) -> "UncertaintyModel":
        return cls(case.W_e, case.W_l, case.W_u, case.budget_spatial, case.budget_temporal)

    @property
    def W_h(self) -> np.ndarray:
        return (self.W_u - self.W_l) / 2.0

    @property
    def big_m(self) -> np.ndarray:
        """Complementarity constant for the deviation selector."""
        return self.W_u

    @property
    def shape(self) -> tuple:
        return self.W_e.shape

    @property
    def size(self) -> int:
        return self.W_e.size


@dataclass(frozen=True)
class Scenario:
    w: np.ndarray
    w_hat: np.ndarray
    dev_up: np.ndarray
    dev_down: np.ndarray
    z_min: np.ndarray   # 1 = the cap does not bind
    z_comp: np.ndarray  # 1 = downward deviation selected

    @property
    def u(self) -> np.ndarray:
        """Stacked continuous point (w, w_hat, dev_up, dev_down)."""
        return np.concatenate([self.w.ravel(), self.w_hat.ravel(),
                               self.dev_up.ravel(), self.dev_down.ravel()])

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist()
                for k in ("w", "w_hat", "dev_up", "dev_down", "z_min", "z_comp")}

    def fingerprint(self, decimals: int = 6) -> str:
        import hashlib
        data = np.round(self.w.ravel(), decimals) + 0.0
        return hashlib.sha1(data.tobytes()).hexdigest()[:12]


@dataclass(frozen=True)
class DduVars:
    w: np.ndarray
    w_hat: np.ndarray
    dev_up: np.ndarray
    dev_down: np.ndarray
    z_min: np.ndarray
    z_comp: np.ndarray

    def scenario(self, res) -> Scenario:
        return Scenario(*(res.value(getattr(self, k)) for k in
                          ("w", "w_hat", "dev_up", "dev_down", "z_min", "z_comp")))


def build_ddu_constraints(model: Model, u: UncertaintyModel, xi) -> DduVars:
    """Add the mixed-integer linear description of the set at cap ``xi``."""
    xi = np.broadcast_to(np.asarray(xi, dtype=float), u.shape)
    if np.any(xi < u.W_l - 1e-9) or np.any(xi > u.W_u + 1e-9):
        raise ValueError("curtailment cap must lie within the forecast band")
    W, T = u.shape
    Wl, Wu, We, Wh, M = u.W_l, u.W_u, u.W_e, u.W_h, u.big_m
    w = model.add_vars((W, T), lb=np.minimum(Wl, xi), ub=Wu, name="w")
    w_hat = model.add_vars((W, T), lb=Wl, ub=Wu, name="what")
    up = model.add_vars((W, T), lb=0.0, ub=Wh, name="wup")
    dn = model.add_vars((W, T), lb=0.0, ub=Wh, name="wdn")
    z = model.add_vars((W, T), binary=True, name="z")
    zc = model.add_vars((W, T), binary=True, name="zc")
    for j in range(W):
        for t in range(T):
            a, b, c, d = int(w[j, t]), int(w_hat[j, t]), int(up[j, t]), int(dn[j, t])
            zz, zh = int(z[j, t]), int(zc[j, t])
            model.add_le({a: 1, b: -1}, 0.0, name=f"min_le_{j}_{t}")
            model.add_le({a: 1}, xi[j, t], name=f"cap_{j}_{t}")
            model.add_le({b: 1, a: -1, zz: Wu[j, t] - Wl[j, t]}, Wu[j, t] - Wl[j, t],
                         name=f"min_ge_{j}_{t}")
            model.add_le({a: -1, zz: -(xi[j, t] - Wl[j, t])}, -xi[j, t], name=f"cap_ge_{j}_{t}")
            model.add_eq({b: 1, c: -1, d: 1}, We[j, t], name=f"def_{j}_{t}")
            model.add_le({d: 1, zh: -M[j, t]}, 0.0, name=f"comp_dn_{j}_{t}")
            model.add_le({c: 1, zh: M[j, t]}, M[j, t], name=f"comp_up_{j}_{t}")
    for t in range(T):
        terms = {}
        for j in range(W):
            terms[int(up[j, t])] = 1.0 / Wh[j, t]
            terms[int(dn[j, t])] = 1.0 / Wh[j, t]
        model.add_le(terms, u.gamma_s, name=f"bud_s_{t}")
    for j in range(W):
        terms = {}
        for t in range(T):
            terms[int(up[j, t])] = 1.0 / Wh[j, t]
            terms[int(dn[j, t])] = 1.0 / Wh[j, t]
        model.add_le(terms, u.gamma_t, name=f"bud_t_{j}")
    return DduVars(w, w_hat, up, dn, z, zc)


def membership(u: UncertaintyModel, xi, w_point, tol: float = VERTEX_TOL) -> bool:
    """Whether ``w_point`` belongs to the set at cap ``xi`` (one small MILP)."""
    w_point = np.asarray(w_point, dtype=float).reshape(u.shape)
    xi = np.broadcast_to(np.asarray(xi, dtype=float), u.shape)
    if np.any(w_point > xi + tol) or np.any(w_point < np.minimum(u.W_l, xi) - tol):
        return False
    model = Model("membership")
    v = build_ddu_constraints(model, u, xi)
    for idx, val in zip(v.w.ravel(), w_point.ravel()):
        model.set_bounds(int(idx), lb=max(model.lb[idx], val - tol), ub=min(model.ub[idx], val + tol))
    model.set_objective({})
    return solve(model).optimal


def _branch_interval(u: UncertaintyModel, xi, zmin, zcomp):
    """Deviation interval for one entry under a fixed binary assignment.

    The free deviation ``d`` points up when ``zcomp == 0`` and down otherwise.
    """
    We, Wh = u.W_e, u.W_h
    lo, hi = np.zeros(u.shape), Wh.copy()
    up = zcomp == 0
    # cap not binding: w_hat <= xi
    lo = np.where((zmin == 1) & ~up, np.maximum(lo, We - xi), lo)
    hi = np.where((zmin == 1) & up, np.minimum(hi, xi - We), hi)
    # cap binding: w_hat >= xi
    lo = np.where((zmin == 0) & up, np.maximum(lo, xi - We), lo)
    hi = np.where((zmin == 0) & ~up, np.minimum(hi, We - xi), hi)
    return lo, hi


def _polytope_vertices(A, b, n):
    """All vertices of {x in R^n : A x <= b} by enumerating n-row bases."""
    m = A.shape[0]
    found = []
    scale = max(1.0, float(np.max(np.abs(b))))
    combos = np.array(list(itertools.combinations(range(m), n)), dtype=int)
    for chunk in np.array_split(combos, max(1, len(combos) // 20000 + 1)):
        if not len(chunk):
            continue
        As = A[chunk]
        bs = b[chunk]
        det = np.linalg.det(As)
        ok = np.abs(det) > 1e-12
        if not ok.any():
            continue
        xs = np.linalg.solve(As[ok], bs[ok][..., None])[..., 0]
        feas = np.all(xs @ A.T <= b + 1e-9 * scale, axis=1)
        found.extend(xs[feas])
    return found


def enumerate_vertex_scenarios(u: UncertaintyModel, xi) -> list[Scenario]:
    """Vertex scenarios of every binary-assignment polytope, deduplicated.

    Each assignment of the two binaries per entry fixes a polytope in the
    continuous variables; its vertices are found by basis enumeration on the
    reduced inequality description (one deviation variable per entry).
    """
    if u.size > MAX_ENUM_ENTRIES:
        raise SizeError(f"vertex enumeration limited to N_w*T <= {MAX_ENUM_ENTRIES}, got {u.size}")
    xi = np.broadcast_to(np.asarray(xi, dtype=float), u.shape)
    W, T = u.shape
    n = u.size
    Wh = u.W_h
    # budget rows on the flattened deviation vector
    bud_A, bud_b = [], []
    for t in range(T):
        row = np.zeros((W, T))
        row[:, t] = 1.0 / Wh[:, t]
        bud_A.append(row.ravel())
        bud_b.append(u.gamma_s)
    for j in range(W):
        row = np.zeros((W, T))
        row[j, :] = 1.0 / Wh[j, :]
        bud_A.append(row.ravel())
        bud_b.append(u.gamma_t)
    bud_A, bud_b = np.array(bud_A), np.array(bud_b)

    out: list[Scenario] = []
    seen = set()
    for bits in itertools.product((0, 1), repeat=2 * n):
        zmin = np.array(bits[:n]).reshape(W, T)
        zcomp = np.array(bits[n:]).reshape(W, T)
        lo, hi = _branch_interval(u, xi, zmin, zcomp)
        if np.any(lo > hi + 1e-12):
            continue
        A = np.vstack([np.eye(n), -np.eye(n), bud_A])
        b = np.concatenate([hi.ravel(), -lo.ravel(), bud_b])
        for d in _polytope_vertices(A, b, n):
            d = np.clip(d.reshape(W, T), lo, hi)
            sign = np.where(zcomp == 0, 1.0, -1.0)
            w_hat = u.W_e + sign * d
            w = np.where(zmin == 1, w_hat, xi)
            dev_up = np.where(zcomp == 0, d, 0.0)
            dev_dn = np.where(zcomp == 1, d, 0.0)
            key = tuple(np.round(np.concatenate([w.ravel(), w_hat.ravel()]) / VERTEX_TOL).astype(np.int64))
            if key in seen:
                continue
            seen.add(key)
            out.append(Scenario(w, w_hat, dev_up, dev_dn, zmin.astype(float), zcomp.astype(float)))
    return out


def enumerate_vertices(u: UncertaintyModel, xi) -> list[np.ndarray]:
    """Extreme points of the convex hull of the set at ``xi``, as ``(N_w, T)`` arrays.

    A convex function (such as the re-dispatch cost) attains its maximum over
    the set at one of these points.
    """
    pts, seen = [], set()
    for sc in enumerate_vertex_scenarios(u, xi):
        key = tuple(np.round(sc.w.ravel() / VERTEX_TOL).astype(np.int64))
        if key not in seen:
            seen.add(key)
            pts.append(sc.w)
    flat = np.array([p.ravel() for p in pts])
    return [p for k, p in enumerate(pts) if not _in_hull_of_others(flat, k)]


def _in_hull_of_others(points: np.ndarray, k: int) -> bool:
    others = np.delete(points, k, axis=0)
    if len(others) == 0:
        return False
    A_eq = np.vstack([others.T, np.ones(len(others))])
    b_eq = np.append(points[k], 1.0)
    return lp_feasible(A_eq=A_eq, b_eq=b_eq, lb=np.zeros(len(others)),
                       ub=np.full(len(others), np.inf), n=len(others))

"""Backend-neutral LP/MILP model builder and solver front end.

Models are assembled row by row with integer variable handles; column and
row order is exactly the order of the builder calls, so identical call
sequences produce identical matrices.  Two backends are available:

* ``highs`` -- the HiGHS solver through ``highspy`` (default)
* ``scipy`` -- :func:`scipy.optimize.milp`, which also wraps HiGHS but does
  not expose feasibility tolerances

The backend is picked by the ``backend`` argument of :func:`solve`, falling
back to the ``DDU_SOLVER`` environment variable.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .errors import BackendError

INF = math.inf

FEAS_TOL = 1e-6
DEFAULT_MIP_GAP = 1e-8

LE, GE, EQ = "<=", ">=", "=="

Terms = Union[Mapping[int, float], Iterable[tuple], tuple]


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    TIME_LIMIT = "TimeLimit"
    ERROR = "Error"


@dataclass
class SolveResult:
    status: Status
    objective: Optional[float] = None
    x: Optional[np.ndarray] = None
    mip_gap: Optional[float] = None

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def value(self, idx):
        """Primal value(s) for a variable handle or an array of handles."""
        if self.x is None:
            raise BackendError(f"no primal values (status {self.status.value})")
        return self.x[np.asarray(idx)]


@dataclass
class Violation:
    kind: str  # "row", "bound" or "integrality"
    index: int
    name: str
    slack: float


class Model:
    """Linear model over continuous and binary variables."""

    def __init__(self, name: str = "model"):
        self.name = name
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._binary: list[bool] = []
        self._var_names: list[str] = []
        self._row_idx: list[np.ndarray] = []
        self._row_val: list[np.ndarray] = []
        self._row_lb: list[float] = []
        self._row_ub: list[float] = []
        self._row_names: list[str] = []
        self._obj: dict[int, float] = {}
        self.obj_constant = 0.0
        self.sense = "min"

    # -- variables ---------------------------------------------------------

    @property
    def num_vars(self) -> int:
        return len(self._lb)

    @property
    def num_rows(self) -> int:
        return len(self._row_lb)

    def add_var(self, lb=0.0, ub=INF, binary=False, name=None) -> int:
        if binary:
            lb, ub = max(0.0, lb), min(1.0, ub)
        if lb > ub:
            raise ValueError(f"variable {name!r}: lb {lb} > ub {ub}")
        idx = len(self._lb)
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._binary.append(bool(binary))
        self._var_names.append(name or f"x{idx}")
        return idx

    def add_vars(self, shape, lb=0.0, ub=INF, binary=False, name="x") -> np.ndarray:
        """Add a block of variables; bounds may be scalars or arrays of ``shape``."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        lb = np.broadcast_to(np.asarray(lb, dtype=float), shape)
        ub = np.broadcast_to(np.asarray(ub, dtype=float), shape)
        out = np.empty(shape, dtype=int)
        for pos in np.ndindex(*shape):
            label = name + "".join(f"_{k}" for k in pos)
            out[pos] = self.add_var(lb[pos], ub[pos], binary, label)
        return out

    def set_bounds(self, var: int, lb=None, ub=None):
        if lb is not None:
            self._lb[var] = float(lb)
        if ub is not None:
            self._ub[var] = float(ub)

    def fix(self, var: int, value: float):
        self._lb[var] = self._ub[var] = float(value)

    @property
    def lb(self) -> np.ndarray:
        return np.array(self._lb)

    @property
    def ub(self) -> np.ndarray:
        return np.array(self._ub)

    @property
    def binary(self) -> np.ndarray:
        return np.array(self._binary, dtype=bool)

    @property
    def var_names(self) -> list[str]:
        return list(self._var_names)

    # -- rows --------------------------------------------------------------

    def add_row(self, terms: Terms, sense: str, rhs: float, name=None) -> int:
        idx, val = _normalize_terms(terms)
        if idx.size and (idx.min() < 0 or idx.max() >= self.num_vars):
            raise ValueError(f"row {name!r} references an undeclared variable")
        rhs = float(rhs)
        if sense == LE:
            lo, hi = -INF, rhs
        elif sense == GE:
            lo, hi = rhs, INF
        elif sense == EQ:
            lo = hi = rhs
        else:
            raise ValueError(f"unknown sense {sense!r}")
        r = len(self._row_lb)
        self._row_idx.append(idx)
        self._row_val.append(val)
        self._row_lb.append(lo)
        self._row_ub.append(hi)
        self._row_names.append(name or f"r{r}")
        return r

    def add_le(self, terms, rhs, name=None) -> int:
        return self.add_row(terms, LE, rhs, name)

    def add_ge(self, terms, rhs, name=None) -> int:
        return self.add_row(terms, GE, rhs, name)

    def add_eq(self, terms, rhs, name=None) -> int:
        return self.add_row(terms, EQ, rhs, name)

    @property
    def row_names(self) -> list[str]:
        return list(self._row_names)

    def row_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self._row_lb), np.array(self._row_ub)

    def matrix(self) -> sp.csr_matrix:
        if not self._row_idx:
            return sp.csr_matrix((0, self.num_vars))
        indptr = np.cumsum([0] + [len(i) for i in self._row_idx])
        indices = np.concatenate(self._row_idx) if indptr[-1] else np.zeros(0, int)
        data = np.concatenate(self._row_val) if indptr[-1] else np.zeros(0)
        return sp.csr_matrix((data, indices, indptr), shape=(self.num_rows, self.num_vars))

    # -- objective ---------------------------------------------------------

    def set_objective(self, terms: Terms, sense: str = "min", constant: float = 0.0):
        if sense not in ("min", "max"):
            raise ValueError(f"objective sense must be 'min' or 'max', got {sense!r}")
        idx, val = _normalize_terms(terms)
        self._obj = dict(zip(idx.tolist(), val.tolist()))
        self.sense = sense
        self.obj_constant = float(constant)

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.num_vars)
        for k, v in self._obj.items():
            c[k] = v
        return c

    def evaluate_objective(self, x: np.ndarray) -> float:
        return float(self.objective_vector() @ x + self.obj_constant)

    # -- export ------------------------------------------------------------

    def write_lp(self, path):
        """Write the model in CPLEX LP text format."""
        with open(path, "w") as fh:
            fh.write(to_lp_string(self))


def _normalize_terms(terms) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(terms, tuple) and len(terms) == 2 and isinstance(terms[0], np.ndarray):
        idx = np.asarray(terms[0], dtype=int).ravel()
        val = np.asarray(terms[1], dtype=float).ravel()
        if idx.shape != val.shape:
            raise ValueError("index and coefficient arrays differ in length")
        pairs = zip(idx.tolist(), val.tolist())
    elif isinstance(terms, Mapping):
        pairs = terms.items()
    else:
        pairs = terms
    acc: dict[int, float] = {}
    for k, v in pairs:
        k = int(k)
        acc[k] = acc.get(k, 0.0) + float(v)
    acc = {k: v for k, v in acc.items() if v != 0.0}
    keys = sorted(acc)
    return np.array(keys, dtype=int), np.array([acc[k] for k in keys], dtype=float)


def _fmt(v: float) -> str:
    return repr(float(v))


def to_lp_string(model: Model) -> str:
    names = model.var_names
    lines = [f"\\ {model.name}", "Minimize" if model.sense == "min" else "Maximize"]
    c = model.objective_vector()
    obj = " ".join(f"{'+' if c[k] >= 0 else '-'} {_fmt(abs(c[k]))} {names[k]}"
                   for k in np.flatnonzero(c))
    lines.append(f" obj: {obj or '0 ' + names[0] if names else '0'}")
    lines.append("Subject To")
    lo, hi = model.row_bounds()
    A = model.matrix()
    for r in range(model.num_rows):
        row = A.getrow(r)
        expr = " ".join(f"{'+' if v >= 0 else '-'} {_fmt(abs(v))} {names[k]}"
                        for k, v in zip(row.indices, row.data)) or f"0 {names[0]}"
        rn = model.row_names[r]
        if lo[r] == hi[r]:
            lines.append(f" {rn}: {expr} = {_fmt(hi[r])}")
        else:
            if hi[r] < INF:
                lines.append(f" {rn}: {expr} <= {_fmt(hi[r])}")
            if lo[r] > -INF:
                tag = f"{rn}_lo" if hi[r] < INF else rn
                lines.append(f" {tag}: {expr} >= {_fmt(lo[r])}")
    lines.append("Bounds")
    for k, (l, u) in enumerate(zip(model.lb, model.ub)):
        ls = "-inf" if l == -INF else _fmt(l)
        us = "+inf" if u == INF else _fmt(u)
        lines.append(f" {ls} <= {names[k]} <= {us}")
    bins = [names[k] for k in np.flatnonzero(model.binary)]
    if bins:
        lines.append("Binaries")
        lines.append(" " + " ".join(bins))
    lines.append("End")
    return "\n".join(lines) + "\n"


# -- solving ---------------------------------------------------------------

def default_backend() -> str:
    return os.environ.get("DDU_SOLVER", "highs").lower()


def default_mip_gap() -> float:
    """Relative MIP gap, overridable through ``DDU_MIP_GAP``."""
    return float(os.environ.get("DDU_MIP_GAP", DEFAULT_MIP_GAP))


def solve(model: Model, time_limit: Optional[float] = None,
          mip_gap: Optional[float] = None, backend: Optional[str] = None) -> SolveResult:
    """Solve ``model`` and return status, objective and primal values.

    The reported objective is recomputed as ``c @ x + constant`` from the
    returned primal point.
    """
    backend = backend or default_backend()
    mip_gap = default_mip_gap() if mip_gap is None else mip_gap
    if backend == "highs":
        res = _solve_highs(model, time_limit, mip_gap)
    elif backend == "scipy":
        res = _solve_scipy(model, time_limit, mip_gap)
    else:
        raise BackendError(f"unknown solver backend {backend!r}")
    if res.x is not None:
        x = res.x.copy()
        bins = model.binary
        x[bins] = np.round(x[bins])
        res.x = x
        res.objective = model.evaluate_objective(x)
    return res


def _solve_highs(model, time_limit, mip_gap) -> SolveResult:
    try:
        import highspy
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise BackendError("highspy is not installed; set DDU_SOLVER=scipy") from exc

    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("random_seed", 0)
    h.setOptionValue("threads", 1)
    h.setOptionValue("primal_feasibility_tolerance", 1e-9)
    h.setOptionValue("dual_feasibility_tolerance", 1e-9)
    h.setOptionValue("mip_feasibility_tolerance", 1e-9)
    h.setOptionValue("mip_rel_gap", float(mip_gap))
    h.setOptionValue("mip_abs_gap", 1e-9)
    if time_limit is not None:
        h.setOptionValue("time_limit", float(time_limit))

    inf = highspy.kHighsInf
    lp = highspy.HighsLp()
    n, m = model.num_vars, model.num_rows
    lp.num_col_ = n
    lp.num_row_ = m
    sign = 1.0 if model.sense == "min" else -1.0
    lp.col_cost_ = sign * model.objective_vector()
    lp.offset_ = sign * model.obj_constant
    lp.col_lower_ = np.where(np.isinf(model.lb), -inf, model.lb)
    lp.col_upper_ = np.where(np.isinf(model.ub), inf, model.ub)
    lo, hi = model.row_bounds()
    lp.row_lower_ = np.where(np.isinf(lo), -inf, lo)
    lp.row_upper_ = np.where(np.isinf(hi), inf, hi)
    A = model.matrix().tocsc()
    lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    lp.a_matrix_.start_ = A.indptr.astype(np.int32)
    lp.a_matrix_.index_ = A.indices.astype(np.int32)
    lp.a_matrix_.value_ = A.data.astype(float)
    is_mip = bool(model.binary.any())
    if is_mip:
        lp.integrality_ = [highspy.HighsVarType.kInteger if b else highspy.HighsVarType.kContinuous
                           for b in model.binary]
    h.passModel(lp)
    h.run()
    st = h.getModelStatus()
    S = highspy.HighsModelStatus
    if st == S.kUnboundedOrInfeasible:
        h.setOptionValue("presolve", "off")
        h.run()
        st = h.getModelStatus()
    info = h.getInfo()
    gap = float(info.mip_gap) if is_mip else 0.0
    if st == S.kOptimal:
        x = np.array(h.getSolution().col_value, dtype=float)
        return SolveResult(Status.OPTIMAL, None, x, gap)
    if st in (S.kInfeasible, S.kUnboundedOrInfeasible):
        return SolveResult(Status.INFEASIBLE)
    if st == S.kUnbounded:
        return SolveResult(Status.UNBOUNDED)
    if st == S.kTimeLimit:
        return SolveResult(Status.TIME_LIMIT, mip_gap=gap)
    return SolveResult(Status.ERROR)


def _solve_scipy(model, time_limit, mip_gap) -> SolveResult:
    from scipy.optimize import Bounds, LinearConstraint, milp

    sign = 1.0 if model.sense == "min" else -1.0
    c = sign * model.objective_vector()
    cons = []
    if model.num_rows:
        lo, hi = model.row_bounds()
        cons.append(LinearConstraint(model.matrix(), lo, hi))
    options = {"disp": False, "mip_rel_gap": float(mip_gap)}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    try:
        out = milp(c, integrality=model.binary.astype(int), bounds=Bounds(model.lb, model.ub),
                   constraints=cons, options=options)
    except Exception as exc:  # noqa: BLE001 - surface any backend crash uniformly
        raise BackendError(f"scipy.milp failed: {exc}") from exc
    if out.status == 0:
        return SolveResult(Status.OPTIMAL, None, np.asarray(out.x, dtype=float),
                           getattr(out, "mip_gap", 0.0))
    return SolveResult({1: Status.TIME_LIMIT, 2: Status.INFEASIBLE,
                        3: Status.UNBOUNDED}.get(out.status, Status.ERROR))


def check_feasible(model: Model, point: Sequence[float], tol: float = FEAS_TOL) -> list[Violation]:
    """List every row, bound or integrality requirement violated beyond ``tol``."""
    x = np.asarray(point, dtype=float)
    if x.shape != (model.num_vars,):
        raise ValueError(f"point has {x.size} entries, model has {model.num_vars} variables")
    out: list[Violation] = []
    ax = model.matrix() @ x if model.num_rows else np.zeros(0)
    lo, hi = model.row_bounds()
    names = model.row_names
    for r in range(model.num_rows):
        slack = min(hi[r] - ax[r], ax[r] - lo[r])
        if slack < -tol:
            out.append(Violation("row", r, names[r], float(slack)))
    vnames = model.var_names
    for k, (l, u) in enumerate(zip(model.lb, model.ub)):
        slack = min(u - x[k], x[k] - l)
        if slack < -tol:
            out.append(Violation("bound", k, vnames[k], float(slack)))
    for k in np.flatnonzero(model.binary):
        frac = abs(x[k] - round(x[k]))
        if frac > tol:
            out.append(Violation("integrality", int(k), vnames[k], -float(frac)))
    return out


def lp_feasible(A_ub=None, b_ub=None, A_eq=None, b_eq=None, lb=None, ub=None,
                n=None, backend=None) -> bool:
    """Whether a dense-array polyhedron is nonempty (convenience for small checks)."""
    model = Model("feas")
    if n is None:
        n = (A_ub if A_ub is not None else A_eq).shape[1]
    lb = np.full(n, -INF) if lb is None else lb
    ub = np.full(n, INF) if ub is None else ub
    x = model.add_vars(n, lb, ub, name="v")
    for A, b, sense in ((A_ub, b_ub, LE), (A_eq, b_eq, EQ)):
        if A is None:
            continue
        for row, rhs in zip(np.atleast_2d(A), np.atleast_1d(b)):
            model.add_row((x, row), sense, rhs)
    model.set_objective({})
    res = solve(model, backend=backend)
    if res.status is Status.ERROR:
        raise BackendError("feasibility LP failed")
    return res.optimal

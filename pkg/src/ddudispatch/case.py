"""Dispatch case data model, JSON case files, and DC distribution factors."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import ParseError, SingularityError, ValidationError

DEFAULT_EPSILON = 1e-4
DEFAULT_BIG_M = 1e5
DEFAULT_BREAKPOINTS = 11

_NUM = {"type": "number"}
_NUM_LIST = {"type": "array", "items": _NUM, "minItems": 1}
_ID = {"type": ["string", "integer"]}

CASE_SCHEMA = {
    "type": "object",
    "required": ["horizon", "thermal_units", "renewables", "loads", "commitment", "budgets"],
    "properties": {
        "name": {"type": "string"},
        "horizon": {"type": "integer", "minimum": 1},
        "thermal_units": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "bus", "p_min", "p_max", "reserve_max_up", "reserve_max_down",
                             "ramp_up", "ramp_down", "cost_energy", "cost_reserve_up",
                             "cost_reserve_down", "cost_redispatch_up", "cost_redispatch_down"],
                "properties": {"id": _ID, "bus": _ID, **{k: _NUM for k in (
                    "p_min", "p_max", "reserve_max_up", "reserve_max_down", "ramp_up",
                    "ramp_down", "cost_energy", "cost_reserve_up", "cost_reserve_down",
                    "cost_redispatch_up", "cost_redispatch_down")}},
            },
        },
        "renewables": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "bus", "forecast", "band_low", "band_high",
                             "cost_precurtail", "cost_recurtail"],
                "properties": {"id": _ID, "bus": _ID, "forecast": _NUM_LIST,
                               "band_low": _NUM_LIST, "band_high": _NUM_LIST,
                               "cost_precurtail": _NUM, "cost_recurtail": _NUM},
            },
        },
        "loads": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "bus", "demand"],
                "properties": {"id": _ID, "bus": _ID, "demand": _NUM_LIST},
            },
        },
        "network": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["lines", "slack_bus"],
                    "properties": {
                        "buses": {"type": "array", "items": _ID},
                        "slack_bus": _ID,
                        "lines": {
                            "type": "array",
                            "items": {
                                "type": "object",
                                "required": ["from", "to", "reactance", "capacity"],
                                "properties": {"id": _ID, "from": _ID, "to": _ID,
                                               "reactance": _NUM, "capacity": _NUM},
                            },
                        },
                        "ptdf": {"type": "array", "items": {"type": "array", "items": _NUM}},
                    },
                },
            ]
        },
        "commitment": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
        "budgets": {
            "type": "object",
            "required": ["spatial", "temporal"],
            "properties": {"spatial": _NUM, "temporal": _NUM},
        },
        "solver": {
            "type": "object",
            "properties": {"epsilon": _NUM, "big_m": _NUM, "breakpoints": {"type": "integer"}},
        },
    },
}


@dataclass(frozen=True)
class ThermalUnit:
    id: str
    bus: str
    p_min: float
    p_max: float
    reserve_max_up: float
    reserve_max_down: float
    ramp_up: float
    ramp_down: float
    cost_energy: float
    cost_reserve_up: float
    cost_reserve_down: float
    cost_redispatch_up: float
    cost_redispatch_down: float


@dataclass(frozen=True)
class RenewableGenerator:
    id: str
    bus: str
    forecast: tuple
    band_low: tuple
    band_high: tuple
    cost_precurtail: float
    cost_recurtail: float


@dataclass(frozen=True)
class Load:
    id: str
    bus: str
    demand: tuple


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: str
    to_bus: str
    reactance: float
    capacity: float


@dataclass(frozen=True, eq=False)
class NetworkModel:
    buses: tuple
    lines: tuple
    slack_bus: str
    ptdf: np.ndarray  # (lines, buses)

    def __eq__(self, other):
        if not isinstance(other, NetworkModel):
            return NotImplemented
        return (self.buses == other.buses and self.lines == other.lines
                and self.slack_bus == other.slack_bus and np.array_equal(self.ptdf, other.ptdf))

    __hash__ = None

    @cached_property
    def bus_index(self) -> dict:
        return {b: k for k, b in enumerate(self.buses)}

    @property
    def capacity(self) -> np.ndarray:
        return np.array([ln.capacity for ln in self.lines], dtype=float)

    def factors(self, buses: Sequence[str]) -> np.ndarray:
        """PTDF columns for the given injection buses, shape (lines, len(buses))."""
        if not len(buses):
            return np.zeros((len(self.lines), 0))
        return self.ptdf[:, [self.bus_index[b] for b in buses]]


@dataclass(frozen=True, eq=False)
class DispatchCase:
    """Immutable dispatch instance with a fixed unit commitment."""

    horizon: int
    units: tuple
    renewables: tuple
    loads: tuple
    network: Optional[NetworkModel]
    commitment: np.ndarray  # (N_g, T) of 0/1
    budget_spatial: float
    budget_temporal: float
    epsilon: float = DEFAULT_EPSILON
    big_m: float = DEFAULT_BIG_M
    breakpoints: int = DEFAULT_BREAKPOINTS
    name: str = "case"

    def __post_init__(self):
        arr = np.array(self.commitment, dtype=int).reshape(len(self.units), self.horizon)
        arr.setflags(write=False)
        object.__setattr__(self, "commitment", arr)

    def __eq__(self, other):
        if not isinstance(other, DispatchCase):
            return NotImplemented
        return case_to_dict(self) == case_to_dict(other)

    __hash__ = None

    # sizes
    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def n_rgs(self) -> int:
        return len(self.renewables)

    @property
    def T(self) -> int:
        return self.horizon

    @property
    def copper_plate(self) -> bool:
        return self.network is None

    # per-unit arrays, shape (N_g,)
    def _unit_attr(self, name) -> np.ndarray:
        return np.array([getattr(u, name) for u in self.units], dtype=float)

    @cached_property
    def p_min(self): return self._unit_attr("p_min")

    @cached_property
    def p_max(self): return self._unit_attr("p_max")

    @cached_property
    def reserve_max_up(self): return self._unit_attr("reserve_max_up")

    @cached_property
    def reserve_max_down(self): return self._unit_attr("reserve_max_down")

    @cached_property
    def ramp_up(self): return self._unit_attr("ramp_up")

    @cached_property
    def ramp_down(self): return self._unit_attr("ramp_down")

    @cached_property
    def alpha(self): return self._unit_attr("cost_energy")

    @cached_property
    def beta_up(self): return self._unit_attr("cost_reserve_up")

    @cached_property
    def beta_down(self): return self._unit_attr("cost_reserve_down")

    @cached_property
    def d_up(self): return self._unit_attr("cost_redispatch_up")

    @cached_property
    def d_down(self): return self._unit_attr("cost_redispatch_down")

    # renewable arrays, shape (N_w, T)
    def _rg_series(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.renewables], dtype=float).reshape(
            self.n_rgs, self.horizon)

    @cached_property
    def W_e(self): return self._rg_series("forecast")

    @cached_property
    def W_l(self): return self._rg_series("band_low")

    @cached_property
    def W_u(self): return self._rg_series("band_high")

    @cached_property
    def W_h(self): return (self.W_u - self.W_l) / 2.0

    @cached_property
    def gamma(self): return np.array([r.cost_precurtail for r in self.renewables], dtype=float)

    @cached_property
    def gamma_hat(self): return np.array([r.cost_recurtail for r in self.renewables], dtype=float)

    # loads
    @cached_property
    def demand(self) -> np.ndarray:
        """Demand matrix (N_l, T)."""
        return np.array([ld.demand for ld in self.loads], dtype=float).reshape(
            len(self.loads), self.horizon)

    @cached_property
    def total_demand(self) -> np.ndarray:
        return self.demand.sum(axis=0)

    # network factors (lines x element)
    @cached_property
    def ptdf_units(self):
        return self.network.factors([u.bus for u in self.units]) if self.network else None

    @cached_property
    def ptdf_rgs(self):
        return self.network.factors([r.bus for r in self.renewables]) if self.network else None

    @cached_property
    def ptdf_loads(self):
        return self.network.factors([ld.bus for ld in self.loads]) if self.network else None

    def replace(self, **changes) -> "DispatchCase":
        """Copy with some top-level fields changed (re-validated)."""
        data = case_to_dict(self)
        for key, value in changes.items():
            if key in ("budget_spatial", "budget_temporal"):
                data["budgets"]["spatial" if key == "budget_spatial" else "temporal"] = value
            elif key in ("epsilon", "big_m", "breakpoints"):
                data["solver"][key] = value
            else:
                raise KeyError(f"replace() does not support {key!r}")
        return case_from_dict(data)


# -- distribution factors ----------------------------------------------------

def compute_ptdf(buses: Sequence, lines: Sequence[Line], slack_bus) -> np.ndarray:
    """DC power transfer distribution factors, shape (lines, buses).

    Entry ``[k, b]`` is the flow on line ``k`` (positive from ``from_bus`` to
    ``to_bus``) for 1 MW injected at bus ``b`` and withdrawn at the slack bus.
    """
    buses = list(buses)
    index = {b: i for i, b in enumerate(buses)}
    nb, nl = len(buses), len(lines)
    if slack_bus not in index:
        raise SingularityError(f"slack bus {slack_bus!r} is not a network bus")
    x = np.array([ln.reactance for ln in lines], dtype=float)
    if np.any(x <= 0):
        raise SingularityError("line reactances must be positive")
    f = np.array([index[ln.from_bus] for ln in lines], dtype=int)
    t = np.array([index[ln.to_bus] for ln in lines], dtype=int)
    adj = sp.coo_matrix((np.ones(nl), (f, t)), shape=(nb, nb))
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp != 1:
        raise SingularityError(f"network is disconnected ({n_comp} islands)")

    # branch-bus incidence and nodal susceptance matrix
    A = np.zeros((nl, nb))
    A[np.arange(nl), f] = 1.0
    A[np.arange(nl), t] = -1.0
    Bf = A / x[:, None]
    Bbus = A.T @ Bf
    keep = [i for i in range(nb) if i != index[slack_bus]]
    ptdf = np.zeros((nl, nb))
    if keep:
        try:
            ptdf[:, keep] = np.linalg.solve(Bbus[np.ix_(keep, keep)], Bf[:, keep].T).T
        except np.linalg.LinAlgError as exc:
            raise SingularityError("reduced susceptance matrix is singular") from exc
    return ptdf


# -- (de)serialization -------------------------------------------------------

def _as_id(v) -> str:
    return str(v)


def _series(values, T, what):
    vals = tuple(float(v) for v in values)
    if len(vals) != T:
        raise ValidationError(f"{what} has {len(vals)} periods, expected {T}", field=what)
    return vals


def case_from_dict(data: dict) -> DispatchCase:
    """Build and validate a case from its JSON object form."""
    try:
        jsonschema.validate(data, CASE_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ParseError(f"case does not match schema at '{path}': {exc.message}") from exc

    T = int(data["horizon"])
    units = tuple(
        ThermalUnit(
            id=_as_id(u["id"]), bus=_as_id(u["bus"]),
            **{k: float(u[k]) for k in ThermalUnit.__dataclass_fields__ if k not in ("id", "bus")})
        for u in data["thermal_units"])
    rgs = tuple(
        RenewableGenerator(
            id=_as_id(r["id"]), bus=_as_id(r["bus"]),
            forecast=_series(r["forecast"], T, f"renewables[{k}].forecast"),
            band_low=_series(r["band_low"], T, f"renewables[{k}].band_low"),
            band_high=_series(r["band_high"], T, f"renewables[{k}].band_high"),
            cost_precurtail=float(r["cost_precurtail"]),
            cost_recurtail=float(r["cost_recurtail"]))
        for k, r in enumerate(data["renewables"]))
    loads = tuple(
        Load(id=_as_id(ld["id"]), bus=_as_id(ld["bus"]),
             demand=_series(ld["demand"], T, f"loads[{k}].demand"))
        for k, ld in enumerate(data["loads"]))

    net = data.get("network")
    network = None
    if net is not None:
        lines = tuple(
            Line(id=_as_id(ln.get("id", k)), from_bus=_as_id(ln["from"]), to_bus=_as_id(ln["to"]),
                 reactance=float(ln["reactance"]), capacity=float(ln["capacity"]))
            for k, ln in enumerate(net["lines"]))
        if "buses" in net:
            buses = tuple(_as_id(b) for b in net["buses"])
        else:
            seen = []
            for ln in lines:
                for b in (ln.from_bus, ln.to_bus):
                    if b not in seen:
                        seen.append(b)
            buses = tuple(seen)
        slack = _as_id(net["slack_bus"])
        _check_network(buses, lines, slack)
        if net.get("ptdf") is not None:
            ptdf = np.array(net["ptdf"], dtype=float)
            if ptdf.shape != (len(lines), len(buses)):
                raise ValidationError(
                    f"network.ptdf has shape {ptdf.shape}, expected {(len(lines), len(buses))}",
                    field="network.ptdf")
        else:
            ptdf = compute_ptdf(buses, lines, slack)
        ptdf.setflags(write=False)
        network = NetworkModel(buses=buses, lines=lines, slack_bus=slack, ptdf=ptdf)

    commitment = np.array(data["commitment"], dtype=int)
    solver = data.get("solver", {})
    case = DispatchCase(
        horizon=T, units=units, renewables=rgs, loads=loads, network=network,
        commitment=_check_commitment(commitment, len(units), T),
        budget_spatial=float(data["budgets"]["spatial"]),
        budget_temporal=float(data["budgets"]["temporal"]),
        epsilon=float(solver.get("epsilon", DEFAULT_EPSILON)),
        big_m=float(solver.get("big_m", DEFAULT_BIG_M)),
        breakpoints=int(solver.get("breakpoints", DEFAULT_BREAKPOINTS)),
        name=str(data.get("name", "case")),
    )
    validate_case(case)
    return case


def _check_network(buses, lines, slack):
    if len(set(buses)) != len(buses):
        raise ValidationError("network.buses contains duplicates", field="network.buses")
    known = set(buses)
    if slack not in known:
        raise ValidationError(f"slack bus {slack!r} is not a network bus", field="network.slack_bus")
    for k, ln in enumerate(lines):
        for end in (ln.from_bus, ln.to_bus):
            if end not in known:
                raise ValidationError(f"line {ln.id} references unknown bus {end!r}",
                                      field="network.lines", index=k)
        if ln.capacity <= 0:
            raise ValidationError(f"line {ln.id} capacity must be positive",
                                  field="network.lines.capacity", index=k)
        if ln.reactance <= 0:
            raise ValidationError(f"line {ln.id} reactance must be positive",
                                  field="network.lines.reactance", index=k)


def _check_commitment(commitment, n_units, T):
    if commitment.shape != (n_units, T):
        raise ValidationError(f"commitment has shape {commitment.shape}, expected {(n_units, T)}",
                              field="commitment")
    bad = np.argwhere((commitment != 0) & (commitment != 1))
    if bad.size:
        raise ValidationError(f"commitment entry {tuple(bad[0])} is not 0/1",
                              field="commitment", index=tuple(int(v) for v in bad[0]))
    return commitment


def validate_case(case: DispatchCase) -> None:
    """Raise :class:`ValidationError` naming the first violated invariant."""
    for i, u in enumerate(case.units):
        if not 0 <= u.p_min <= u.p_max:
            raise ValidationError(f"unit {u.id}: need 0 <= p_min <= p_max", "thermal_units.p_min", i)
        if u.reserve_max_up < 0 or u.reserve_max_down < 0:
            raise ValidationError(f"unit {u.id}: reserve limits must be >= 0",
                                  "thermal_units.reserve_max", i)
        if u.ramp_up <= 0 or u.ramp_down <= 0:
            raise ValidationError(f"unit {u.id}: ramp limits must be > 0", "thermal_units.ramp", i)
        for name in ("cost_energy", "cost_reserve_up", "cost_reserve_down",
                     "cost_redispatch_up", "cost_redispatch_down"):
            if getattr(u, name) < 0:
                raise ValidationError(f"unit {u.id}: {name} must be >= 0", f"thermal_units.{name}", i)
    for j, r in enumerate(case.renewables):
        for t in range(case.T):
            lo, fc, hi = r.band_low[t], r.forecast[t], r.band_high[t]
            if not lo <= fc <= hi:
                raise ValidationError(
                    f"renewable {r.id} period {t}: need band_low <= forecast <= band_high",
                    "renewables.forecast", (j, t))
            if abs(fc - 0.5 * (lo + hi)) > 1e-9 * max(1.0, abs(fc)):
                raise ValidationError(
                    f"renewable {r.id} period {t}: forecast {fc} is not the band midpoint "
                    f"{0.5 * (lo + hi)}", "renewables.forecast", (j, t))
            if hi - lo <= 0:
                raise ValidationError(
                    f"renewable {r.id} period {t}: band has zero width", "renewables.band_high", (j, t))
            if lo < 0:
                raise ValidationError(f"renewable {r.id} period {t}: band_low must be >= 0",
                                      "renewables.band_low", (j, t))
        if r.cost_precurtail <= 0 or r.cost_recurtail <= 0:
            raise ValidationError(f"renewable {r.id}: curtailment costs must be > 0",
                                  "renewables.cost", j)
    for k, ld in enumerate(case.loads):
        if any(v < 0 for v in ld.demand):
            raise ValidationError(f"load {ld.id}: demand must be >= 0", "loads.demand", k)
    if not 0 <= case.budget_spatial <= case.n_rgs:
        raise ValidationError(f"spatial budget must lie in [0, {case.n_rgs}]", "budgets.spatial")
    if not 0 <= case.budget_temporal <= case.T:
        raise ValidationError(f"temporal budget must lie in [0, {case.T}]", "budgets.temporal")
    if case.epsilon <= 0:
        raise ValidationError("solver.epsilon must be > 0", "solver.epsilon")
    if case.big_m <= 0:
        raise ValidationError("solver.big_m must be > 0", "solver.big_m")
    if case.breakpoints < 2:
        raise ValidationError("solver.breakpoints must be >= 2", "solver.breakpoints")
    if case.network is not None:
        known = set(case.network.buses)
        for group, items in (("thermal_units", case.units), ("renewables", case.renewables),
                             ("loads", case.loads)):
            for k, item in enumerate(items):
                if item.bus not in known:
                    raise ValidationError(f"{group}[{k}] ({item.id}) is at unknown bus {item.bus!r}",
                                          f"{group}.bus", k)


def case_to_dict(case: DispatchCase) -> dict:
    """JSON-ready representation; ``case_from_dict(case_to_dict(c)) == c``."""
    data = {
        "name": case.name,
        "horizon": case.horizon,
        "thermal_units": [
            {k: getattr(u, k) for k in ThermalUnit.__dataclass_fields__} for u in case.units],
        "renewables": [
            {"id": r.id, "bus": r.bus, "forecast": list(r.forecast), "band_low": list(r.band_low),
             "band_high": list(r.band_high), "cost_precurtail": r.cost_precurtail,
             "cost_recurtail": r.cost_recurtail} for r in case.renewables],
        "loads": [{"id": ld.id, "bus": ld.bus, "demand": list(ld.demand)} for ld in case.loads],
        "network": None,
        "commitment": case.commitment.tolist(),
        "budgets": {"spatial": case.budget_spatial, "temporal": case.budget_temporal},
        "solver": {"epsilon": case.epsilon, "big_m": case.big_m, "breakpoints": case.breakpoints},
    }
    if case.network is not None:
        net = case.network
        data["network"] = {
            "buses": list(net.buses),
            "slack_bus": net.slack_bus,
            "lines": [{"id": ln.id, "from": ln.from_bus, "to": ln.to_bus,
                       "reactance": ln.reactance, "capacity": ln.capacity} for ln in net.lines],
            "ptdf": net.ptdf.tolist(),
        }
    return data


def load_case(path) -> DispatchCase:
    """Read and validate a JSON case file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be an object")
    return case_from_dict(data)


def save_case(case: DispatchCase, path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=2))

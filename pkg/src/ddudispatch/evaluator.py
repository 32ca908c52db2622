"""Out-of-sample evaluation and model comparisons.

Model 1 optimizes the curtailment caps; Model 2 freezes them at the upper
band, which turns the uncertainty set into an ordinary decision-independent
one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .accg import DispatchSolution, run_accg
from .case import DispatchCase, case_from_dict, case_to_dict
from .errors import InfeasibleRecourse, MaxIterations
from .nccg import run_nccg
from .predispatch import FirstStageDecision
from .recourse import build_recourse_system, recourse_slack, solve_recourse

SAMPLE_COLUMNS = ("sample", "feasible", "cost", "curtailment", "slack")


@dataclass
class SampleRecord:
    sample: int
    feasible: bool
    cost: float          # exact re-dispatch cost, nan if infeasible
    curtailment: float   # real-time curtailment in MW, nan if infeasible
    slack: float         # MW of violation, 0 if feasible


@dataclass
class EvaluationReport:
    samples: int
    infeasible: int
    expected_cost: float           # mean over feasible samples
    expected_cost_all: float       # feasible costs summed, divided by all samples
    worst_curtailment: float       # MW, over feasible samples
    stddev: float
    seed: int
    records: list = field(default_factory=list, repr=False)

    def to_dict(self, with_records: bool = False) -> dict:
        out = {"samples": self.samples, "infeasible": self.infeasible,
               "expected_cost": self.expected_cost, "expected_cost_all": self.expected_cost_all,
               "worst_curtailment": self.worst_curtailment, "stddev": self.stddev,
               "seed": self.seed}
        if with_records:
            out["records"] = [r.__dict__ for r in self.records]
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SAMPLE_COLUMNS)
            writer.writeheader()
            for r in self.records:
                writer.writerow(r.__dict__)


def _decision(solution: Union[DispatchSolution, FirstStageDecision]) -> FirstStageDecision:
    return solution.decision if isinstance(solution, DispatchSolution) else solution


def draw_outputs(case: DispatchCase, xi, stddev: float, samples: int, seed: int) -> np.ndarray:
    """Renewable outputs ``min(max(sample, 0), xi)`` with samples ~ Normal(W^e, stddev^2)."""
    rng = np.random.default_rng(seed)
    raw = rng.normal(case.W_e, stddev, size=(samples, *case.W_e.shape))
    return np.minimum(np.maximum(raw, 0.0), np.asarray(xi, float))


def evaluate_out_of_sample(case: DispatchCase, solution, stddev: float, samples: int = 500,
                           seed: int = 0) -> EvaluationReport:
    """Re-dispatch a fixed first stage against sampled renewable outputs."""
    dec = _decision(solution)
    system = build_recourse_system(case)
    outputs = draw_outputs(case, dec.xi, stddev, samples, seed)
    records = []
    for k, w in enumerate(outputs):
        try:
            rec = solve_recourse(case, dec, w, system)
            records.append(SampleRecord(k, True, rec.exact_cost, float(np.sum(rec.recurtail)), 0.0))
        except InfeasibleRecourse:
            records.append(SampleRecord(k, False, float("nan"), float("nan"),
                                        recourse_slack(case, dec, w)))
    costs = np.array([r.cost for r in records if r.feasible])
    curt = np.array([r.curtailment for r in records if r.feasible])
    return EvaluationReport(
        samples=samples, infeasible=samples - len(costs),
        expected_cost=float(costs.mean()) if costs.size else float("nan"),
        expected_cost_all=float(costs.sum() / samples) if samples else float("nan"),
        worst_curtailment=float(curt.max()) if curt.size else float("nan"),
        stddev=stddev, seed=seed, records=records)


def run_model2(case: DispatchCase, **kwargs) -> DispatchSolution:
    """Solve with the curtailment caps frozen at the upper band."""
    return run_accg(case, fix_xi=case.W_u, **kwargs)


COST_COLUMNS = ("generation", "reserve", "precurtailment", "worst_case_recourse", "total")


def compare_models(case: DispatchCase, model1: Optional[DispatchSolution] = None,
                   model2: Optional[DispatchSolution] = None) -> list[dict]:
    """Cost breakdown of both models, one row per model."""
    model1 = model1 or run_accg(case)
    model2 = model2 or run_model2(case)
    rows = []
    for label, sol in (("Model-1", model1), ("Model-2", model2)):
        row = {"model": label, **{k: sol.costs[k] for k in COST_COLUMNS},
               "objective": sol.objective, "iterations": sol.iterations}
        row["xi"] = " ".join(f"{v:.3f}" for v in sol.decision.xi.ravel())
        rows.append(row)
    return rows


def compare_out_of_sample(case: DispatchCase, model1: DispatchSolution, model2: DispatchSolution,
                          stddev: float, samples: int = 500, seed: int = 0) -> list[dict]:
    """Paired out-of-sample reports on the same seed."""
    rows = []
    for label, sol in (("Model-1", model1), ("Model-2", model2)):
        rep = evaluate_out_of_sample(case, sol, stddev, samples, seed)
        rows.append({"model": label, "infeasible": f"{rep.infeasible}/{rep.samples}",
                     "expected_cost": rep.expected_cost,
                     "worst_curtailment": rep.worst_curtailment})
    return rows


def with_band(case: DispatchCase, low: float, high: float) -> DispatchCase:
    """Copy whose band is ``[low W^e, high W^e]`` (forecast kept at the midpoint)."""
    if not low < high:
        raise ValueError("band factors must satisfy low < high")
    data = case_to_dict(case)
    for r in data["renewables"]:
        fc = np.asarray(r["forecast"], float)
        lo, hi = low * fc, high * fc
        r["band_low"], r["band_high"] = lo.tolist(), hi.tolist()
        r["forecast"] = ((lo + hi) / 2).tolist()
    return case_from_dict(data)


def uncertainty_sweep(case: DispatchCase, bands: Iterable[Sequence[float]],
                      max_outer: int = 200) -> list[dict]:
    """Iteration counts of both algorithms as the band widens."""
    rows = []
    for low, high in bands:
        c = with_band(case, low, high)
        a = run_accg(c)
        try:
            n = run_nccg(c, max_outer=max_outer)
            n_iter, n_obj = n.iterations, n.objective
        except MaxIterations:
            n_iter, n_obj = f">{max_outer}", float("nan")
        rows.append({"band": f"[{low:.2f},{high:.2f}]W^e", "accg_iterations": a.iterations,
                     "nccg_iterations": n_iter, "accg_objective": a.objective,
                     "nccg_objective": n_obj})
    return rows


def write_table(rows: list[dict], path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)

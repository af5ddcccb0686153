"""Task losses and evaluation metrics.

The training signal for stochastic-smoothing DFL is the realized value of
the schedule, "expost-plus": the realized energy bill priced at the
flow-dependent ex-post tariff, plus the occupancy-weighted quadratic
comfort penalty, plus the mean squared gap between realized and planned
power cost.  The differentiable baselines train on the cheaper
"hierarchical" loss: a price-weighted absolute power-tracking error at the
building and zone level.

Ex-post price per step (tolerance 1e-6 kW on peak coincidence), evaluated
on the first matching case:

    lambda_imp              if p_exp = 0 and p_imp != peak
    lambda_exp              if p_imp = 0 and p_exp != peak
    lambda_imp + lambda_d   if p_imp = peak
    lambda_exp + lambda_d   if p_exp = peak

With both flows zero and a nonzero peak the first case applies, so idle
steps price at the import tariff (their contribution is zero anyway).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .plant import PlantTrace
from .scenarios import BuildingScenario
from .schedule import ScheduleSolution

__all__ = [
    "EvalRecord",
    "expost_price",
    "expost_prices",
    "schedule_prices",
    "expost_cost",
    "expost_plus",
    "hierarchical_loss",
    "evaluate",
    "eval_record_csv",
]

PEAK_TOL = 1e-6


class FlowInvariantError(ValueError):
    """Simultaneous nonzero import and export in a trace."""


def _price_cases(p_imp, p_exp, p_peak, lam_i, lam_e, lam_d):
    if p_imp > PEAK_TOL and p_exp > PEAK_TOL:
        raise FlowInvariantError(f"both import ({p_imp}) and export ({p_exp}) nonzero")
    if p_exp <= PEAK_TOL and abs(p_imp - p_peak) > PEAK_TOL:
        return lam_i
    if p_imp <= PEAK_TOL and abs(p_exp - p_peak) > PEAK_TOL:
        return lam_e
    if abs(p_imp - p_peak) <= PEAK_TOL:
        return lam_i + lam_d
    return lam_e + lam_d


def expost_price(trace: PlantTrace, scenario: BuildingScenario, t: int) -> float:
    """Realized price at step t: tariff of the active flow direction, plus
    the demand charge when that flow sets the daily peak."""
    return _price_cases(
        float(trace.p_imp[t]), float(trace.p_exp[t]), trace.p_peak,
        float(scenario.lambda_imp[t]), float(scenario.lambda_exp[t]),
        scenario.lambda_demand,
    )


def expost_prices(trace: PlantTrace, scenario: BuildingScenario) -> np.ndarray:
    return np.array([expost_price(trace, scenario, t) for t in range(scenario.horizon)])


def schedule_prices(schedule: ScheduleSolution, scenario: BuildingScenario) -> np.ndarray:
    """Ex-ante counterpart: same case analysis on the planned flows.

    Interior-point solutions carry harmless simultaneous-flow dust, so the
    overlapping part of import/export is netted out before pricing.
    """
    overlap = np.minimum(schedule.p_imp, schedule.p_exp)
    p_imp = np.maximum(schedule.p_imp - overlap, 0.0)
    p_exp = np.maximum(schedule.p_exp - overlap, 0.0)
    # peak from the netted flows so coincidence survives solver dust
    peak = float((p_imp + p_exp).max()) if p_imp.size else 0.0
    return np.array([
        _price_cases(
            float(p_imp[t]), float(p_exp[t]), peak,
            float(scenario.lambda_imp[t]), float(scenario.lambda_exp[t]),
            scenario.lambda_demand,
        )
        for t in range(scenario.horizon)
    ])


def expost_cost(trace: PlantTrace, scenario: BuildingScenario) -> float:
    """Realized HVAC bill: total power priced ex post (demand charge enters
    through the peak-step price)."""
    lam = expost_prices(trace, scenario)
    return float((trace.p_hvac_total * lam * scenario.dt_hours).sum())


def comfort_penalty(tau: np.ndarray, scenario: BuildingScenario) -> float:
    """Occupancy-weighted squared deviation from target, end-of-step temps."""
    dev = tau[1:] - scenario.t_target
    return float((scenario.occupancy * dev * dev).sum())


def expost_plus(trace: PlantTrace, schedule: ScheduleSolution, scenario: BuildingScenario) -> float:
    """Realized decision value: ex-post bill + comfort penalty + power-cost MSE."""
    T = scenario.horizon
    if trace.p_hvac.shape[0] != T or schedule.p_hvac.shape[0] != T:
        raise ValueError("trace/schedule horizon mismatch")
    lam_check = expost_prices(trace, scenario)
    lam_plan = schedule_prices(schedule, scenario)
    realized = trace.p_hvac_total * lam_check
    planned = schedule.p_hvac_total * lam_plan
    penalty = comfort_penalty(trace.tau, scenario)
    mse_cost = float(((realized - planned) ** 2).mean())
    return float(realized.sum() + penalty + mse_cost)


def hierarchical_loss(schedule: ScheduleSolution, trace: PlantTrace, scenario: BuildingScenario) -> float:
    """Price-weighted absolute power error, building plus zonal mean."""
    T = scenario.horizon
    if trace.p_hvac.shape[0] != T or schedule.p_hvac.shape[0] != T:
        raise ValueError("trace/schedule horizon mismatch")
    lam = expost_prices(trace, scenario)
    total_err = np.abs(schedule.p_hvac_total - trace.p_hvac_total)
    zonal_err = np.abs(schedule.p_hvac - trace.p_hvac).mean(axis=1)
    return float((lam / T * (total_err + zonal_err)).sum())


def hierarchical_loss_grad(schedule: ScheduleSolution, trace: PlantTrace, scenario: BuildingScenario) -> np.ndarray:
    """Subgradient of the hierarchical loss w.r.t. the zonal schedule powers,
    shape (T, Z); the trace is treated as data."""
    T, Z = schedule.p_hvac.shape
    lam = expost_prices(trace, scenario)
    s_tot = np.sign(schedule.p_hvac_total - trace.p_hvac_total)
    s_zone = np.sign(schedule.p_hvac - trace.p_hvac)
    return (lam / T)[:, None] * (s_tot[:, None] + s_zone / Z)


@dataclass
class EvalRecord:
    """Mean scenario metrics plus training bookkeeping (one table column)."""

    expost_plus: float
    hierarchical_loss: float
    mae: float
    mse: float
    error_mean: float
    error_std: float
    expected_cost: float
    expost_cost: float
    cost_error: float
    temp_penalty: float
    epochs: int = 0
    train_time_s: float = 0.0
    validation_time_s: float = 0.0
    test_time_s: float = 0.0
    per_scenario: list = field(default_factory=list, repr=False)


EVAL_FIELDS = [
    "expost_plus", "hierarchical_loss", "mae", "mse", "error_mean", "error_std",
    "expected_cost", "expost_cost", "cost_error", "temp_penalty",
    "epochs", "train_time_s", "validation_time_s", "test_time_s",
]

# wall-time columns are excluded from byte-for-byte reproducibility checks
VOLATILE_EVAL_FIELDS = {"train_time_s", "validation_time_s", "test_time_s"}


def evaluate(
    model,
    plant,
    scenarios: list[BuildingScenario],
    simulate_fn=None,
    mode: str = "penalty",
    gap_tol: float = 1e-4,
    node_limit: int = 50_000,
    relax_binaries: bool = False,
    epochs: int = 0,
    train_time_s: float = 0.0,
    validation_time_s: float = 0.0,
    test_time_s: float = 0.0,
) -> EvalRecord:
    """Solve + simulate every scenario and aggregate the score table.

    Dollar metrics are scenario means; the power-error statistics pool every
    step of every scenario.  ``expected_cost`` is the planned bill (demand
    charge + net energy), ``expost_cost`` the realized one, and
    ``cost_error = expost - expected``.
    """
    from .plant import simulate as _simulate
    from .schedule import solve_schedule

    sim = simulate_fn or _simulate
    rows = []
    err_pool = []
    for idx, scenario in enumerate(scenarios):
        schedule = solve_schedule(
            model, scenario, mode=mode, gap_tol=gap_tol,
            node_limit=node_limit, relax_binaries=relax_binaries,
        )
        if schedule.status == "infeasible":
            raise RuntimeError(f"scenario {idx}: schedule infeasible")
        trace = sim(plant, scenario, schedule.setpoints)
        lam = expost_prices(trace, scenario)
        row = {
            "scenario": idx,
            "expost_plus": expost_plus(trace, schedule, scenario),
            "hierarchical_loss": hierarchical_loss(schedule, trace, scenario),
            "expected_cost": schedule.energy_cost,
            "expost_cost": expost_cost(trace, scenario),
            "temp_penalty": comfort_penalty(trace.tau, scenario),
        }
        row["cost_error"] = row["expost_cost"] - row["expected_cost"]
        rows.append(row)
        err_pool.append(schedule.p_hvac_total - trace.p_hvac_total)
    err = np.concatenate(err_pool)
    mean = lambda k: float(np.mean([r[k] for r in rows]))
    return EvalRecord(
        expost_plus=mean("expost_plus"),
        hierarchical_loss=mean("hierarchical_loss"),
        mae=float(np.abs(err).mean()),
        mse=float((err ** 2).mean()),
        error_mean=float(err.mean()),
        error_std=float(err.std()),
        expected_cost=mean("expected_cost"),
        expost_cost=mean("expost_cost"),
        cost_error=mean("cost_error"),
        temp_penalty=mean("temp_penalty"),
        epochs=epochs,
        train_time_s=train_time_s,
        validation_time_s=validation_time_s,
        test_time_s=test_time_s,
        per_scenario=rows,
    )


def eval_record_csv(record: EvalRecord) -> str:
    """Header + one row, field order fixed by EVAL_FIELDS."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(EVAL_FIELDS)
    w.writerow([
        record.epochs if f == "epochs" else repr(float(getattr(record, f)))
        for f in EVAL_FIELDS
    ])
    return buf.getvalue()

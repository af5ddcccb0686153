"""Solve one day-ahead schedule and decode the result.

Thin orchestration over encode -> solve -> unpack that every consumer
(training loops, evaluation, CLI) shares.  The decoded
:class:`ScheduleSolution` keeps the raw solver output and the instance so
sensitivity code can reuse them without re-solving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import MiqpInstance, build_miqp
from .scenarios import BuildingScenario
from .solver import MiqpSolution, QpSolution, solve_miqp, solve_qp
from .thermal import ThermalModel

__all__ = ["ScheduleSolution", "solve_schedule"]


@dataclass
class ScheduleSolution:
    """Optimal day-ahead plan in physical quantities."""

    tau: np.ndarray  # (T+1, Z) planned indoor temperatures
    p_heat: np.ndarray  # (T, Z) kW electric
    p_cool: np.ndarray
    p_hvac: np.ndarray
    p_imp: np.ndarray  # (T,)
    p_exp: np.ndarray
    p_peak: float
    objective: float
    energy_cost: float  # demand charge + net energy cost, no comfort terms
    gap: float
    node_count: int
    status: str
    instance: MiqpInstance | None = None
    raw: QpSolution | MiqpSolution | None = None

    @property
    def setpoints(self) -> np.ndarray:
        """Per-step thermostat targets: the planned end-of-step temperatures."""
        return self.tau[1:]

    @property
    def p_hvac_total(self) -> np.ndarray:
        return self.p_hvac.sum(axis=1)


def _decode(instance: MiqpInstance, x: np.ndarray, scenario: BuildingScenario,
            objective: float, gap: float, nodes: int, status: str, raw) -> ScheduleSolution:
    meta = instance.meta
    p_imp = x[meta.pi_ids]
    p_exp = x[meta.pe_ids]
    energy = float(
        scenario.lambda_demand * x[meta.pd_id]
        + ((scenario.lambda_imp * p_imp - scenario.lambda_exp * p_exp) * scenario.dt_hours).sum()
    )
    return ScheduleSolution(
        tau=x[meta.tau_ids],
        p_heat=x[meta.ph_ids],
        p_cool=x[meta.pc_ids],
        p_hvac=x[meta.phvac_ids],
        p_imp=p_imp,
        p_exp=p_exp,
        p_peak=float(x[meta.pd_id]),
        objective=float(objective),
        energy_cost=energy,
        gap=float(gap),
        node_count=nodes,
        status=status,
        instance=instance,
        raw=raw,
    )


def solve_schedule(
    model: ThermalModel,
    scenario: BuildingScenario,
    mode: str = "penalty",
    tighten_ambient: bool = True,
    relax_binaries: bool = False,
    gap_tol: float = 1e-4,
    node_limit: int = 50_000,
) -> ScheduleSolution:
    """Build and solve the schedule problem for one scenario.

    ``relax_binaries=True`` keeps every sigma in [0, 1] and solves the
    continuous relaxation (the differentiable-baseline path); otherwise a
    branch-and-bound run certifies the binaries whenever any are free.
    """
    instance = build_miqp(model, scenario, mode=mode, tighten_ambient=tighten_ambient)
    if relax_binaries or instance.free_binaries().size == 0:
        sol = solve_qp(instance)
        if sol.status == "infeasible":
            return _decode(instance, sol.x, scenario, np.inf, np.inf, 1, "infeasible", sol)
        return _decode(instance, sol.x, scenario, sol.objective, 0.0, 1, sol.status, sol)
    ms = solve_miqp(instance, gap_tol=gap_tol, node_limit=node_limit)
    if ms.status == "infeasible":
        return _decode(instance, ms.x, scenario, np.inf, np.inf, ms.node_count, "infeasible", ms)
    return _decode(instance, ms.x, scenario, ms.objective, ms.gap, ms.node_count, ms.status, ms)

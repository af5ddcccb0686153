"""Ground-truth building emulator: thermostat-actuated multi-zone plant.

This is the map the scheduler is judged against.  It is deliberately richer
than anything the learned models can represent: zones exchange heat through
coupling conductances, heat pumps have ambient-dependent COP curves,
internal gains follow an occupancy profile, and actuation is a
bang-bang-with-deadband thermostat integrated at a sub-hourly step.  The
mismatch between this plant and the embedded thermal model is what
decision-focused training gets to exploit.

Contract: the plant is a black box.  ``simulate`` maps setpoints to a
:class:`PlantTrace` of realized electric powers and temperatures; nothing
here exposes derivatives and no caller may assume differentiability.

Thermostat (each zone, each substep):
  heat when tau < set - deadband, cool when tau > set + deadband, else off;
  when on, deliver the thermal power that would land the zone exactly on
  the setpoint at the end of the substep, saturated at capacity*COP.

Zone energy balance per substep (thermal kW):
  C_z dtau/dt = q_hvac + q_gain + sum_z' K[z,z'] (tau_z' - tau_z)
                + (tau_amb - tau_z) / R_z
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .scenarios import BuildingScenario, WeatherYear

__all__ = [
    "PlantModel",
    "PlantTrace",
    "default_plant",
    "simulate",
    "free_float",
    "generate_pretraining_dataset",
    "PretrainingDataset",
    "trace_to_csv",
    "plant_to_json",
    "plant_from_json",
]


@dataclass(frozen=True)
class PlantModel:
    """True plant parameters; see module docstring for the balance equation."""

    resistance: np.ndarray  # K/kW per zone
    capacitance: np.ndarray  # kWh/K per zone
    coupling: np.ndarray  # kW/K, symmetric, zero diagonal
    cop_heat_breaks: np.ndarray  # ambient grid (deg C), increasing
    cop_heat_values: np.ndarray
    cop_cool_breaks: np.ndarray
    cop_cool_values: np.ndarray
    gains_hourly: np.ndarray  # (24, Z) internal gains, thermal kW
    deadband: float = 0.3  # K
    substeps_per_hour: int = 6

    def __post_init__(self):
        for name in (
            "resistance", "capacitance", "coupling", "cop_heat_breaks",
            "cop_heat_values", "cop_cool_breaks", "cop_cool_values", "gains_hourly",
        ):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        z = self.resistance.shape[0]
        if self.coupling.shape != (z, z):
            raise ValueError("coupling matrix must be (Z, Z)")
        if not np.allclose(self.coupling, self.coupling.T):
            raise ValueError("coupling must be symmetric")
        if np.any(np.diag(self.coupling) != 0):
            raise ValueError("coupling diagonal must be zero")
        if np.any(self.coupling < 0):
            raise ValueError("coupling conductances must be nonnegative")
        if np.any(self.resistance <= 0) or np.any(self.capacitance <= 0):
            raise ValueError("R and C must be positive")
        if np.any(self.cop_heat_values <= 0) or np.any(self.cop_cool_values <= 0):
            raise ValueError("COP curves must be positive")
        if self.gains_hourly.shape != (24, z):
            raise ValueError("gains profile must be (24, Z)")
        if self.deadband <= 0:
            raise ValueError("deadband must be positive")
        if self.substeps_per_hour < 1:
            raise ValueError("need at least one substep per hour")

    @property
    def zone_count(self) -> int:
        return self.resistance.shape[0]

    def cop_heat(self, tau_amb: float) -> float:
        return float(np.interp(tau_amb, self.cop_heat_breaks, self.cop_heat_values))

    def cop_cool(self, tau_amb: float) -> float:
        return float(np.interp(tau_amb, self.cop_cool_breaks, self.cop_cool_values))


@dataclass(frozen=True)
class PlantTrace:
    """Realized operation: electric powers in kW, temperatures in deg C.

    ``p_hvac`` holds per-step average zonal electric power; ``tau`` is the
    (T+1, Z) temperature trajectory at step boundaries; ``p_imp``/``p_exp``
    are building-level grid flows (at most one nonzero per step) and
    ``p_peak`` their daily maximum.
    """

    p_hvac: np.ndarray
    tau: np.ndarray
    p_imp: np.ndarray
    p_exp: np.ndarray
    p_peak: float
    p_hvac_signed: np.ndarray | None = None  # +heating / -cooling electric kW
    substep_ledger: dict | None = None

    @property
    def p_hvac_total(self) -> np.ndarray:
        return self.p_hvac.sum(axis=1)


def default_plant(zones: int = 5) -> PlantModel:
    """Five-zone office floor (core + 4 perimeter) scaled to 511 m^2."""
    if zones == 5:
        resistance = np.array([6.0, 3.5, 4.5, 3.5, 4.5])
        capacitance = np.array([5.3, 4.0, 2.4, 4.0, 2.4])
        coupling = np.zeros((5, 5))
        for z in (1, 2, 3, 4):  # core touches every perimeter zone
            coupling[0, z] = coupling[z, 0] = 0.08
        for a, b in ((1, 2), (2, 3), (3, 4), (4, 1)):
            coupling[a, b] = coupling[b, a] = 0.04
        gains_day = np.array([1.2, 0.9, 0.55, 0.9, 0.55])
    else:
        resistance = np.full(zones, 4.0)
        capacitance = np.full(zones, 3.0)
        coupling = np.zeros((zones, zones))
        gains_day = np.full(zones, 0.8)
    hours = np.arange(24)
    occupied = ((hours >= 7) & (hours < 19)).astype(float)
    gains = np.outer(occupied, gains_day) + np.outer(1.0 - occupied, 0.1 * gains_day)
    return PlantModel(
        resistance=resistance,
        capacitance=capacitance,
        coupling=coupling,
        cop_heat_breaks=np.array([-20.0, -10.0, 0.0, 7.0, 15.0]),
        cop_heat_values=np.array([1.6, 2.0, 2.6, 3.1, 3.6]),
        cop_cool_breaks=np.array([15.0, 25.0, 30.0, 35.0, 45.0]),
        cop_cool_values=np.array([4.2, 3.6, 3.2, 2.8, 2.3]),
        gains_hourly=gains,
    )


def _substep(plant, tau, tau_amb, gains, setpoints, cap_heat, cap_cool, dt_sub, hvac_on=True):
    """Advance one substep; returns (new tau, zonal electric kW, ledger row)."""
    z_count = plant.zone_count
    q_leak = (tau_amb - tau) / plant.resistance
    q_coup = plant.coupling @ tau - plant.coupling.sum(axis=1) * tau
    q_passive = q_leak + q_coup + gains
    p_signed = np.zeros(z_count)
    q_hvac = np.zeros(z_count)
    if hvac_on:
        cop_h = plant.cop_heat(tau_amb)
        cop_c = plant.cop_cool(tau_amb)
        for z in range(z_count):
            err = setpoints[z] - tau[z]
            if err > plant.deadband:
                needed = plant.capacitance[z] * err / dt_sub - q_passive[z]
                q = min(max(needed, 0.0), cap_heat[z] * cop_h)
                q_hvac[z] = q
                p_signed[z] = q / cop_h
            elif err < -plant.deadband:
                needed = -(plant.capacitance[z] * err / dt_sub - q_passive[z])
                q = min(max(needed, 0.0), cap_cool[z] * cop_c)
                q_hvac[z] = -q
                p_signed[z] = -q / cop_c
    tau_new = tau + (q_hvac + q_passive) * dt_sub / plant.capacitance
    ledger = (tau.copy(), q_hvac.copy(), q_leak.copy(), q_coup.copy(), gains.copy())
    return tau_new, p_signed, ledger


def simulate(
    plant: PlantModel,
    scenario: BuildingScenario,
    setpoints: np.ndarray,
    keep_ledger: bool = False,
) -> PlantTrace:
    """Run the thermostat plant over one scenario day.

    ``setpoints`` is (T, Z): the target temperature each zone holds during
    step t.  Grid flows aggregate the zonal electric powers with the
    scenario's non-dispatchable load and on-site generation; import and
    export are split so at most one is nonzero.
    """
    setpoints = np.asarray(setpoints, dtype=float)
    T, Z = scenario.horizon, scenario.zones
    if setpoints.shape != (T, Z):
        raise ValueError(f"setpoints must be ({T}, {Z})")
    if np.any(setpoints < 5.0) or np.any(setpoints > 40.0):
        raise ValueError("setpoints must lie in [5, 40] C")
    n_sub = max(1, round(plant.substeps_per_hour * scenario.dt_hours))
    dt_sub = scenario.dt_hours / n_sub

    tau = scenario.tau0.copy()
    tau_hist = np.empty((T + 1, Z))
    tau_hist[0] = tau
    p_hvac = np.zeros((T, Z))
    p_signed = np.zeros((T, Z))
    ledger_rows = [] if keep_ledger else None
    for t in range(T):
        amb = float(scenario.tau_amb[t])
        acc = np.zeros(Z)
        acc_abs = np.zeros(Z)
        for k in range(n_sub):
            hour = int((t * scenario.dt_hours + k * dt_sub) % 24)
            gains = plant.gains_hourly[hour]
            tau, p_sub, row = _substep(
                plant, tau, amb, gains, setpoints[t],
                scenario.cap_heat, scenario.cap_cool, dt_sub,
            )
            acc += p_sub
            acc_abs += np.abs(p_sub)
            if keep_ledger:
                ledger_rows.append((t, k, row, tau.copy(), dt_sub))
        p_signed[t] = acc / n_sub
        p_hvac[t] = acc_abs / n_sub
        tau_hist[t + 1] = tau

    net = p_hvac.sum(axis=1) + scenario.p_nondispatch - scenario.p_generation
    p_imp = np.maximum(net, 0.0)
    p_exp = np.maximum(-net, 0.0)
    ledger = {"rows": ledger_rows} if keep_ledger else None
    return PlantTrace(
        p_hvac=p_hvac,
        tau=tau_hist,
        p_imp=p_imp,
        p_exp=p_exp,
        p_peak=float((p_imp + p_exp).max()) if T else 0.0,
        p_hvac_signed=p_signed,
        substep_ledger=ledger,
    )


def free_float(plant: PlantModel, scenario: BuildingScenario) -> np.ndarray:
    """Temperature trajectory with HVAC disabled; (T+1, Z)."""
    T, Z = scenario.horizon, scenario.zones
    n_sub = max(1, round(plant.substeps_per_hour * scenario.dt_hours))
    dt_sub = scenario.dt_hours / n_sub
    tau = scenario.tau0.copy()
    hist = np.empty((T + 1, Z))
    hist[0] = tau
    zeros = np.zeros(Z)
    for t in range(T):
        for k in range(n_sub):
            hour = int((t * scenario.dt_hours + k * dt_sub) % 24)
            tau, _, _ = _substep(
                plant, tau, float(scenario.tau_amb[t]), plant.gains_hourly[hour],
                zeros, zeros, zeros, dt_sub, hvac_on=False,
            )
        hist[t + 1] = tau
    return hist


# ---------------------------------------------------------------------------
# Pretraining data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PretrainingDataset:
    """(inputs, next-temps) pairs from a year of heuristic thermostat operation.

    ``inputs`` rows are ``[tau (Z), signed p_hvac (Z), tau_amb]`` matching
    the network convention; ``targets`` rows are the temperatures one step
    later.  ``day``/``step`` index back into the source year.
    """

    inputs: np.ndarray
    targets: np.ndarray
    day: np.ndarray
    step: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def shuffled(self, seed: int) -> "PretrainingDataset":
        order = np.random.default_rng(seed).permutation(len(self))
        return PretrainingDataset(
            self.inputs[order], self.targets[order], self.day[order], self.step[order]
        )


def heuristic_setpoints(scenario: BuildingScenario, setback: float = 19.0) -> np.ndarray:
    """Default operating policy: comfort target when occupied, night setback."""
    occupied = scenario.occupancy > scenario.occupancy.min() + 1e-12
    return np.where(occupied, scenario.t_target, setback)


def generate_pretraining_dataset(
    plant: PlantModel,
    year: WeatherYear,
    scenario_factory,
    setback: float = 19.0,
) -> PretrainingDataset:
    """Simulate every day of the year under the heuristic policy.

    ``scenario_factory(day_profile)`` builds the day's scenario (tariffs and
    comfort data come from there; only temperatures and powers are
    recorded).  One sample per (day, step).  Fully deterministic.
    """
    xs, ys, ds, ts = [], [], [], []
    for day in range(365):
        scenario = scenario_factory(year.profiles[day])
        trace = simulate(plant, scenario, heuristic_setpoints(scenario, setback))
        for t in range(scenario.horizon):
            xs.append(np.concatenate([trace.tau[t], trace.p_hvac_signed[t], [scenario.tau_amb[t]]]))
            ys.append(trace.tau[t + 1])
            ds.append(day)
            ts.append(t)
    return PretrainingDataset(
        inputs=np.asarray(xs), targets=np.asarray(ys),
        day=np.asarray(ds, dtype=int), step=np.asarray(ts, dtype=int),
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def trace_to_csv(trace: PlantTrace, path) -> None:
    """Rows per (t, zone): end-of-step temperature and mean electric power,
    with building-level flows repeated on each row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "zone", "temp_c", "p_hvac_kw", "p_import_kw", "p_export_kw", "p_peak_kw"])
        T, Z = trace.p_hvac.shape
        for t in range(T):
            for z in range(Z):
                w.writerow([
                    t, z, repr(float(trace.tau[t + 1, z])), repr(float(trace.p_hvac[t, z])),
                    repr(float(trace.p_imp[t])), repr(float(trace.p_exp[t])), repr(trace.p_peak),
                ])


def plant_to_json(plant: PlantModel) -> str:
    doc = {
        "resistance": plant.resistance.tolist(),
        "capacitance": plant.capacitance.tolist(),
        "coupling": plant.coupling.tolist(),
        "cop_heat_breaks": plant.cop_heat_breaks.tolist(),
        "cop_heat_values": plant.cop_heat_values.tolist(),
        "cop_cool_breaks": plant.cop_cool_breaks.tolist(),
        "cop_cool_values": plant.cop_cool_values.tolist(),
        "gains_hourly": plant.gains_hourly.tolist(),
        "deadband": plant.deadband,
        "substeps_per_hour": plant.substeps_per_hour,
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def plant_from_json(text: str) -> PlantModel:
    doc = json.loads(text)
    return PlantModel(**{k: (np.array(v) if isinstance(v, list) else v) for k, v in doc.items()})

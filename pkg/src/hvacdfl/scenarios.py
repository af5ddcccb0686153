"""Daily scenario construction: weather, tariffs, comfort bands, clustering.

A :class:`BuildingScenario` carries everything exogenous that the day-ahead
scheduler needs for one day.  Weather comes either from a deterministic
seasonal+diurnal generator or from a ``day,hour,temp_c`` CSV file; the k
representative training days are picked by PAM-style k-medoids over the
hourly ambient profiles, with the coldest day, the hottest day and the most
variable day pinned as fixed medoids.

Default tariff: 0.60 $/kWh on-peak (06:00-19:00), 0.30 $/kWh off-peak,
feed-in at half the import rate, 1 $/kW daily demand charge.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BuildingScenario",
    "WeatherYear",
    "ClusterResult",
    "ClimateParams",
    "generate_weather_year",
    "load_weather_csv",
    "save_weather_csv",
    "kmedoids_days",
    "build_tariff",
    "select_extreme_days",
    "default_scenario",
    "scenario_to_json",
    "scenario_from_json",
    "cluster_report_csv",
]

TEMP_ABS_MIN = -40.0
TEMP_ABS_MAX = 50.0


class WeatherFormatError(ValueError):
    """Malformed or incomplete weather CSV."""


@dataclass(frozen=True)
class BuildingScenario:
    """One day of exogenous data for the scheduler.

    Arrays are hour-indexed with ``horizon`` steps; comfort/target/occupancy
    matrices are (horizon, zones).  Prices in $/kWh, demand charge in $/kW,
    powers in kW, temperatures in deg C.  Comfort targets are evaluated at
    step ends: step t prices the power over [t, t+1) and weighs the
    temperature reached at t+1 against ``t_target[t]``.
    """

    horizon: int
    dt_hours: float
    zones: int
    tau_amb: np.ndarray
    lambda_imp: np.ndarray
    lambda_exp: np.ndarray
    lambda_demand: float
    p_nondispatch: np.ndarray
    p_generation: np.ndarray
    tau0: np.ndarray
    comfort_lo: np.ndarray
    comfort_hi: np.ndarray
    t_target: np.ndarray
    occupancy: np.ndarray  # $/K^2 per step
    cap_cool: np.ndarray  # kW electric, per zone
    cap_heat: np.ndarray  # kW electric, per zone
    line_cap: float

    def __post_init__(self):
        T, Z = self.horizon, self.zones
        vec_T = ("tau_amb", "lambda_imp", "lambda_exp", "p_nondispatch", "p_generation")
        mat_TZ = ("comfort_lo", "comfort_hi", "t_target", "occupancy")
        for name in vec_T + mat_TZ + ("tau0", "cap_cool", "cap_heat"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in vec_T:
            if getattr(self, name).shape != (T,):
                raise ValueError(f"{name} must have shape ({T},)")
        for name in mat_TZ:
            if getattr(self, name).shape != (T, Z):
                raise ValueError(f"{name} must have shape ({T}, {Z})")
        for name in ("tau0", "cap_cool", "cap_heat"):
            if getattr(self, name).shape != (Z,):
                raise ValueError(f"{name} must have shape ({Z},)")
        if not np.all(self.comfort_lo <= self.t_target) or not np.all(self.t_target <= self.comfort_hi):
            raise ValueError("targets must lie inside the comfort band")
        # export price above import would reward round-trip arbitrage
        if not np.all(self.lambda_exp <= self.lambda_imp + 1e-12):
            raise ValueError("feed-in tariff must not exceed the import tariff")
        if np.any(self.occupancy < 0):
            raise ValueError("occupancy weights must be nonnegative")
        if np.any(self.cap_cool <= 0) or np.any(self.cap_heat <= 0) or self.line_cap <= 0:
            raise ValueError("capacities must be positive")
        if self.lambda_demand < 0:
            raise ValueError("demand charge must be nonnegative")
        if abs(self.dt_hours * T - 24.0) > 1e-9:
            raise ValueError("daily scenario must cover 24 h")


@dataclass(frozen=True)
class WeatherYear:
    """365 daily ambient profiles, (365, steps_per_day), deg C."""

    profiles: np.ndarray
    source: str = "generated"

    def __post_init__(self):
        arr = np.asarray(self.profiles, dtype=float)
        object.__setattr__(self, "profiles", arr)
        if arr.ndim != 2 or arr.shape[0] != 365:
            raise WeatherFormatError(f"expected 365 daily profiles, got shape {arr.shape}")
        if np.any(arr < TEMP_ABS_MIN) or np.any(arr > TEMP_ABS_MAX) or not np.all(np.isfinite(arr)):
            raise WeatherFormatError("temperatures outside plausible range [-40, 50] C")

    @property
    def steps_per_day(self) -> int:
        return self.profiles.shape[1]

    def daily_means(self) -> np.ndarray:
        return self.profiles.mean(axis=1)


@dataclass(frozen=True)
class ClusterResult:
    medoids: tuple[int, ...]
    assignment: np.ndarray  # day -> medoid position in `medoids`
    fixed: tuple[int, ...]
    cost: float
    cluster_mean_temp: np.ndarray
    cluster_std_temp: np.ndarray


@dataclass(frozen=True)
class ClimateParams:
    annual_mean: float = 10.0
    seasonal_amplitude: float = 12.0
    diurnal_amplitude: float = 5.0
    noise_scale: float = 2.0
    coldest_day: int = 15  # mid January

    def __post_init__(self):
        if self.seasonal_amplitude < 0 or self.diurnal_amplitude < 0 or self.noise_scale < 0:
            raise ValueError("amplitudes must be nonnegative")


def generate_weather_year(seed: int, params: ClimateParams = ClimateParams(), steps_per_day: int = 24) -> WeatherYear:
    """Synthetic year: seasonal cosine + diurnal sine + AR(1)-ish noise.

    Deterministic per seed.  With zero noise the coldest daily mean sits
    ``2*seasonal_amplitude`` below the hottest.
    """
    rng = np.random.default_rng(seed)
    days = np.arange(365)[:, None]
    hours = (np.arange(steps_per_day) * 24.0 / steps_per_day)[None, :]
    seasonal = -params.seasonal_amplitude * np.cos(2 * np.pi * (days - params.coldest_day) / 365.0)
    # coldest at ~05:00, warmest mid-afternoon
    diurnal = params.diurnal_amplitude * np.sin(2 * np.pi * (hours - 11.0) / 24.0)
    temps = params.annual_mean + seasonal + diurnal
    if params.noise_scale > 0:
        noise = rng.normal(0.0, params.noise_scale, size=(365, steps_per_day))
        # smooth within the day so noise reads as weather fronts, not static
        kernel = np.array([0.25, 0.5, 0.25])
        noise = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="same"), 1, noise)
        daily_shift = rng.normal(0.0, params.noise_scale, size=(365, 1))
        temps = temps + noise + daily_shift
    return WeatherYear(np.clip(temps, TEMP_ABS_MIN, TEMP_ABS_MAX), source="generated")


def save_weather_csv(year: WeatherYear, path) -> None:
    with open(path, "w", newline="") as fh:
        _write_weather(year, fh)


def _write_weather(year: WeatherYear, fh) -> None:
    writer = csv.writer(fh)
    writer.writerow(["day", "hour", "temp_c"])
    for day in range(365):
        for hour in range(year.steps_per_day):
            writer.writerow([day, hour, repr(float(year.profiles[day, hour]))])


def weather_csv_text(year: WeatherYear) -> str:
    buf = io.StringIO()
    _write_weather(year, buf)
    return buf.getvalue()


def load_weather_csv(path_or_text) -> WeatherYear:
    """Parse a ``day,hour,temp_c`` file covering the full 365-day year."""
    if hasattr(path_or_text, "read"):
        rows = list(csv.reader(path_or_text))
    else:
        with open(path_or_text, newline="") as fh:
            rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["day", "hour", "temp_c"]:
        raise WeatherFormatError("expected header 'day,hour,temp_c'")
    seen: dict[tuple[int, int], float] = {}
    hours = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise WeatherFormatError(f"line {lineno}: expected 3 columns")
        try:
            day, hour, temp = int(row[0]), int(row[1]), float(row[2])
        except ValueError as exc:
            raise WeatherFormatError(f"line {lineno}: non-numeric value ({exc})") from exc
        if (day, hour) in seen:
            raise WeatherFormatError(f"duplicate entry for day {day}, hour {hour}")
        seen[(day, hour)] = temp
        hours.add(hour)
    steps = max(hours) + 1 if hours else 0
    missing = [
        (d, h) for d in range(365) for h in range(steps) if (d, h) not in seen
    ]
    if steps == 0 or missing:
        head = missing[:3] if missing else "all"
        raise WeatherFormatError(f"incomplete year, first missing (day, hour) entries: {head}")
    extra = set(seen) - {(d, h) for d in range(365) for h in range(steps)}
    if extra:
        raise WeatherFormatError(f"unexpected entries outside the 365x{steps} grid: {sorted(extra)[:3]}")
    profiles = np.empty((365, steps))
    for (d, h), temp in seen.items():
        profiles[d, h] = temp
    return WeatherYear(profiles, source="csv")


# ---------------------------------------------------------------------------
# Day selection
# ---------------------------------------------------------------------------

def select_extreme_days(year: WeatherYear) -> dict[str, int]:
    """Coldest / hottest daily mean and highest within-day std; ties -> lowest index."""
    means = year.daily_means()
    stds = year.profiles.std(axis=1)
    return {
        "coldest": int(np.argmin(means)),
        "hottest": int(np.argmax(means)),
        "max_variability": int(np.argmax(stds)),
    }


def kmedoids_days(
    year: WeatherYear,
    k: int,
    fixed: tuple[int, ...] | list[int] = (),
    seed: int = 0,
    max_iter: int = 100,
) -> ClusterResult:
    """PAM-style k-medoids on hourly profiles (Euclidean distance).

    ``fixed`` medoids are never swapped out.  Alternates assignment and
    within-cluster medoid updates; total cost is non-increasing, so the loop
    terminates.  Deterministic for a given seed.
    """
    profiles = year.profiles
    n = profiles.shape[0]
    fixed = tuple(dict.fromkeys(int(d) for d in fixed))  # dedupe, keep order
    if any(d < 0 or d >= n for d in fixed):
        raise ValueError("fixed day index out of range")
    if k < len(fixed):
        raise ValueError("k must be at least the number of fixed medoids")
    if k > n:
        raise ValueError("k cannot exceed the number of days")

    # pairwise distances; 365x365 floats is small
    diff = profiles[:, None, :] - profiles[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    rng = np.random.default_rng(seed)
    medoids = list(fixed)
    candidates = [d for d in range(n) if d not in medoids]
    # greedy k-means++-like spread for the free medoids
    while len(medoids) < k:
        if medoids:
            d2 = dist[candidates][:, medoids].min(axis=1) ** 2
            total = d2.sum()
            if total <= 0:
                pick = candidates[0]
            else:
                pick = candidates[int(rng.choice(len(candidates), p=d2 / total))]
        else:
            pick = candidates[int(rng.integers(len(candidates)))]
        medoids.append(pick)
        candidates.remove(pick)

    def assign(meds):
        a = np.argmin(dist[:, meds], axis=1)
        c = dist[np.arange(n), np.asarray(meds)[a]].sum()
        return a, c

    assignment, cost = assign(medoids)
    for _ in range(max_iter):
        improved = False
        for ci in range(len(fixed), k):
            members = np.where(assignment == ci)[0]
            if members.size == 0:
                continue
            # best medoid within the cluster
            local = dist[np.ix_(members, members)].sum(axis=0)
            best = members[int(np.argmin(local))]
            if best != medoids[ci]:
                trial = list(medoids)
                trial[ci] = int(best)
                a2, c2 = assign(trial)
                if c2 < cost - 1e-12:
                    medoids, assignment, cost = trial, a2, c2
                    improved = True
        if not improved:
            break

    means = year.daily_means()
    cluster_mean = np.array([means[assignment == ci].mean() if np.any(assignment == ci) else means[medoids[ci]] for ci in range(k)])
    cluster_std = np.array([means[assignment == ci].std() if np.any(assignment == ci) else 0.0 for ci in range(k)])
    return ClusterResult(
        medoids=tuple(int(m) for m in medoids),
        assignment=assignment,
        fixed=fixed,
        cost=float(cost),
        cluster_mean_temp=cluster_mean,
        cluster_std_temp=cluster_std,
    )


def cluster_report_csv(result: ClusterResult, path) -> None:
    """`day,cluster,is_medoid` rows for every day."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "cluster", "is_medoid"])
        medoid_set = set(result.medoids)
        for day, ci in enumerate(result.assignment):
            writer.writerow([day, int(ci), int(day in medoid_set)])


# ---------------------------------------------------------------------------
# Tariffs and the default scenario
# ---------------------------------------------------------------------------

def build_tariff(
    peak_rate: float = 0.6,
    offpeak_rate: float = 0.3,
    peak_window: tuple[int, int] = (6, 19),
    export_factor: float = 0.5,
    horizon: int = 24,
) -> tuple[np.ndarray, np.ndarray]:
    """Time-of-use import tariff and proportional feed-in tariff.

    ``peak_window`` is [start, end) in hours.  The export price is
    ``export_factor * import`` so that feeding in never beats avoiding an
    import.
    """
    if peak_rate <= 0 or offpeak_rate <= 0:
        raise ValueError("rates must be positive")
    start, end = peak_window
    if not (0 <= start <= end <= 24):
        raise ValueError("peak window must satisfy 0 <= start <= end <= 24")
    if not 0 <= export_factor <= 1:
        raise ValueError("export factor must be in [0, 1]")
    hours = np.arange(horizon) * 24.0 / horizon
    lam_imp = np.where((hours >= start) & (hours < end), peak_rate, offpeak_rate).astype(float)
    lam_exp = export_factor * lam_imp
    return lam_imp, lam_exp


DEFAULT_ZONE_AREAS = np.array([150.0, 113.0, 67.0, 113.0, 67.0])  # core + 4 perimeter, m^2


def default_scenario(
    tau_amb: np.ndarray,
    zones: int = 5,
    dt_hours: float | None = None,
    occupied_hours: tuple[int, int] = (7, 19),
    target_occupied: float = 21.0,
    band_occupied: float = 1.5,
    band_unoccupied: float = 4.0,
    weight_occupied: float = 2.0,
    weight_unoccupied: float = 0.1,
    lambda_demand: float = 1.0,
    line_cap: float = 50.0,
    tau0=None,
    cap_heat=None,
    cap_cool=None,
) -> BuildingScenario:
    """Office-style scenario around an ambient profile.

    Comfort: 21 C +/- 1.5 K during 07:00-19:00, +/- 4 K otherwise, with
    occupancy weights 2 / 0.1 $/K^2 per step.  Zone capacities default to
    0.05 kW electric per m^2 of the five-zone floor plate.  Non-dispatchable
    load and on-site generation default to zero so expected and ex-post
    costs compare HVAC like for like.
    """
    tau_amb = np.asarray(tau_amb, dtype=float)
    T = tau_amb.shape[0]
    if dt_hours is None:
        dt_hours = 24.0 / T
    lam_imp, lam_exp = build_tariff(horizon=T)
    hours = np.arange(T) * 24.0 / T
    occupied = (hours >= occupied_hours[0]) & (hours < occupied_hours[1])
    target = np.full((T, zones), target_occupied)
    band = np.where(occupied, band_occupied, band_unoccupied)[:, None] * np.ones((1, zones))
    weight = np.where(occupied, weight_occupied, weight_unoccupied)[:, None] * np.ones((1, zones))
    if zones == DEFAULT_ZONE_AREAS.shape[0]:
        areas = DEFAULT_ZONE_AREAS
    else:
        areas = np.full(zones, 100.0)
    cap = 0.05 * areas
    return BuildingScenario(
        horizon=T,
        dt_hours=dt_hours,
        zones=zones,
        tau_amb=tau_amb,
        lambda_imp=lam_imp,
        lambda_exp=lam_exp,
        lambda_demand=lambda_demand,
        p_nondispatch=np.zeros(T),
        p_generation=np.zeros(T),
        tau0=np.full(zones, target_occupied) if tau0 is None else np.asarray(tau0, dtype=float),
        comfort_lo=target - band,
        comfort_hi=target + band,
        t_target=target,
        occupancy=weight,
        cap_cool=cap if cap_cool is None else np.asarray(cap_cool, dtype=float),
        cap_heat=cap if cap_heat is None else np.asarray(cap_heat, dtype=float),
        line_cap=line_cap,
    )


def scenario_to_json(scenario: BuildingScenario) -> str:
    doc = {
        "horizon": scenario.horizon,
        "dt_hours": scenario.dt_hours,
        "zones": scenario.zones,
        "lambda_demand": scenario.lambda_demand,
        "line_cap": scenario.line_cap,
    }
    for name in (
        "tau_amb", "lambda_imp", "lambda_exp", "p_nondispatch", "p_generation",
        "tau0", "comfort_lo", "comfort_hi", "t_target", "occupancy",
        "cap_cool", "cap_heat",
    ):
        doc[name] = getattr(scenario, name).tolist()
    return json.dumps(doc, indent=1, sort_keys=True)


def scenario_from_json(text: str) -> BuildingScenario:
    doc = json.loads(text)
    return BuildingScenario(**doc)

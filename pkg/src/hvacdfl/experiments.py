"""Config-driven experiment pipeline behind the CLI.

A run is described by one TOML file (flag overrides layer on top).  Two
synthetic weather years stand in for the two historical datasets: the
first drives a year of heuristic thermostat operation that supplies the
supervised pretraining data, the second supplies the k-medoid scheduling
days (coldest, hottest and most-variable days pinned, 10 medoids total,
the last two held out for validation; testing uses all ten).

Outputs live under ``<output_root>/<model>-<method>/seed<k>/`` with the
config copy, per-epoch checkpoints, a JSONL training log and the metric
CSV.  Every artifact is reproducible byte for byte given the same config
and seed; wall-clock fields (``elapsed_s``, ``*_time_s``) are the only
exceptions and are stripped by :func:`strip_volatile` before comparisons.
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .encoding import build_miqp, export_lp
from .losses import EVAL_FIELDS, EvalRecord, eval_record_csv, evaluate
from .plant import (
    PlantModel,
    PretrainingDataset,
    default_plant,
    generate_pretraining_dataset,
    plant_from_json,
    plant_to_json,
)
from .scenarios import (
    BuildingScenario,
    ClimateParams,
    WeatherYear,
    cluster_report_csv,
    default_scenario,
    generate_weather_year,
    kmedoids_days,
    load_weather_csv,
    save_weather_csv,
    scenario_from_json,
    scenario_to_json,
    select_extreme_days,
)
from .solver import solve_miqp
from .thermal import RcThermalModel, build_nn_model, model_from_json, model_to_json
from .training import TrainingConfig, pretrain_ito, train_dfl
from .qp_training import train_fixed_binaries, train_qp_relaxation

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "SolverFailure",
    "load_config",
    "config_to_toml",
    "config_from_toml",
    "cmd_prepare",
    "cmd_train",
    "cmd_evaluate",
    "cmd_bench_tightness",
    "cmd_ablate",
    "cmd_export_instance",
    "strip_volatile",
]

OUTPUT_ENV = "HVACDFL_OUT"

SIGMA_GRID = [("const-0.01", 0.01, "constant"), ("const-0.05", 0.05, "constant"),
              ("const-0.1", 0.1, "constant"), ("frac-mu-10", 0.1, "fraction_of_mu_fixed"),
              ("frac-mu-2", 0.5, "fraction_of_mu_fixed")]
SAMPLE_GRID = [1, 2, 5, 10]


class ConfigError(ValueError):
    pass


class SolverFailure(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    output_dir: str = "out"
    model_kind: str = "nn"  # nn | rc
    hidden: list[int] = field(default_factory=lambda: [2])
    method: str = "ss"  # ito | ss | qp | fb
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    jobs: int = 1
    # weather / scenarios
    weather_seed: int = 7
    weather_history_csv: str = ""
    weather_scenario_csv: str = ""
    climate_mean: float = 10.0
    climate_seasonal: float = 12.0
    climate_diurnal: float = 5.0
    climate_noise: float = 2.0
    zones: int = 5
    clusters: int = 10
    validation_days: int = 2
    # pretraining
    pretrain_epochs: int = 40
    pretrain_lr: float = 1e-2
    pretrain_batch: int = 256
    # DFL training
    learning_rate: float = 0.0  # 0 -> model default (1e-3 nn, 0.02 rc)
    lr_decay: float = 0.98
    max_epochs: int = -1  # -1 -> model default (100 nn, 150 rc)
    patience: int = 15
    samples: int = 1
    sigma: float = 0.01
    sigma_mode: str = "constant"
    gap_tol: float = 1e-3
    node_limit: int = 40
    baseline: str = "auto"
    relax_validation_above: int = 120  # free binaries; larger problems validate relaxed

    def validate(self) -> None:
        if self.model_kind not in ("nn", "rc"):
            raise ConfigError(f"model_kind must be nn or rc, got {self.model_kind!r}")
        if self.method not in ("ito", "ss", "qp", "fb"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.model_kind == "rc" and self.method in ("qp", "fb", "ss"):
            pass  # rc works with every method (no binaries; qp == fb)
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.clusters < 3:
            raise ConfigError("need at least the three fixed medoids")
        if self.validation_days >= self.clusters:
            raise ConfigError("validation days must leave training days")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def out_root(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV, self.output_dir))

    def run_dir(self, seed: int) -> Path:
        name = self.model_kind if self.model_kind == "rc" else f"nn{'-'.join(map(str, self.hidden))}"
        return self.out_root() / f"{name}-{self.method}" / f"seed{seed}"

    def training_config(self, seed: int) -> TrainingConfig:
        is_rc = self.model_kind == "rc"
        lr = self.learning_rate if self.learning_rate > 0 else (0.02 if is_rc else 1e-3)
        epochs = self.max_epochs if self.max_epochs >= 0 else (150 if is_rc else 100)
        return TrainingConfig(
            learning_rate=lr,
            lr_decay=self.lr_decay,
            max_epochs=epochs,
            patience=self.patience,
            samples=self.samples,
            sigma=self.sigma,
            sigma_mode=self.sigma_mode,
            seed=seed,
            gap_tol=self.gap_tol,
            node_limit=self.node_limit,
            baseline=self.baseline,
            relax_binaries=self.method == "qp",
        )


# ---------------------------------------------------------------------------
# TOML in/out (writer covers the flat schema used here)
# ---------------------------------------------------------------------------

def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {type(v)} to TOML")


def config_to_toml(config: ExperimentConfig) -> str:
    lines = [f"{k} = {_toml_value(v)}" for k, v in asdict(config).items()]
    return "\n".join(lines) + "\n"


def config_from_toml(text: str) -> ExperimentConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad TOML: {exc}") from exc
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig(**doc)
    cfg.validate()
    return cfg


def load_config(path: str | None, overrides: list[str] = ()) -> ExperimentConfig:
    cfg = ExperimentConfig() if path is None else config_from_toml(Path(path).read_text())
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in ExperimentConfig.__dataclass_fields__:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        try:
            if isinstance(current, bool):
                parsed = value.strip().lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                parsed = int(value)
            elif isinstance(current, float):
                parsed = float(value)
            elif isinstance(current, list):
                parsed = json.loads(value)
            else:
                parsed = value
        except (ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
        setattr(cfg, key, parsed)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Data assembly
# ---------------------------------------------------------------------------

def _climate(config: ExperimentConfig) -> ClimateParams:
    return ClimateParams(
        annual_mean=config.climate_mean,
        seasonal_amplitude=config.climate_seasonal,
        diurnal_amplitude=config.climate_diurnal,
        noise_scale=config.climate_noise,
    )


def weather_years(config: ExperimentConfig) -> tuple[WeatherYear, WeatherYear]:
    """(history year for pretraining, scenario year for scheduling)."""
    if config.weather_history_csv:
        history = load_weather_csv(config.weather_history_csv)
    else:
        history = generate_weather_year(config.weather_seed + 1000, _climate(config))
    if config.weather_scenario_csv:
        scenario = load_weather_csv(config.weather_scenario_csv)
    else:
        scenario = generate_weather_year(config.weather_seed, _climate(config))
    return history, scenario


def scenario_for_day(config: ExperimentConfig, profile: np.ndarray) -> BuildingScenario:
    return default_scenario(profile, zones=config.zones)


def medoid_scenarios(config: ExperimentConfig, year: WeatherYear):
    """(clusters, train scenarios, validation scenarios, all scenarios).

    Validation days are free (non-extreme) medoids picked at the quartiles
    of the daily-mean-temperature ordering, so early stopping sees both a
    cold-ish and a warm-ish day; the extreme days always stay in training.
    """
    ext = select_extreme_days(year)
    fixed = (ext["coldest"], ext["hottest"], ext["max_variability"])
    clusters = kmedoids_days(year, config.clusters, fixed=fixed, seed=config.weather_seed)
    scens = [scenario_for_day(config, year.profiles[d]) for d in clusters.medoids]
    n_val = config.validation_days
    free = list(range(len(clusters.fixed), len(clusters.medoids)))
    if n_val and free:
        means = year.daily_means()
        free_sorted = sorted(free, key=lambda i: (means[clusters.medoids[i]], i))
        picks = [free_sorted[(k + 1) * len(free_sorted) // (n_val + 1)] for k in range(n_val)]
        val_pos = sorted(set(picks))
        while len(val_pos) < n_val:  # degenerate quantiles on tiny sets
            val_pos.append(next(i for i in free_sorted if i not in val_pos))
        val_pos = sorted(val_pos[:n_val])
    else:
        val_pos = []
    train = [s for i, s in enumerate(scens) if i not in val_pos]
    val = [scens[i] for i in val_pos]
    return clusters, train, val, scens


def build_model(config: ExperimentConfig, seed: int):
    if config.model_kind == "rc":
        z = config.zones
        return RcThermalModel(np.full(z, 4.0), np.full(z, 3.0), np.full(z, 2.5), np.full(z, 2.5), 1.0)
    return build_nn_model(config.zones, config.hidden, np.random.default_rng(seed))


def prepared_dir(config: ExperimentConfig) -> Path:
    return config.out_root() / "prepared"


def load_dataset(path: Path) -> PretrainingDataset:
    return PretrainingDataset(
        inputs=np.load(path / "pretrain_inputs.npy"),
        targets=np.load(path / "pretrain_targets.npy"),
        day=np.load(path / "pretrain_day.npy"),
        step=np.load(path / "pretrain_step.npy"),
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_prepare(config: ExperimentConfig) -> Path:
    """Persist weather, clusters, scenarios, plant and the pretraining set."""
    out = prepared_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    history, year = weather_years(config)
    save_weather_csv(history, out / "weather_history.csv")
    save_weather_csv(year, out / "weather_scenarios.csv")
    clusters, _, _, all_scens = medoid_scenarios(config, year)
    cluster_report_csv(clusters, out / "clusters.csv")
    (out / "medoids.json").write_text(json.dumps(
        {"medoids": list(clusters.medoids), "fixed": list(clusters.fixed)}, sort_keys=True))
    scen_dir = out / "scenarios"
    scen_dir.mkdir(exist_ok=True)
    for day, scen in zip(clusters.medoids, all_scens):
        (scen_dir / f"day_{day:03d}.json").write_text(scenario_to_json(scen))
    plant = default_plant(config.zones)
    (out / "plant.json").write_text(plant_to_json(plant))
    dataset = generate_pretraining_dataset(
        plant, history, lambda p: scenario_for_day(config, p))
    np.save(out / "pretrain_inputs.npy", dataset.inputs)
    np.save(out / "pretrain_targets.npy", dataset.targets)
    np.save(out / "pretrain_day.npy", dataset.day)
    np.save(out / "pretrain_step.npy", dataset.step)
    return out


def _require_prepared(config: ExperimentConfig) -> Path:
    out = prepared_dir(config)
    if not (out / "plant.json").exists():
        cmd_prepare(config)
    return out


def _train_one_seed(config: ExperimentConfig, seed: int, plant, dataset, train_scens, val_scens):
    run = config.run_dir(seed)
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.toml").write_text(config_to_toml(config))
    t0 = time.perf_counter()
    model = build_model(config, seed)
    model, curve = pretrain_ito(
        model, dataset, epochs=config.pretrain_epochs, lr=config.pretrain_lr,
        batch_size=config.pretrain_batch, seed=seed,
    )
    pretrain_s = time.perf_counter() - t0
    (run / "pretrained.json").write_text(model_to_json(model))
    (run / "pretrain_curve.json").write_text(json.dumps([float(v) for v in curve]))

    tc = config.training_config(seed)
    if config.method == "ito":
        log_text = json.dumps({"epoch": 0, "note": "ito: no decision-focused epochs"}, sort_keys=True) + "\n"
        (run / "log.jsonl").write_text(log_text)
        (run / "checkpoint.json").write_text(model_to_json(model))
        return {"seed": seed, "val_loss": None, "epochs": 0,
                "train_time_s": pretrain_s, "validation_time_s": 0.0}

    # large relaxed-validation fallback for big networks
    probe = build_miqp(model, train_scens[0], mode="penalty")
    if config.method == "qp" and probe.free_binaries().size > config.relax_validation_above:
        tc.relax_binaries = True

    ckpt_dir = run / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    def save_epoch(epoch, epoch_model, optimizer):
        doc = {"model": json.loads(model_to_json(epoch_model)), "adam": optimizer.state()}
        (ckpt_dir / f"epoch{epoch:04d}.json").write_text(json.dumps(doc, sort_keys=True))

    t1 = time.perf_counter()
    if config.method == "ss":
        trained, log = train_dfl(model, plant, train_scens, val_scens, tc, epoch_callback=save_epoch)
    elif config.method == "qp":
        trained, log = train_qp_relaxation(model, plant, train_scens, val_scens, tc, epoch_callback=save_epoch)
    else:
        trained, log = train_fixed_binaries(model, plant, train_scens, val_scens, tc, epoch_callback=save_epoch)
    train_s = time.perf_counter() - t1
    (run / "checkpoint.json").write_text(model_to_json(trained))
    (run / "log.jsonl").write_text(log.to_jsonl())
    return {"seed": seed, "val_loss": log.best_val_loss, "epochs": log.best_epoch,
            "train_time_s": pretrain_s + train_s, "validation_time_s": 0.0}


def cmd_train(config: ExperimentConfig) -> dict:
    """Train every seed; the summary marks the best-validation seed."""
    out = _require_prepared(config)
    plant = plant_from_json((out / "plant.json").read_text())
    dataset = load_dataset(out)
    _, year = weather_years(config)
    _, train_scens, val_scens, _ = medoid_scenarios(config, year)
    rows = [
        _train_one_seed(config, seed, plant, dataset, train_scens, val_scens)
        for seed in config.seeds
    ]
    scored = [r for r in rows if r["val_loss"] is not None]
    best = min(scored, key=lambda r: r["val_loss"])["seed"] if scored else config.seeds[0]
    summary = {"seeds": rows, "best_seed": best}
    root = config.run_dir(config.seeds[0]).parent
    (root / "summary.json").write_text(json.dumps(summary, sort_keys=True, default=float))
    return summary


def cmd_evaluate(config: ExperimentConfig, checkpoint: str | None = None, seed: int | None = None) -> EvalRecord:
    """Score a checkpoint on all medoid days; writes metrics.csv next to it."""
    out = _require_prepared(config)
    plant = plant_from_json((out / "plant.json").read_text())
    _, year = weather_years(config)
    _, _, _, all_scens = medoid_scenarios(config, year)
    seed = config.seeds[0] if seed is None else seed
    run = config.run_dir(seed)
    ckpt = Path(checkpoint) if checkpoint else run / "checkpoint.json"
    if not ckpt.exists():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    model = model_from_json(ckpt.read_text())
    epochs = 0
    log_path = run / "log.jsonl"
    if log_path.exists():
        entries = [json.loads(line) for line in log_path.read_text().splitlines() if line]
        epochs = max((e.get("epoch", 0) for e in entries), default=0)
    t0 = time.perf_counter()
    relax = config.method == "qp" and config.model_kind == "nn" and sum(config.hidden) * 24 > config.relax_validation_above
    record = evaluate(
        model, plant, all_scens,
        gap_tol=config.gap_tol, node_limit=config.node_limit,
        relax_binaries=relax, epochs=epochs,
        test_time_s=0.0,
    )
    record.test_time_s = time.perf_counter() - t0
    (ckpt.parent / "metrics.csv").write_text(eval_record_csv(record))
    return record


def cmd_bench_tightness(config: ExperimentConfig, gap_tol: float = 1e-3, node_limit: int = 120) -> str:
    """Paired solves with and without the tightened formulation.

    Returns a CSV text with one column per medoid day and rows for the two
    node counts, the two wall times and the relative gains.
    """
    out = _require_prepared(config)
    dataset = load_dataset(out)
    _, year = weather_years(config)
    clusters, train_scens, _, all_scens = medoid_scenarios(config, year)
    model = build_model(config, config.seeds[0])
    model, _ = pretrain_ito(model, dataset, epochs=config.pretrain_epochs,
                            lr=config.pretrain_lr, batch_size=config.pretrain_batch,
                            seed=config.seeds[0])
    days, nodes_sota, nodes_tight, time_sota, time_tight, obj_gap = [], [], [], [], [], []
    for day, scen in zip(clusters.medoids, all_scens):
        inst_t = build_miqp(model, scen, mode="penalty", tighten_ambient=True)
        inst_s = build_miqp(model, scen, mode="penalty", tighten_ambient=False)
        t0 = time.perf_counter(); ms_t = solve_miqp(inst_t, gap_tol=gap_tol, node_limit=node_limit)
        el_t = time.perf_counter() - t0
        t0 = time.perf_counter(); ms_s = solve_miqp(inst_s, gap_tol=gap_tol, node_limit=node_limit)
        el_s = time.perf_counter() - t0
        days.append(day)
        nodes_tight.append(ms_t.node_count); nodes_sota.append(ms_s.node_count)
        time_tight.append(el_t); time_sota.append(el_s)
        obj_gap.append(abs(ms_t.objective - ms_s.objective))
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["metric"] + [f"day{d}" for d in days] + ["avg"])
    rows = [
        ("nodes_sota", nodes_sota), ("nodes_tight", nodes_tight),
        ("time_sota_s", time_sota), ("time_tight_s", time_tight),
        ("objective_diff", obj_gap),
    ]
    for name, vals in rows:
        w.writerow([name] + [repr(round(float(v), 6)) for v in vals] + [repr(round(float(np.mean(vals)), 6))])
    gain_nodes = [100.0 * (s - t) / max(s, 1) for s, t in zip(nodes_sota, nodes_tight)]
    gain_time = [100.0 * (s - t) / s if s > 0 else 0.0 for s, t in zip(time_sota, time_tight)]
    w.writerow(["gain_nodes_pct"] + [repr(round(v, 3)) for v in gain_nodes] + [repr(round(float(np.mean(gain_nodes)), 3))])
    w.writerow(["gain_time_pct"] + [repr(round(v, 3)) for v in gain_time] + [repr(round(float(np.mean(gain_time)), 3))])
    text = buf.getvalue()
    root = config.out_root()
    root.mkdir(parents=True, exist_ok=True)
    (root / "bench_tightness.csv").write_text(text)
    return text


def cmd_ablate(config: ExperimentConfig, axis: str) -> str:
    """Sweep sigma (five noise settings) or the sample count S."""
    if axis not in ("sigma", "samples"):
        raise ConfigError("axis must be sigma or samples")
    out = _require_prepared(config)
    plant = plant_from_json((out / "plant.json").read_text())
    dataset = load_dataset(out)
    _, year = weather_years(config)
    _, train_scens, val_scens, all_scens = medoid_scenarios(config, year)
    rows = []
    cells = SIGMA_GRID if axis == "sigma" else SAMPLE_GRID
    for cell in cells:
        for seed in config.seeds:
            model = build_model(config, seed)
            model, _ = pretrain_ito(model, dataset, epochs=config.pretrain_epochs,
                                    lr=config.pretrain_lr, batch_size=config.pretrain_batch, seed=seed)
            tc = config.training_config(seed)
            if axis == "sigma":
                label, tc.sigma, tc.sigma_mode = cell
            else:
                label = f"S={cell}"
                tc.samples = cell
            t0 = time.perf_counter()
            trained, log = train_dfl(model, plant, train_scens, val_scens, tc)
            elapsed = time.perf_counter() - t0
            rec = evaluate(trained, plant, all_scens, gap_tol=tc.gap_tol, node_limit=tc.node_limit)
            rows.append({
                "cell": label, "seed": seed, "expost_plus": rec.expost_plus,
                "epochs": log.best_epoch, "train_time_s": round(elapsed, 3),
            })
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["cell", "seed", "expost_plus", "epochs", "train_time_s"])
    w.writeheader()
    for r in rows:
        w.writerow(r)
    text = buf.getvalue()
    root = config.out_root()
    root.mkdir(parents=True, exist_ok=True)
    (root / f"ablation_{axis}.csv").write_text(text)
    return text


def cmd_export_instance(config: ExperimentConfig, day_rank: int = 0, path: str | None = None) -> Path:
    """Write one medoid day's instance in LP text format for cross-checks."""
    out = _require_prepared(config)
    dataset = load_dataset(out)
    _, year = weather_years(config)
    clusters, _, _, all_scens = medoid_scenarios(config, year)
    model = build_model(config, config.seeds[0])
    model, _ = pretrain_ito(model, dataset, epochs=config.pretrain_epochs,
                            lr=config.pretrain_lr, batch_size=config.pretrain_batch,
                            seed=config.seeds[0])
    if not 0 <= day_rank < len(all_scens):
        raise ConfigError(f"day rank out of range 0..{len(all_scens) - 1}")
    inst = build_miqp(model, all_scens[day_rank], mode="penalty")
    target = Path(path) if path else config.out_root() / f"instance_day{clusters.medoids[day_rank]:03d}.lp"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(export_lp(inst))
    return target


# ---------------------------------------------------------------------------
# Reproducibility helpers
# ---------------------------------------------------------------------------

VOLATILE_KEYS = {"elapsed_s", "train_time_s", "validation_time_s", "test_time_s", "wall_time_s", "time_sota_s", "time_tight_s", "gain_time_pct"}


def strip_volatile(text: str) -> str:
    """Remove wall-clock fields from JSONL/CSV/JSON artifacts before comparing."""
    lines = text.splitlines()
    if lines and lines[0].lstrip().startswith("{"):
        out = []
        for line in lines:
            if not line.strip():
                continue
            doc = json.loads(line)
            out.append(json.dumps(_strip_keys(doc), sort_keys=True))
        return "\n".join(out) + "\n"
    rows = list(csv.reader(io.StringIO(text)))
    if rows and any(f in rows[0] for f in VOLATILE_KEYS):
        keep = [i for i, name in enumerate(rows[0]) if name not in VOLATILE_KEYS]
        buf = io.StringIO()
        w = csv.writer(buf)
        for row in rows:
            w.writerow([row[i] for i in keep if i < len(row)])
        return buf.getvalue()
    if rows and rows[0] and rows[0][0] == "metric":
        buf = io.StringIO()
        w = csv.writer(buf)
        for row in rows:
            if row and row[0] in VOLATILE_KEYS:
                continue
            w.writerow(row)
        return buf.getvalue()
    return text


def _strip_keys(doc):
    if isinstance(doc, dict):
        return {k: _strip_keys(v) for k, v in doc.items() if k not in VOLATILE_KEYS}
    if isinstance(doc, list):
        return [_strip_keys(v) for v in doc]
    return doc

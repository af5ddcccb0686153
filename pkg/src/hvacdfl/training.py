"""Decision-focused training via stochastic smoothing, plus ITO pretraining.

The decision loop treats the whole pipeline (schedule MIQP -> thermostat
plant -> realized loss) as a black box.  Parameters are modeled as a
Gaussian ``N(mu, sigma)``; each step samples parameters, runs the pipeline
on the sample, and turns the realized expost-plus losses into a gradient
with the score-function (REINFORCE) identity

    d/d mu  E[L] = E[ L * (theta - mu) / sigma^2 ]
    d/d sig E[L] = E[ L * ((theta - mu)^2 - sigma^2) / sigma^3 ]

A variance-reduction baseline is subtracted from L before multiplying by
the score (batch mean across samples, or the previous epoch's mean loss
when only one sample is drawn); this leaves the estimator unbiased because
the score function has zero mean.  Updates are per scenario with Adam, the
learning rate decays exponentially per epoch, and early stopping tracks
the noiseless validation loss.

Sampling is reproducible: the stream for (epoch, scenario, sample) is
spawned from the run seed, so reruns regenerate identical perturbations
regardless of execution order.

ITO pretraining fits the one-step model to a year of logged plant
transitions by MSE: analytic backprop for the network (the model itself is
differentiable; only the optimization and plant layers are not) and
analytic partial derivatives for the RC parameters.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .losses import expost_plus
from .plant import PlantModel, PretrainingDataset, simulate
from .scenarios import BuildingScenario
from .schedule import solve_schedule
from .thermal import (
    NeuralThermalModel,
    RcThermalModel,
    ThermalModel,
    flatten_params,
    unflatten_params,
)

__all__ = [
    "GaussianParamDist",
    "TrainingConfig",
    "TrainingLog",
    "Adam",
    "sample_theta",
    "score_gradient",
    "train_dfl",
    "pretrain_ito",
    "rng_stream",
]

SIGMA_FLOOR = 1e-6
RC_PARAM_FLOOR = 1e-3


class Adam:
    """Plain Adam; state arrays are exposed for checkpointing."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, x: np.ndarray, grad: np.ndarray, lr: float | None = None) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return x - (self.lr if lr is None else lr) * mhat / (np.sqrt(vhat) + self.eps)

    def state(self) -> dict:
        return {"m": self.m.tolist(), "v": self.v.tolist(), "t": self.t}


@dataclass
class GaussianParamDist:
    """Parameter distribution N(mu, diag(sigma^2)).

    sigma_mode:
      constant             sigma fixed at ``sigma_value``
      learned              sigma trained alongside mu (floored at 1e-6)
      fraction_of_mu_fixed sigma frozen at ``sigma_value * |mu_init|``
      fraction_of_mu_tracking  sigma follows ``sigma_value * |mu_current|``
    """

    mu: np.ndarray
    sigma_value: float = 0.01
    sigma_mode: str = "constant"
    sigma: np.ndarray | None = None

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        if self.sigma_mode not in ("constant", "learned", "fraction_of_mu_fixed", "fraction_of_mu_tracking"):
            raise ValueError(f"unknown sigma_mode {self.sigma_mode!r}")
        if self.sigma is None:
            if self.sigma_mode in ("fraction_of_mu_fixed", "fraction_of_mu_tracking"):
                base = np.maximum(self.sigma_value * np.abs(self.mu), SIGMA_FLOOR)
            else:
                base = np.full_like(self.mu, self.sigma_value)
            self.sigma = base
        self.sigma = np.maximum(np.asarray(self.sigma, dtype=float), SIGMA_FLOOR)
        if np.any(self.sigma <= 0):
            raise ValueError("sigma must be positive")

    def set_mu(self, mu: np.ndarray) -> None:
        self.mu = np.asarray(mu, dtype=float)
        if self.sigma_mode == "fraction_of_mu_tracking":
            self.sigma = np.maximum(self.sigma_value * np.abs(self.mu), SIGMA_FLOOR)

    def set_sigma(self, sigma: np.ndarray) -> None:
        if self.sigma_mode != "learned":
            raise ValueError("sigma is not trainable in this mode")
        self.sigma = np.maximum(np.asarray(sigma, dtype=float), SIGMA_FLOOR)


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3  # 0.02 for RC models
    lr_decay: float = 0.98
    max_epochs: int = 100
    patience: int = 15
    samples: int = 1
    sigma: float = 0.01
    sigma_mode: str = "constant"
    seed: int = 0
    gap_tol: float = 1e-3
    node_limit: int = 600
    baseline: str = "auto"  # auto: batch mean (S>1) / previous-epoch mean (S=1); or "none"
    relax_binaries: bool = False  # train on the continuous relaxation instead of B&B

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("need at least one sample")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("decay must be in (0, 1]")

    @staticmethod
    def for_model(model: ThermalModel, **overrides) -> "TrainingConfig":
        base = {"learning_rate": 0.02, "max_epochs": 150} if isinstance(model, RcThermalModel) \
            else {"learning_rate": 1e-3, "max_epochs": 100}
        base.update(overrides)
        return TrainingConfig(**base)


@dataclass
class TrainingLog:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = np.inf
    stopped_early: bool = False

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.epochs)


def rng_stream(seed: int, epoch: int, scenario: int, sample: int) -> np.random.Generator:
    """Independent, reproducible stream per (epoch, scenario, sample)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(epoch, scenario, sample)))


def sample_theta(dist: GaussianParamDist, rng: np.random.Generator) -> np.ndarray:
    return dist.mu + dist.sigma * rng.standard_normal(dist.mu.shape[0])


def score_gradient(
    losses: np.ndarray,
    thetas: np.ndarray,
    dist: GaussianParamDist,
    baseline: float | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Monte Carlo score-function gradient over S samples.

    ``thetas`` is (S, n).  Returns (grad_mu, grad_sigma); grad_sigma is
    None unless the distribution trains sigma.
    """
    losses = np.asarray(losses, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    S = losses.shape[0]
    if S < 1 or thetas.shape[0] != S:
        raise ValueError("need one theta per loss")
    adv = losses - (0.0 if baseline is None else baseline)
    centered = thetas - dist.mu
    grad_mu = (adv[:, None] * centered / dist.sigma ** 2).mean(axis=0)
    grad_sigma = None
    if dist.sigma_mode == "learned":
        grad_sigma = (adv[:, None] * (centered ** 2 - dist.sigma ** 2) / dist.sigma ** 3).mean(axis=0)
    return grad_mu, grad_sigma


def _project_params(theta: np.ndarray, template: ThermalModel) -> np.ndarray:
    if isinstance(template, RcThermalModel):
        return np.maximum(theta, RC_PARAM_FLOOR)
    return theta


def _pipeline_loss(model_s, plant, scenario, config) -> float:
    """One black-box evaluation: schedule -> plant -> expost-plus."""
    schedule = solve_schedule(
        model_s, scenario, mode="penalty",
        gap_tol=config.gap_tol, node_limit=config.node_limit,
        relax_binaries=config.relax_binaries,
    )
    if schedule.status == "infeasible":
        raise RuntimeError("schedule infeasible")
    trace = simulate(plant, scenario, schedule.setpoints)
    return expost_plus(trace, schedule, scenario)


def validation_loss(model, plant, scenarios, config) -> float:
    return float(np.mean([_pipeline_loss(model, plant, s, config) for s in scenarios]))


def train_dfl(
    model: ThermalModel,
    plant: PlantModel,
    train_scenarios: list[BuildingScenario],
    val_scenarios: list[BuildingScenario],
    config: TrainingConfig,
    epoch_callback=None,
) -> tuple[ThermalModel, TrainingLog]:
    """Stochastic-smoothing DFL; returns the best-validation model.

    Per epoch, per scenario: draw S parameter samples, run the black-box
    pipeline on each, apply the score-function gradient with Adam.  A
    sample whose schedule fails keeps the worst loss seen this epoch and
    is flagged in the log.  Validation (noise-free) runs each epoch and
    the best iterate is returned when patience runs out.
    """
    log = TrainingLog()
    mu = flatten_params(model)
    dist = GaussianParamDist(mu.copy(), sigma_value=config.sigma, sigma_mode=config.sigma_mode)
    adam_mu = Adam(mu.shape[0], config.learning_rate)
    adam_sigma = Adam(mu.shape[0], config.learning_rate) if config.sigma_mode == "learned" else None

    t0 = time.perf_counter()
    best_val = validation_loss(model, plant, val_scenarios, config) if val_scenarios else np.inf
    best_mu = dist.mu.copy()
    log.best_val_loss = best_val
    log.epochs.append({
        "epoch": 0, "val_loss": best_val, "mean_loss": None, "lr": config.learning_rate,
        "grad_norm": 0.0, "scenario_losses": [], "flagged": 0,
        "elapsed_s": round(time.perf_counter() - t0, 3),
    })
    if config.max_epochs == 0:
        return unflatten_params(best_mu, model), log

    prev_epoch_mean = best_val if np.isfinite(best_val) else 0.0
    # per-scenario baselines keep the day-to-day loss scale out of the
    # advantage; bootstrapped with the noiseless loss at mu, then tracked
    # with a short EMA (still unbiased: the baseline never sees the
    # current sample)
    scen_baseline: dict[int, float] = {}
    since_best = 0
    for epoch in range(1, config.max_epochs + 1):
        lr = config.learning_rate * config.lr_decay ** (epoch - 1)
        epoch_losses: list[float] = []
        grad_norms: list[float] = []
        worst = prev_epoch_mean
        flagged = 0
        for r, scenario in enumerate(train_scenarios):
            thetas, losses, failed = [], [], []
            for s in range(config.samples):
                rng = rng_stream(config.seed, epoch, r, s)
                theta_s = _project_params(sample_theta(dist, rng), model)
                thetas.append(theta_s)
                try:
                    loss = _pipeline_loss(unflatten_params(theta_s, model), plant, scenario, config)
                    worst = max(worst, loss)
                    losses.append(loss)
                except (RuntimeError, ValueError):
                    losses.append(None)
                    failed.append(s)
            losses = np.array([worst if L is None else L for L in losses], dtype=float)
            flagged += len(failed)
            if config.baseline == "none":
                baseline = None
            elif config.samples > 1:
                baseline = float(losses.mean())
            else:
                if r not in scen_baseline:
                    try:
                        scen_baseline[r] = _pipeline_loss(
                            unflatten_params(dist.mu, model), plant, scenario, config)
                    except (RuntimeError, ValueError):
                        scen_baseline[r] = float(losses.mean())
                baseline = scen_baseline[r]
            grad_mu, grad_sigma = score_gradient(losses, np.array(thetas), dist, baseline)
            if config.baseline != "none" and config.samples == 1:
                scen_baseline[r] = 0.5 * scen_baseline[r] + 0.5 * float(losses.mean())
            new_mu = _project_params(adam_mu.step(dist.mu, grad_mu, lr=lr), model)
            dist.set_mu(new_mu)
            if grad_sigma is not None:
                dist.set_sigma(adam_sigma.step(dist.sigma, grad_sigma, lr=lr))
            epoch_losses.extend(losses.tolist())
            grad_norms.append(float(np.linalg.norm(grad_mu)))

        mean_loss = float(np.mean(epoch_losses))
        prev_epoch_mean = mean_loss
        val = validation_loss(unflatten_params(dist.mu, model), plant, val_scenarios, config) \
            if val_scenarios else mean_loss
        log.epochs.append({
            "epoch": epoch, "val_loss": val, "mean_loss": mean_loss, "lr": lr,
            "grad_norm": float(np.mean(grad_norms)), "scenario_losses": epoch_losses,
            "flagged": flagged, "elapsed_s": round(time.perf_counter() - t0, 3),
        })
        if epoch_callback is not None:
            epoch_callback(epoch, unflatten_params(dist.mu, model), adam_mu)
        if val < best_val - 1e-12:
            best_val, best_mu = val, dist.mu.copy()
            log.best_epoch = epoch
            log.best_val_loss = val
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                log.stopped_early = True
                break
    return unflatten_params(best_mu, model), log


# ---------------------------------------------------------------------------
# Identify-then-optimize pretraining
# ---------------------------------------------------------------------------

def _nn_backprop_batch(model: NeuralThermalModel, x_norm, y_norm):
    """MSE loss and parameter gradients on normalized data; returns
    (loss, [dW_l, db_l, ...] in flatten order)."""
    acts = [x_norm]
    h = x_norm
    for layer in model.layers:
        pre = h @ layer.weights.T + layer.biases
        h = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
        acts.append(h)
    err = acts[-1] - y_norm
    n = x_norm.shape[0]
    loss = float((err ** 2).mean())
    # d loss / d out = 2 err / (n * Z)
    delta = 2.0 * err / err.size
    grads = []
    for li in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[li]
        inp = acts[li]
        if layer.activation == "relu":
            delta = delta * (acts[li + 1] > 0)
        gw = delta.T @ inp
        gb = delta.sum(axis=0)
        grads.append((gw, gb))
        if li > 0:
            delta = delta @ layer.weights
    grads.reverse()
    flat = np.concatenate([np.concatenate([g[0].ravel(), g[1]]) for g in grads])
    return loss, flat


def _fit_nn(model, dataset, epochs, lr, batch_size, seed, refit_normalization):
    if refit_normalization:
        in_mean = dataset.inputs.mean(axis=0)
        in_scale = np.maximum(dataset.inputs.std(axis=0), 1e-6)
        out_mean = dataset.targets.mean(axis=0)
        out_scale = np.maximum(dataset.targets.std(axis=0), 1e-6)
        model = replace(
            model, input_mean=in_mean, input_scale=in_scale,
            output_mean=out_mean, output_scale=out_scale,
        )
    x_norm = (dataset.inputs - model.input_mean) / model.input_scale
    y_norm = (dataset.targets - model.output_mean) / model.output_scale
    theta = flatten_params(model)
    adam = Adam(theta.shape[0], lr)
    rng = np.random.default_rng(seed)
    n = x_norm.shape[0]
    curve = []
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        nb = 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            current = unflatten_params(theta, model)
            loss, grad = _nn_backprop_batch(current, x_norm[idx], y_norm[idx])
            theta = adam.step(theta, grad)
            epoch_loss += loss
            nb += 1
        curve.append(epoch_loss / nb)
    return unflatten_params(theta, model), curve


def _fit_rc(model, dataset, epochs, lr, batch_size, seed):
    Z = model.zone_count
    tau = dataset.inputs[:, :Z]
    p_signed = dataset.inputs[:, Z:2 * Z]
    amb = dataset.inputs[:, 2 * Z][:, None]
    ph = np.maximum(p_signed, 0.0)
    pc = np.maximum(-p_signed, 0.0)
    y = dataset.targets
    dt = model.dt_hours
    theta = flatten_params(model)
    adam = Adam(theta.shape[0], lr)
    rng = np.random.default_rng(seed)
    n = tau.shape[0]
    curve = []
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        nb = 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            R, C = theta[:Z], theta[Z:2 * Z]
            eh, ec = theta[2 * Z:3 * Z], theta[3 * Z:]
            gain = (eh * ph[idx] - ec * pc[idx]) / C
            leak = (amb[idx] - tau[idx]) / (R * C)
            pred = tau[idx] + (gain + leak) * dt
            err = pred - y[idx]
            loss = float((err ** 2).mean())
            d = 2.0 * err / err.size * dt  # d loss / d (gain+leak), per sample and zone
            g_R = (d * -(amb[idx] - tau[idx]) / (R ** 2 * C)).sum(axis=0)
            g_C = (d * (-(eh * ph[idx] - ec * pc[idx]) / C ** 2 - (amb[idx] - tau[idx]) / (R * C ** 2))).sum(axis=0)
            g_eh = (d * ph[idx] / C).sum(axis=0)
            g_ec = (d * -pc[idx] / C).sum(axis=0)
            grad = np.concatenate([g_R, g_C, g_eh, g_ec])
            theta = np.maximum(adam.step(theta, grad), RC_PARAM_FLOOR)
            epoch_loss += loss
            nb += 1
        curve.append(epoch_loss / nb)
    return unflatten_params(theta, model), curve


def pretrain_ito(
    model: ThermalModel,
    dataset: PretrainingDataset,
    epochs: int = 50,
    lr: float = 1e-2,
    batch_size: int = 256,
    seed: int = 0,
    refit_normalization: bool = True,
) -> tuple[ThermalModel, list[float]]:
    """Supervised one-step fit on logged transitions (MSE by Adam).

    For networks the normalization statistics are computed from the dataset
    and then frozen; training runs in normalized space with analytic
    backprop.  For RC models the four physical parameter blocks are fit
    directly with positivity projection.  Returns (model, per-epoch loss).
    """
    if len(dataset) == 0:
        raise ValueError("empty pretraining dataset")
    if isinstance(model, NeuralThermalModel):
        return _fit_nn(model, dataset, epochs, lr, batch_size, seed, refit_normalization)
    return _fit_rc(model, dataset, epochs, lr, batch_size, seed)

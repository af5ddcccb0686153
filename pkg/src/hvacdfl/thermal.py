"""Thermal dynamics models for multi-zone buildings.

Two interchangeable one-step models map the building state at hour t to the
zone temperatures at t+1:

* ``NeuralThermalModel`` — a fully connected ReLU network over normalized
  inputs.  The input vector is ``[tau_in (Z), p_signed (Z), tau_amb (1)]``
  where ``p_signed = p_heat - p_cool`` (heating positive, cooling negative,
  kW electric).  Output is the denormalized next-step zone temperature
  vector (deg C).  Convention tag: ``signed-power-v1``.

* ``RcThermalModel`` — a lumped resistance/capacitance circuit per zone:

      tau' = tau + ((eta_h*p_h - eta_c*p_c)/C + (tau_amb - tau)/(R*C)) * dt

  with R in K/kW, C in kWh/K, efficiencies dimensionless, dt in hours.

Both models are immutable values: every operation returns new arrays and
never mutates the model, so instances can be shared freely across threads.
Trainable parameters flatten to a single vector with a stable index map
(``flatten_params`` / ``unflatten_params``) so optimizers and perturbation
schemes can treat either model as a flat parameter set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "DenseLayer",
    "NeuralThermalModel",
    "RcThermalModel",
    "build_nn_model",
    "nn_forward",
    "rc_step",
    "rollout",
    "flatten_params",
    "unflatten_params",
    "model_to_json",
    "model_from_json",
]

CONVENTION_TAG = "signed-power-v1"


class ShapeError(ValueError):
    """Model/input dimension mismatch."""


@dataclass(frozen=True)
class DenseLayer:
    """One affine layer; ``activation`` is 'relu' for hidden, 'identity' for output."""

    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.biases, dtype=float)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ShapeError(f"layer shapes {w.shape} / {b.shape} do not conform")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class NeuralThermalModel:
    """ReLU network with affine input normalization and output denormalization.

    ``input_mean``/``input_scale`` normalize the raw 2Z+1 input
    (``x_norm = (x - mean) / scale``); ``output_mean``/``output_scale``
    map the network output back to deg C.  Scales must be strictly positive.
    Hidden layers are ReLU; the last layer is affine with Z outputs.
    """

    layers: tuple[DenseLayer, ...]
    input_mean: np.ndarray
    input_scale: np.ndarray
    output_mean: np.ndarray
    output_scale: np.ndarray
    zone_count: int

    def __post_init__(self):
        for name in ("input_mean", "input_scale", "output_mean", "output_scale"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "layers", tuple(self.layers))
        z = self.zone_count
        if len(self.layers) < 1:
            raise ShapeError("need at least one layer")
        if self.layers[0].in_dim != self.input_width:
            raise ShapeError(
                f"first layer expects {self.layers[0].in_dim} inputs, model has {self.input_width}"
            )
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise ShapeError("layer widths do not chain")
        if self.layers[-1].out_dim != z:
            raise ShapeError("output layer must have one output per zone")
        if self.layers[-1].activation != "identity":
            raise ValueError("final layer must be affine")
        if any(l.activation != "relu" for l in self.layers[:-1]):
            raise ValueError("hidden layers must be relu")
        if self.input_mean.shape != (self.input_width,) or self.input_scale.shape != (self.input_width,):
            raise ShapeError("normalization stats must match input width")
        if self.output_mean.shape != (z,) or self.output_scale.shape != (z,):
            raise ShapeError("denormalization stats must match zone count")
        if np.any(self.input_scale <= 0) or np.any(self.output_scale <= 0):
            raise ValueError("normalization scales must be strictly positive")

    @property
    def input_width(self) -> int:
        # Z temperatures + Z signed powers + ambient
        return 2 * self.zone_count + 1

    @property
    def hidden_layers(self) -> tuple[DenseLayer, ...]:
        return self.layers[:-1]

    @property
    def param_count(self) -> int:
        return sum(l.weights.size + l.biases.size for l in self.layers)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.input_mean) / self.input_scale

    def denormalize_output(self, u: np.ndarray) -> np.ndarray:
        return self.output_scale * np.asarray(u, dtype=float) + self.output_mean


@dataclass(frozen=True)
class RcThermalModel:
    """Per-zone lumped RC model; all parameters strictly positive."""

    resistance: np.ndarray  # K/kW, per zone
    capacitance: np.ndarray  # kWh/K, per zone
    eta_heat: np.ndarray  # per zone
    eta_cool: np.ndarray  # per zone
    dt_hours: float = 1.0

    def __post_init__(self):
        for name in ("resistance", "capacitance", "eta_heat", "eta_cool"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if arr.ndim != 1 or arr.shape != self.resistance.shape:
                raise ShapeError("RC parameter vectors must share one per-zone shape")
            if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be strictly positive and finite")
        if not self.dt_hours > 0:
            raise ValueError("dt_hours must be positive")

    @property
    def zone_count(self) -> int:
        return self.resistance.shape[0]

    @property
    def param_count(self) -> int:
        return 4 * self.zone_count


ThermalModel = NeuralThermalModel | RcThermalModel


def build_nn_model(
    zone_count: int,
    hidden_sizes: list[int],
    rng: np.random.Generator,
    input_mean=None,
    input_scale=None,
    output_mean=None,
    output_scale=None,
    weight_scale: float = 0.5,
) -> NeuralThermalModel:
    """Random small ReLU model (He-style init); identity normalization by default."""
    width = 2 * zone_count + 1
    dims = [width] + list(hidden_sizes) + [zone_count]
    layers = []
    for i, (din, dout) in enumerate(zip(dims, dims[1:])):
        w = rng.normal(0.0, weight_scale / np.sqrt(din), size=(dout, din))
        b = rng.normal(0.0, 0.1, size=dout)
        act = "identity" if i == len(dims) - 2 else "relu"
        layers.append(DenseLayer(w, b, act))
    return NeuralThermalModel(
        layers=tuple(layers),
        input_mean=np.zeros(width) if input_mean is None else input_mean,
        input_scale=np.ones(width) if input_scale is None else input_scale,
        output_mean=np.zeros(zone_count) if output_mean is None else output_mean,
        output_scale=np.ones(zone_count) if output_scale is None else output_scale,
        zone_count=zone_count,
    )


def _stack_inputs(tau_in, p_heat, p_cool, tau_amb, zone_count: int) -> np.ndarray:
    tau_in = np.asarray(tau_in, dtype=float)
    p_heat = np.asarray(p_heat, dtype=float)
    p_cool = np.asarray(p_cool, dtype=float)
    if tau_in.shape != (zone_count,) or p_heat.shape != (zone_count,) or p_cool.shape != (zone_count,):
        raise ShapeError("inputs must be per-zone vectors")
    x = np.concatenate([tau_in, p_heat - p_cool, [float(tau_amb)]])
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")
    return x


def nn_forward(model: NeuralThermalModel, tau_in, p_heat, p_cool, tau_amb) -> np.ndarray:
    """One-step prediction: next zone temperatures in deg C."""
    h = model.normalize(_stack_inputs(tau_in, p_heat, p_cool, tau_amb, model.zone_count))
    for layer in model.layers:
        h = layer.weights @ h + layer.biases
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
    return model.denormalize_output(h)


def rc_step(model: RcThermalModel, tau_in, p_heat, p_cool, tau_amb) -> np.ndarray:
    """One RC step; affine in all inputs."""
    tau_in = np.asarray(tau_in, dtype=float)
    p_heat = np.asarray(p_heat, dtype=float)
    p_cool = np.asarray(p_cool, dtype=float)
    if not (np.all(np.isfinite(tau_in)) and np.all(np.isfinite(p_heat)) and np.all(np.isfinite(p_cool))):
        raise ValueError("inputs must be finite")
    gain = (model.eta_heat * p_heat - model.eta_cool * p_cool) / model.capacitance
    leak = (float(tau_amb) - tau_in) / (model.resistance * model.capacitance)
    return tau_in + (gain + leak) * model.dt_hours


def step(model: ThermalModel, tau_in, p_heat, p_cool, tau_amb) -> np.ndarray:
    """Dispatch one model step regardless of model family."""
    if isinstance(model, NeuralThermalModel):
        return nn_forward(model, tau_in, p_heat, p_cool, tau_amb)
    return rc_step(model, tau_in, p_heat, p_cool, tau_amb)


def rollout(model: ThermalModel, tau0, tau_amb, p_heat, p_cool) -> np.ndarray:
    """Multi-step trajectory.

    ``tau_amb`` has T entries, ``p_heat``/``p_cool`` are (T, Z); the result is
    (T+1, Z) with row 0 equal to ``tau0``.
    """
    p_heat = np.asarray(p_heat, dtype=float)
    p_cool = np.asarray(p_cool, dtype=float)
    tau_amb = np.asarray(tau_amb, dtype=float)
    horizon = tau_amb.shape[0]
    if p_heat.shape[0] != horizon or p_cool.shape[0] != horizon:
        raise ShapeError("power schedule must match the ambient horizon")
    traj = np.empty((horizon + 1, p_heat.shape[1]))
    traj[0] = np.asarray(tau0, dtype=float)
    for t in range(horizon):
        traj[t + 1] = step(model, traj[t], p_heat[t], p_cool[t], tau_amb[t])
    return traj


# ---------------------------------------------------------------------------
# Flat parameter vector
# ---------------------------------------------------------------------------

def flatten_params(model: ThermalModel) -> np.ndarray:
    """All trainable scalars in a stable order.

    NN: layer by layer, weights row-major then biases.  RC: R, C, eta_h,
    eta_c blocks, zone-major inside each block.  Normalization statistics are
    frozen and not part of the vector.
    """
    if isinstance(model, NeuralThermalModel):
        parts = []
        for layer in model.layers:
            parts.append(layer.weights.ravel())
            parts.append(layer.biases)
        return np.concatenate(parts)
    return np.concatenate([model.resistance, model.capacitance, model.eta_heat, model.eta_cool])


def unflatten_params(theta: np.ndarray, template: ThermalModel) -> ThermalModel:
    """Inverse of :func:`flatten_params` against a structural template."""
    theta = np.asarray(theta, dtype=float)
    if isinstance(template, NeuralThermalModel):
        if theta.shape != (template.param_count,):
            raise ShapeError(f"expected {template.param_count} parameters, got {theta.shape}")
        layers = []
        pos = 0
        for layer in template.layers:
            n_w = layer.weights.size
            w = theta[pos:pos + n_w].reshape(layer.weights.shape)
            pos += n_w
            b = theta[pos:pos + layer.out_dim]
            pos += layer.out_dim
            layers.append(DenseLayer(w, b, layer.activation))
        return replace(template, layers=tuple(layers))
    z = template.zone_count
    if theta.shape != (4 * z,):
        raise ShapeError(f"expected {4 * z} parameters, got {theta.shape}")
    return RcThermalModel(
        resistance=theta[0:z],
        capacitance=theta[z:2 * z],
        eta_heat=theta[2 * z:3 * z],
        eta_cool=theta[3 * z:4 * z],
        dt_hours=template.dt_hours,
    )


def param_index_map(model: ThermalModel) -> list[tuple]:
    """Human-readable address of every flat index: (layer, 'w', row, col) /
    (layer, 'b', row) for NN, (field, zone) for RC."""
    entries: list[tuple] = []
    if isinstance(model, NeuralThermalModel):
        for li, layer in enumerate(model.layers):
            for r in range(layer.out_dim):
                for c in range(layer.in_dim):
                    entries.append((li, "w", r, c))
            for r in range(layer.out_dim):
                entries.append((li, "b", r))
    else:
        for name in ("R", "C", "eta_h", "eta_c"):
            for z in range(model.zone_count):
                entries.append((name, z))
    return entries


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def model_to_json(model: ThermalModel) -> str:
    if isinstance(model, NeuralThermalModel):
        doc = {
            "kind": "nn",
            "convention": CONVENTION_TAG,
            "zone_count": model.zone_count,
            "architecture": [l.out_dim for l in model.layers],
            "layers": [
                {"weights": l.weights.tolist(), "biases": l.biases.tolist(), "activation": l.activation}
                for l in model.layers
            ],
            "input_mean": model.input_mean.tolist(),
            "input_scale": model.input_scale.tolist(),
            "output_mean": model.output_mean.tolist(),
            "output_scale": model.output_scale.tolist(),
        }
    else:
        doc = {
            "kind": "rc",
            "zone_count": model.zone_count,
            "resistance": model.resistance.tolist(),
            "capacitance": model.capacitance.tolist(),
            "eta_heat": model.eta_heat.tolist(),
            "eta_cool": model.eta_cool.tolist(),
            "dt_hours": model.dt_hours,
        }
    return json.dumps(doc, indent=1, sort_keys=True)


def model_from_json(text: str) -> ThermalModel:
    doc = json.loads(text)
    if doc["kind"] == "nn":
        if doc.get("convention") != CONVENTION_TAG:
            raise ValueError(f"unsupported input convention {doc.get('convention')!r}")
        layers = tuple(
            DenseLayer(np.array(l["weights"]), np.array(l["biases"]), l["activation"])
            for l in doc["layers"]
        )
        return NeuralThermalModel(
            layers=layers,
            input_mean=np.array(doc["input_mean"]),
            input_scale=np.array(doc["input_scale"]),
            output_mean=np.array(doc["output_mean"]),
            output_scale=np.array(doc["output_scale"]),
            zone_count=doc["zone_count"],
        )
    if doc["kind"] == "rc":
        return RcThermalModel(
            resistance=np.array(doc["resistance"]),
            capacitance=np.array(doc["capacitance"]),
            eta_heat=np.array(doc["eta_heat"]),
            eta_cool=np.array(doc["eta_cool"]),
            dt_hours=doc["dt_hours"],
        )
    raise ValueError(f"unknown model kind {doc['kind']!r}")

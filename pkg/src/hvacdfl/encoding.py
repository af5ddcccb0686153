"""Compile a thermal model plus a daily scenario into a solver-ready MIQP.

The schedule problem minimizes demand charge + time-of-use energy cost
(+ a quadratic comfort penalty in ``penalty`` mode) subject to:

* one-step thermal dynamics unrolled over the horizon (NN rows with exact
  big-M ReLU reformulation, or affine RC rows),
* the initial zone temperatures,
* HVAC capacity boxes, power balance, peak definition, line limits.

Each ReLU neuron n gets a binary ``sigma`` and continuous ``yhat``/``y``
with rows::

    yhat - y <= 0                      (y >= max(0, yhat) lower envelope)
    y - Ymax * sigma <= 0
    y - yhat - Ymin * sigma <= -Ymin   (y <= yhat - Ymin*(1-sigma))
    y >= 0                             (variable bound)

``Ymin``/``Ymax`` are per-neuron preactivation bounds from interval
arithmetic over the declared input box.  Inputs that are known before
solving (the ambient temperature) collapse to singleton intervals, which
shrinks the big-M constants; with all inputs normalized, the shrink factor
per first-layer neuron is ``1 - sum|w_param| / sum|w_all|``.  Neurons whose
preactivation interval does not straddle zero are stabilized: sigma is
fixed through its bounds and the big-M rows are dropped in favor of
``y = 0`` or ``y = yhat``.

Variable order is deterministic (time-major, then zone, then neuron) so
solver traces reproduce bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .scenarios import BuildingScenario
from .thermal import NeuralThermalModel, RcThermalModel, ThermalModel

__all__ = [
    "InputBox",
    "NeuronBounds",
    "MiqpInstance",
    "ReluGroup",
    "physical_input_box",
    "degenerate_known_inputs",
    "propagate_bounds",
    "predicted_tightening_ratio",
    "relu_rows",
    "build_miqp",
    "apply_binary_pattern",
    "export_lp",
]

TAU_VAR_MIN = 5.0
TAU_VAR_MAX = 40.0
AMBIENT_PHYS_MIN = -30.0
AMBIENT_PHYS_MAX = 45.0


@dataclass(frozen=True)
class InputBox:
    """Per-input interval in raw (unnormalized) units; lo == hi allowed."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be matching vectors")
        if np.any(lo > hi):
            raise ValueError("box must satisfy lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> int:
        return self.lo.shape[0]


@dataclass(frozen=True)
class NeuronBounds:
    """Preactivation intervals per layer, in normalized units.

    ``pre_lo[l]``/``pre_hi[l]`` have one entry per neuron of layer l
    (hidden layers and the output layer).
    """

    pre_lo: tuple[np.ndarray, ...]
    pre_hi: tuple[np.ndarray, ...]

    def hidden(self) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
        return tuple(zip(self.pre_lo[:-1], self.pre_hi[:-1]))


def physical_input_box(model: NeuralThermalModel, scenario: BuildingScenario) -> InputBox:
    """Sound box for the NN inputs when nothing is pinned.

    Temperatures use absolute limits (comfort may be violated in penalty
    mode), powers use the signed capacity range, ambient its climate range.
    """
    z = model.zone_count
    lo = np.concatenate([
        np.full(z, TAU_VAR_MIN),
        -scenario.cap_cool,
        [AMBIENT_PHYS_MIN],
    ])
    hi = np.concatenate([
        np.full(z, TAU_VAR_MAX),
        scenario.cap_heat,
        [AMBIENT_PHYS_MAX],
    ])
    return InputBox(lo, hi)


def degenerate_known_inputs(box: InputBox, scenario: BuildingScenario, t: int) -> InputBox:
    """Collapse the ambient input to the known value at step t."""
    amb = float(scenario.tau_amb[t])
    lo = box.lo.copy()
    hi = box.hi.copy()
    lo[-1] = amb
    hi[-1] = amb
    return InputBox(lo, hi)


def propagate_bounds(model: NeuralThermalModel, box: InputBox) -> NeuronBounds:
    """Layer-by-layer interval arithmetic.

    Positive weights take the interval's matching end, negative weights the
    opposite end; hidden outputs are clamped at zero before the next layer.
    """
    if box.width != model.input_width:
        raise ValueError(f"box width {box.width} != model input width {model.input_width}")
    lo = (box.lo - model.input_mean) / model.input_scale
    hi = (box.hi - model.input_mean) / model.input_scale
    pre_lo, pre_hi = [], []
    for layer in model.layers:
        w_pos = np.maximum(layer.weights, 0.0)
        w_neg = np.minimum(layer.weights, 0.0)
        p_lo = w_pos @ lo + w_neg @ hi + layer.biases
        p_hi = w_pos @ hi + w_neg @ lo + layer.biases
        pre_lo.append(p_lo)
        pre_hi.append(p_hi)
        if layer.activation == "relu":
            lo = np.maximum(p_lo, 0.0)
            hi = np.maximum(p_hi, 0.0)
    return NeuronBounds(tuple(pre_lo), tuple(pre_hi))


def predicted_tightening_ratio(model: NeuralThermalModel) -> np.ndarray:
    """Expected |interval after pinning parameters| / |before|, per first-layer neuron.

    The ambient input (last column) is the known parameter.  Mixed-sign
    weights enter through their absolute values; a neuron with zero total
    weight reports 1 (nothing to tighten).
    """
    w = np.abs(model.layers[0].weights)
    total = w.sum(axis=1)
    param = w[:, -1]
    ratio = np.ones_like(total)
    nz = total > 0
    ratio[nz] = 1.0 - param[nz] / total[nz]
    return ratio


def relu_rows(yhat_lo: float, yhat_hi: float) -> list[tuple[dict[str, float], float]]:
    """Big-M rows for one unstable neuron over symbols 'yhat', 'y', 'sigma'.

    Rows are ``coeffs . vars <= rhs``; combined with ``y >= 0`` they carve
    out exactly the ReLU graph for integral sigma.
    """
    if yhat_lo > yhat_hi:
        raise ValueError("need yhat_lo <= yhat_hi")
    return [
        ({"yhat": 1.0, "y": -1.0}, 0.0),
        ({"y": 1.0, "sigma": -yhat_hi}, 0.0),
        ({"y": 1.0, "yhat": -1.0, "sigma": -yhat_lo}, -yhat_lo),
    ]


# ---------------------------------------------------------------------------
# Instance container
# ---------------------------------------------------------------------------

@dataclass
class ReluGroup:
    """Bookkeeping for one neuron at one timestep."""

    t: int
    layer: int
    neuron: int
    yhat_id: int
    y_id: int
    sigma_id: int
    lo: float
    hi: float
    stable: str  # '', 'neg' (y=0), 'pos' (y=yhat)
    le_rows: tuple[int, int, int] | None  # indices into A_le when unstable


@dataclass
class EncodingMeta:
    tau_ids: np.ndarray  # (T+1, Z)
    ph_ids: np.ndarray  # (T, Z)
    pc_ids: np.ndarray  # (T, Z)
    phvac_ids: np.ndarray  # (T, Z)
    pi_ids: np.ndarray  # (T,)
    pe_ids: np.ndarray  # (T,)
    pd_id: int
    relu_groups: list[ReluGroup] = field(default_factory=list)
    bounds_by_step: list[NeuronBounds] | None = None
    mode: str = "penalty"
    tightened: bool = True

    def groups_by_sigma(self) -> dict[int, ReluGroup]:
        return {g.sigma_id: g for g in self.relu_groups}


@dataclass
class MiqpInstance:
    """Variables, rows and a convex diagonal-quadratic objective.

    objective(x) = obj_const + obj_lin . x + sum_k obj_quad[k] * x[k]^2
    with every ``obj_quad`` entry >= 0.  Rows are split into equalities
    (A_eq x = b_eq) and inequalities (A_le x <= b_le); variable boxes live
    in ``lb``/``ub``.  ``binary_idx`` flags the sigma columns.
    """

    var_names: list[str]
    lb: np.ndarray
    ub: np.ndarray
    binary_idx: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_le: sp.csr_matrix
    b_le: np.ndarray
    obj_lin: np.ndarray
    obj_quad: np.ndarray
    obj_const: float
    meta: EncodingMeta | None = None

    @property
    def n_vars(self) -> int:
        return self.lb.shape[0]

    def objective_value(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.obj_const + self.obj_lin @ x + self.obj_quad @ (x * x))

    def free_binaries(self) -> np.ndarray:
        """Binary columns whose bounds still allow both values."""
        b = self.binary_idx
        return b[(self.ub[b] - self.lb[b]) > 0.5]

    def copy(self) -> "MiqpInstance":
        return MiqpInstance(
            var_names=self.var_names,
            lb=self.lb.copy(),
            ub=self.ub.copy(),
            binary_idx=self.binary_idx,
            A_eq=self.A_eq,
            b_eq=self.b_eq,
            A_le=self.A_le,
            b_le=self.b_le,
            obj_lin=self.obj_lin,
            obj_quad=self.obj_quad,
            obj_const=self.obj_const,
            meta=self.meta,
        )


class _Builder:
    def __init__(self):
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.binary: list[int] = []
        self.eq_rows: list[tuple[list[int], list[float], float]] = []
        self.le_rows: list[tuple[list[int], list[float], float]] = []

    def var(self, name: str, lo: float, hi: float, binary: bool = False) -> int:
        idx = len(self.names)
        self.names.append(name)
        self.lb.append(lo)
        self.ub.append(hi)
        if binary:
            self.binary.append(idx)
        return idx

    def eq(self, ids: list[int], coefs: list[float], rhs: float) -> int:
        self.eq_rows.append((ids, coefs, rhs))
        return len(self.eq_rows) - 1

    def le(self, ids: list[int], coefs: list[float], rhs: float) -> int:
        self.le_rows.append((ids, coefs, rhs))
        return len(self.le_rows) - 1

    def _mat(self, rows) -> tuple[sp.csr_matrix, np.ndarray]:
        n = len(self.names)
        data, ri, ci, rhs = [], [], [], []
        for r, (ids, coefs, b) in enumerate(rows):
            ri.extend([r] * len(ids))
            ci.extend(ids)
            data.extend(coefs)
            rhs.append(b)
        mat = sp.coo_matrix((data, (ri, ci)), shape=(len(rows), n)).tocsr()
        return mat, np.asarray(rhs, dtype=float)

    def finish(self, obj_lin, obj_quad, obj_const, meta) -> MiqpInstance:
        A_eq, b_eq = self._mat(self.eq_rows)
        A_le, b_le = self._mat(self.le_rows)
        return MiqpInstance(
            var_names=self.names,
            lb=np.asarray(self.lb, dtype=float),
            ub=np.asarray(self.ub, dtype=float),
            binary_idx=np.asarray(self.binary, dtype=int),
            A_eq=A_eq,
            b_eq=b_eq,
            A_le=A_le,
            b_le=b_le,
            obj_lin=obj_lin,
            obj_quad=obj_quad,
            obj_const=obj_const,
            meta=meta,
        )


# ---------------------------------------------------------------------------
# Main build
# ---------------------------------------------------------------------------

def build_miqp(
    model: ThermalModel,
    scenario: BuildingScenario,
    mode: str = "penalty",
    tighten_ambient: bool = True,
) -> MiqpInstance:
    """Compile the day-ahead schedule problem.

    ``mode='hard_comfort'`` enforces the comfort band through the
    temperature variable bounds and prices energy only; ``mode='penalty'``
    frees the band and adds the occupancy-weighted quadratic deviation
    penalty.  ``tighten_ambient=False`` keeps the ambient input at its
    climate-wide interval (the untightened baseline formulation).
    """
    if mode not in ("penalty", "hard_comfort"):
        raise ValueError(f"unknown mode {mode!r}")
    if isinstance(model, NeuralThermalModel) and model.zone_count != scenario.zones:
        raise ValueError("model and scenario zone counts differ")
    if isinstance(model, RcThermalModel):
        if model.zone_count != scenario.zones:
            raise ValueError("model and scenario zone counts differ")
        if abs(model.dt_hours - scenario.dt_hours) > 1e-12:
            raise ValueError("RC model step and scenario step differ")
    T, Z = scenario.horizon, scenario.zones
    b = _Builder()

    pd_id = b.var("pd", 0.0, 2.0 * scenario.line_cap)
    tau_ids = np.empty((T + 1, Z), dtype=int)
    for z in range(Z):
        tau_ids[0, z] = b.var(f"tau[0,{z}]", TAU_VAR_MIN, TAU_VAR_MAX)

    ph_ids = np.empty((T, Z), dtype=int)
    pc_ids = np.empty((T, Z), dtype=int)
    phvac_ids = np.empty((T, Z), dtype=int)
    pi_ids = np.empty(T, dtype=int)
    pe_ids = np.empty(T, dtype=int)
    relu_groups: list[ReluGroup] = []
    bounds_by_step: list[NeuronBounds] = []

    is_nn = isinstance(model, NeuralThermalModel)
    if is_nn:
        base_box = physical_input_box(model, scenario)
        if not tighten_ambient:
            shared_bounds = propagate_bounds(model, base_box)
        # forward reachability of the temperature inputs: stepwise interval
        # image of the dynamics, anchored at the known initial state
        reach_lo = scenario.tau0.astype(float).copy()
        reach_hi = scenario.tau0.astype(float).copy()

    for z in range(Z):
        b.eq([tau_ids[0, z]], [1.0], float(scenario.tau0[z]))

    for t in range(T):
        for z in range(Z):
            ph_ids[t, z] = b.var(f"ph[{t},{z}]", 0.0, float(scenario.cap_heat[z]))
        for z in range(Z):
            pc_ids[t, z] = b.var(f"pc[{t},{z}]", 0.0, float(scenario.cap_cool[z]))
        for z in range(Z):
            phvac_ids[t, z] = b.var(
                f"phvac[{t},{z}]", 0.0, float(scenario.cap_heat[z] + scenario.cap_cool[z])
            )
        pi_ids[t] = b.var(f"pi[{t}]", 0.0, scenario.line_cap)
        pe_ids[t] = b.var(f"pe[{t}]", 0.0, scenario.line_cap)

        for z in range(Z):
            b.eq(
                [phvac_ids[t, z], ph_ids[t, z], pc_ids[t, z]],
                [1.0, -1.0, -1.0],
                0.0,
            )
        b.eq(
            [pi_ids[t], pe_ids[t]] + list(phvac_ids[t]),
            [1.0, -1.0] + [-1.0] * Z,
            float(scenario.p_nondispatch[t] - scenario.p_generation[t]),
        )
        b.le([pi_ids[t], pe_ids[t], pd_id], [1.0, 1.0, -1.0], 0.0)

        # next-step temperatures
        if mode == "hard_comfort":
            tlo = np.maximum(scenario.comfort_lo[t], TAU_VAR_MIN)
            thi = np.minimum(scenario.comfort_hi[t], TAU_VAR_MAX)
        else:
            tlo = np.full(Z, TAU_VAR_MIN)
            thi = np.full(Z, TAU_VAR_MAX)

        if is_nn:
            if tighten_ambient:
                box = degenerate_known_inputs(base_box, scenario, t)
                lo = box.lo.copy()
                hi = box.hi.copy()
                lo[:Z] = reach_lo
                hi[:Z] = reach_hi
                nb = propagate_bounds(model, InputBox(lo, hi))
                out_lo = model.output_scale * nb.pre_lo[-1] + model.output_mean
                out_hi = model.output_scale * nb.pre_hi[-1] + model.output_mean
                reach_lo = np.maximum(out_lo, tlo)
                reach_hi = np.minimum(out_hi, thi)
                if np.any(reach_lo > reach_hi):
                    raise ValueError(
                        f"dynamics leave the admissible temperature box at step {t + 1}"
                    )
                tlo, thi = reach_lo, reach_hi
            else:
                nb = shared_bounds
            bounds_by_step.append(nb)
            for z in range(Z):
                tau_ids[t + 1, z] = b.var(f"tau[{t + 1},{z}]", float(tlo[z]), float(thi[z]))
            _emit_nn_rows(b, model, scenario, t, tau_ids, ph_ids, pc_ids, nb, relu_groups)
        else:
            for z in range(Z):
                tau_ids[t + 1, z] = b.var(f"tau[{t + 1},{z}]", float(tlo[z]), float(thi[z]))
            _emit_rc_rows(b, model, scenario, t, tau_ids, ph_ids, pc_ids)

    obj_lin = np.zeros(len(b.names))
    obj_quad = np.zeros(len(b.names))
    obj_const = 0.0
    obj_lin[pd_id] = scenario.lambda_demand
    dt = scenario.dt_hours
    for t in range(T):
        obj_lin[pi_ids[t]] += scenario.lambda_imp[t] * dt
        obj_lin[pe_ids[t]] -= scenario.lambda_exp[t] * dt
        if mode == "penalty":
            for z in range(Z):
                o = scenario.occupancy[t, z]
                tgt = scenario.t_target[t, z]
                obj_quad[tau_ids[t + 1, z]] += o
                obj_lin[tau_ids[t + 1, z]] += -2.0 * o * tgt
                obj_const += o * tgt * tgt

    meta = EncodingMeta(
        tau_ids=tau_ids,
        ph_ids=ph_ids,
        pc_ids=pc_ids,
        phvac_ids=phvac_ids,
        pi_ids=pi_ids,
        pe_ids=pe_ids,
        pd_id=pd_id,
        relu_groups=relu_groups,
        bounds_by_step=bounds_by_step if is_nn else None,
        mode=mode,
        tightened=tighten_ambient,
    )
    return b.finish(obj_lin, obj_quad, obj_const, meta)


def _emit_nn_rows(b, model, scenario, t, tau_ids, ph_ids, pc_ids, nb: NeuronBounds, relu_groups):
    """Unroll the network at step t: preactivation equalities, ReLU big-M
    rows (or stabilized fixes), and the denormalized output rows."""
    Z = model.zone_count
    mean, scale = model.input_mean, model.input_scale
    amb = float(scenario.tau_amb[t])
    prev_y_ids: list[int] | None = None  # None = network inputs

    for li, layer in enumerate(model.layers):
        hidden = layer.activation == "relu"
        lo_l, hi_l = nb.pre_lo[li], nb.pre_hi[li]
        if hidden:
            yhat_ids, y_ids, sig_ids = [], [], []
            for n in range(layer.out_dim):
                lo, hi = float(lo_l[n]), float(hi_l[n])
                yhat_ids.append(b.var(f"yhat[{t},{li},{n}]", lo, hi))
                y_ids.append(b.var(f"y[{t},{li},{n}]", 0.0, max(0.0, hi)))
                if hi <= 0.0:
                    stable = "neg"
                    sig = b.var(f"sigma[{t},{li},{n}]", 0.0, 0.0, binary=True)
                elif lo >= 0.0:
                    stable = "pos"
                    sig = b.var(f"sigma[{t},{li},{n}]", 1.0, 1.0, binary=True)
                else:
                    stable = ""
                    sig = b.var(f"sigma[{t},{li},{n}]", 0.0, 1.0, binary=True)
                sig_ids.append(sig)
                relu_groups.append(
                    ReluGroup(t, li, n, yhat_ids[-1], y_ids[-1], sig, lo, hi, stable, None)
                )

        # preactivation equality rows: yhat - w.x = rhs
        for n in range(layer.out_dim):
            w = layer.weights[n]
            if prev_y_ids is None:
                # first layer reads the normalized scenario variables
                row_ids: list[int] = []
                row_coefs: list[float] = []
                rhs = float(layer.biases[n])
                for z in range(Z):
                    c = w[z] / scale[z]
                    row_ids.append(int(tau_ids[t, z]))
                    row_coefs.append(-c)
                    rhs -= w[z] * mean[z] / scale[z]
                for z in range(Z):
                    c = w[Z + z] / scale[Z + z]
                    row_ids.append(int(ph_ids[t, z]))
                    row_coefs.append(-c)
                    row_ids.append(int(pc_ids[t, z]))
                    row_coefs.append(c)
                    rhs -= w[Z + z] * mean[Z + z] / scale[Z + z]
                rhs += w[2 * Z] * (amb - mean[2 * Z]) / scale[2 * Z]
            else:
                row_ids = list(prev_y_ids)
                row_coefs = [-float(wj) for wj in w]
                rhs = float(layer.biases[n])

            if hidden:
                out_id = yhat_ids[n]
                b.eq([out_id] + row_ids, [1.0] + row_coefs, rhs)
            else:
                # output row folds the denormalization: tau = s_out*(w.y + b) + m_out
                s_out = float(model.output_scale[n])
                m_out = float(model.output_mean[n])
                out_id = int(tau_ids[t + 1, n])
                b.eq(
                    [out_id] + row_ids,
                    [1.0] + [s_out * c for c in row_coefs],
                    s_out * rhs + m_out,
                )

        if hidden:
            base = len(relu_groups) - layer.out_dim
            for n in range(layer.out_dim):
                g = relu_groups[base + n]
                if g.stable == "neg":
                    b.eq([g.y_id], [1.0], 0.0)
                elif g.stable == "pos":
                    b.eq([g.y_id, g.yhat_id], [1.0, -1.0], 0.0)
                else:
                    rows = relu_rows(g.lo, g.hi)
                    symbol_ids = {"yhat": g.yhat_id, "y": g.y_id, "sigma": g.sigma_id}
                    idxs = []
                    for coefs, rhs in rows:
                        ids = [symbol_ids[s] for s in coefs]
                        idxs.append(b.le(ids, list(coefs.values()), rhs))
                    g.le_rows = (idxs[0], idxs[1], idxs[2])
            prev_y_ids = y_ids


def _emit_rc_rows(b, model: RcThermalModel, scenario, t, tau_ids, ph_ids, pc_ids):
    Z = model.zone_count
    dt = model.dt_hours
    amb = float(scenario.tau_amb[t])
    for z in range(Z):
        rc = model.resistance[z] * model.capacitance[z]
        a = 1.0 - dt / rc
        gh = model.eta_heat[z] * dt / model.capacitance[z]
        gc = model.eta_cool[z] * dt / model.capacitance[z]
        b.eq(
            [int(tau_ids[t + 1, z]), int(tau_ids[t, z]), int(ph_ids[t, z]), int(pc_ids[t, z])],
            [1.0, -a, -gh, gc],
            dt / rc * amb,
        )


# ---------------------------------------------------------------------------
# Binary fixing (used by branch & bound and the fixed-binary baseline)
# ---------------------------------------------------------------------------

def apply_binary_pattern(instance: MiqpInstance, pattern: dict[int, int]) -> MiqpInstance | None:
    """Fix a subset of sigma variables and simplify their neurons.

    sigma=0 pins y to 0 and caps yhat at 0; sigma=1 adds ``y = yhat`` and
    floors yhat at 0.  The three big-M rows of a fixed neuron are dropped.
    Returns None when the fixes contradict the variable bounds (infeasible
    by presolve).  Keys must be sigma column indices of unstable neurons.
    """
    if not pattern:
        return instance
    groups = instance.meta.groups_by_sigma() if instance.meta else {}
    lb = instance.lb.copy()
    ub = instance.ub.copy()
    drop_rows: list[int] = []
    extra_eq_ids: list[tuple[int, int]] = []  # (y, yhat) aliases for sigma=1
    for sig_id, val in pattern.items():
        if sig_id not in groups:
            raise KeyError(f"column {sig_id} is not a relaxable binary")
        g = groups[sig_id]
        if g.le_rows is None:
            raise ValueError(f"neuron ({g.t},{g.layer},{g.neuron}) was stabilized; cannot fix")
        if val not in (0, 1):
            raise ValueError("binary values must be 0 or 1")
        lb[sig_id] = ub[sig_id] = float(val)
        if val == 0:
            ub[g.y_id] = min(ub[g.y_id], 0.0)
            ub[g.yhat_id] = min(ub[g.yhat_id], 0.0)
        else:
            lb[g.yhat_id] = max(lb[g.yhat_id], 0.0)
            extra_eq_ids.append((g.y_id, g.yhat_id))
        drop_rows.extend(g.le_rows)
    if np.any(lb > ub + 1e-12):
        return None

    keep = np.ones(instance.A_le.shape[0], dtype=bool)
    keep[drop_rows] = False
    A_le = instance.A_le[keep]
    b_le = instance.b_le[keep]
    if extra_eq_ids:
        data, ri, ci = [], [], []
        for r, (y_id, yhat_id) in enumerate(extra_eq_ids):
            ri.extend([r, r])
            ci.extend([y_id, yhat_id])
            data.extend([1.0, -1.0])
        add = sp.coo_matrix((data, (ri, ci)), shape=(len(extra_eq_ids), instance.n_vars)).tocsr()
        A_eq = sp.vstack([instance.A_eq, add], format="csr")
        b_eq = np.concatenate([instance.b_eq, np.zeros(len(extra_eq_ids))])
    else:
        A_eq, b_eq = instance.A_eq, instance.b_eq
    return MiqpInstance(
        var_names=instance.var_names,
        lb=lb,
        ub=ub,
        binary_idx=instance.binary_idx,
        A_eq=A_eq,
        b_eq=b_eq,
        A_le=A_le,
        b_le=b_le,
        obj_lin=instance.obj_lin,
        obj_quad=instance.obj_quad,
        obj_const=instance.obj_const,
        meta=instance.meta,
    )


def export_lp(instance: MiqpInstance) -> str:
    """Text dump in CPLEX-LP style for cross-checking with external tools."""
    out = ["Minimize", " obj:"]
    terms = []
    for j, c in enumerate(instance.obj_lin):
        if c != 0:
            terms.append(f" {c:+.12g} {instance.var_names[j]}")
    quad = [
        f" {2 * q:+.12g} {instance.var_names[j]} ^2"
        for j, q in enumerate(instance.obj_quad)
        if q != 0
    ]
    body = "".join(terms)
    if quad:
        body += " + [" + "".join(quad) + " ] / 2"
    if instance.obj_const:
        body += f" {instance.obj_const:+.12g}"
    out.append(body if body else " 0")
    out.append("Subject To")

    def emit(mat, rhs, sense, tag):
        mat = mat.tocsr()
        for r in range(mat.shape[0]):
            row = mat.getrow(r)
            parts = [
                f" {v:+.12g} {instance.var_names[j]}"
                for j, v in zip(row.indices, row.data)
            ]
            out.append(f" {tag}{r}:" + "".join(parts) + f" {sense} {rhs[r]:.12g}")

    emit(instance.A_eq, instance.b_eq, "=", "e")
    emit(instance.A_le, instance.b_le, "<=", "l")
    out.append("Bounds")
    for j, name in enumerate(instance.var_names):
        out.append(f" {instance.lb[j]:.12g} <= {name} <= {instance.ub[j]:.12g}")
    if len(instance.binary_idx):
        out.append("Binaries")
        out.append(" " + " ".join(instance.var_names[j] for j in instance.binary_idx))
    out.append("End")
    return "\n".join(out) + "\n"

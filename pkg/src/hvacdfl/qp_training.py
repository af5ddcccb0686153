"""Differentiation-through-the-QP baselines.

Both baselines train the thermal model on the hierarchical loss by chaining
its subgradient with the sensitivity of the schedule QP's solution to the
model parameters:

* QP relaxation: the ReLU binaries stay continuous in [0, 1] and the whole
  (relaxed) problem is differentiated.
* Fixed binaries (FB): the true MIQP is solved first, its incumbent binary
  pattern is frozen, and the resulting equality-form QP is differentiated.

Sensitivities come from the implicit function theorem on the KKT system at
the optimum: with the active rows A_act,

    [ P      A_act' ] [dx     ]   [ -(dA/dt)' lambda          ]
    [ A_act  0      ] [dlambda] = [ db_act/dt - (dA_act/dt) x ]

Inequality rows with duals below 1e-8 count as inactive; if that leaves a
singular KKT matrix the solve falls back to least squares and the result is
flagged approximate.  The parameter-to-matrix derivative stencils are
materialized by central-differencing the (cheap, deterministic) instance
builder, which covers every place theta enters: row coefficients, right
hand sides, and bound constants.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .encoding import MiqpInstance, apply_binary_pattern, build_miqp
from .losses import expost_plus, hierarchical_loss, hierarchical_loss_grad
from .plant import PlantModel, simulate
from .scenarios import BuildingScenario
from .schedule import ScheduleSolution, solve_schedule
from .solver import QpSolution, solve_miqp, solve_qp
from .thermal import RcThermalModel, ThermalModel, flatten_params, unflatten_params
from .training import Adam, TrainingConfig, TrainingLog, validation_loss

__all__ = [
    "QpSensitivity",
    "qp_sensitivity",
    "train_qp_relaxation",
    "train_fixed_binaries",
]

DUAL_TOL = 1e-8
SLACK_TOL = 1e-7


@dataclass
class QpSensitivity:
    """d(selected primal)/d(theta) plus the active-set snapshot it used."""

    jacobian: np.ndarray  # (n_selected, n_theta)
    selected: np.ndarray
    active_le: np.ndarray
    active_lb: np.ndarray
    active_ub: np.ndarray
    approximate: bool


def _diff_instances(rebuild, theta, k, h):
    """Central difference of the built instance along theta_k."""
    tp = theta.copy(); tp[k] += h
    tm = theta.copy(); tm[k] -= h
    ip = rebuild(tp)
    im = rebuild(tm)
    same_shape = (
        ip.A_eq.shape == im.A_eq.shape and ip.A_le.shape == im.A_le.shape
        and ip.A_eq.nnz == im.A_eq.nnz and ip.A_le.nnz == im.A_le.nnz
    )
    if not same_shape:
        # a neuron flipped stability inside the stencil; shrink the step
        return _diff_instances(rebuild, theta, k, h / 16.0) if h > 1e-9 else None
    inv = 0.5 / h

    def bdiff(a, b):  # infinite bounds stay put; avoid inf - inf
        out = np.zeros_like(a)
        both = np.isfinite(a) & np.isfinite(b)
        out[both] = (a[both] - b[both]) * inv
        return out

    return (
        (ip.A_eq - im.A_eq) * inv,
        (ip.b_eq - im.b_eq) * inv,
        (ip.A_le - im.A_le) * inv,
        (ip.b_le - im.b_le) * inv,
        bdiff(ip.lb, im.lb),
        bdiff(ip.ub, im.ub),
        (ip.obj_lin - im.obj_lin) * inv,
        (ip.obj_quad - im.obj_quad) * inv,
    )


def qp_sensitivity(
    instance: MiqpInstance,
    solution: QpSolution,
    rebuild,
    theta: np.ndarray,
    selected: np.ndarray,
    h: float = 1e-6,
) -> QpSensitivity:
    """Jacobian of selected primal variables w.r.t. theta at the optimum.

    ``rebuild(theta)`` must reproduce the instance (same structure) at a
    perturbed parameter vector; ``instance``/``solution`` are its value and
    QP solution at ``theta``.
    """
    theta = np.asarray(theta, dtype=float)
    selected = np.asarray(selected, dtype=int)
    n = instance.n_vars
    x = solution.x

    act_le = np.where(solution.dual_le > DUAL_TOL)[0]
    act_lb = np.where(solution.dual_lb > DUAL_TOL)[0]
    act_ub = np.where(solution.dual_ub > DUAL_TOL)[0]
    slack_le = instance.b_le - instance.A_le @ x
    weak = (
        bool(np.any((slack_le < SLACK_TOL) & (solution.dual_le <= DUAL_TOL)))
        or bool(np.any((np.abs(x - instance.lb) < SLACK_TOL) & (solution.dual_lb <= DUAL_TOL)))
        or bool(np.any((np.abs(instance.ub - x) < SLACK_TOL) & (solution.dual_ub <= DUAL_TOL)))
    )

    # signed active rows: equalities, active <= rows, -e_j for lower
    # bounds, +e_j for upper bounds; multipliers all enter with + sign
    eye = sp.eye(n, format="csr")
    blocks = [instance.A_eq]
    if act_le.size:
        blocks.append(instance.A_le[act_le])
    if act_lb.size:
        blocks.append(-eye[act_lb])
    if act_ub.size:
        blocks.append(eye[act_ub])
    A_act = sp.vstack(blocks, format="csr")
    m_act = A_act.shape[0]
    lam_eq = solution.dual_eq
    lam_le = solution.dual_le[act_le]

    K = np.zeros((n + m_act, n + m_act))
    K[:n, :n] = np.diag(2.0 * instance.obj_quad)
    A_d = A_act.toarray()
    K[:n, n:] = A_d.T
    K[n:, :n] = A_d

    import scipy.linalg as sla

    use_lstsq = False
    try:
        lu = sla.lu_factor(K)
    except (np.linalg.LinAlgError, ValueError):
        lu = None
        use_lstsq = True

    n_theta = theta.shape[0]
    jac = np.zeros((selected.size, n_theta))
    for k in range(n_theta):
        diffs = _diff_instances(rebuild, theta, k, h)
        if diffs is None:
            continue
        dA_eq, db_eq, dA_le, db_le, dlb, dub, dc, dq = diffs
        # top block: -(d grad_obj/dt) - (dA'/dt) lambda over active rows;
        # box rows have constant coefficients so only their rhs moves
        top = -(dc + 2.0 * dq * x) - dA_eq.T @ lam_eq
        if act_le.size:
            top -= dA_le[act_le].T @ lam_le
        bot_parts = [db_eq - dA_eq @ x]
        if act_le.size:
            bot_parts.append(db_le[act_le] - dA_le[act_le] @ x)
        if act_lb.size:
            bot_parts.append(-dlb[act_lb])  # row -x = -lb
        if act_ub.size:
            bot_parts.append(dub[act_ub])
        rhs = np.concatenate([np.asarray(top).ravel()] + [np.asarray(p).ravel() for p in bot_parts])
        if not use_lstsq:
            sol = sla.lu_solve(lu, rhs)
            if not np.all(np.isfinite(sol)):
                use_lstsq = True
        if use_lstsq:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        jac[:, k] = sol[selected]
    return QpSensitivity(
        jacobian=jac,
        selected=selected,
        active_le=act_le,
        active_lb=act_lb,
        active_ub=act_ub,
        approximate=weak or use_lstsq,
    )


# ---------------------------------------------------------------------------
# Baseline trainers
# ---------------------------------------------------------------------------

def _schedule_from_qp(instance: MiqpInstance, sol: QpSolution, scenario: BuildingScenario) -> ScheduleSolution:
    from .schedule import _decode

    return _decode(instance, sol.x, scenario, sol.objective, 0.0, 1, sol.status, sol)


def _qp_gradient_step(model, template, theta, plant, scenario, config, fixed_binaries):
    """One scenario's hierarchical-loss gradient through the QP optimum.

    Returns (grad, loss, flagged).  ``fixed_binaries`` solves the MIQP and
    freezes its incumbent pattern; otherwise the continuous relaxation is
    differentiated directly.
    """
    base = build_miqp(model, scenario, mode="penalty")
    pattern: dict[int, int] = {}
    if fixed_binaries and base.free_binaries().size:
        ms = solve_miqp(base, gap_tol=config.gap_tol, node_limit=config.node_limit)
        if ms.status == "infeasible":
            return None, None, True
        pattern = ms.binary_values

    def rebuild(th):
        inst = build_miqp(unflatten_params(th, template), scenario, mode="penalty")
        if pattern:
            inst = apply_binary_pattern(inst, pattern)
            if inst is None:
                raise RuntimeError("pattern infeasible under perturbed parameters")
        return inst

    inst = rebuild(theta)
    sol = solve_qp(inst)
    if sol.status == "infeasible":
        return None, None, True
    schedule = _schedule_from_qp(inst, sol, scenario)
    trace = simulate(plant, scenario, np.clip(schedule.setpoints, 5.0, 40.0))
    loss = hierarchical_loss(schedule, trace, scenario)
    g_power = hierarchical_loss_grad(schedule, trace, scenario)  # (T, Z)
    selected = inst.meta.phvac_ids.ravel()
    sens = qp_sensitivity(inst, sol, rebuild, theta, selected)
    grad = sens.jacobian.T @ g_power.ravel()
    return grad, loss, False


def _train_qp_family(model, plant, train_scenarios, val_scenarios, config, fixed_binaries, epoch_callback=None):
    log = TrainingLog()
    template = model
    theta = flatten_params(model)
    adam = Adam(theta.shape[0], config.learning_rate)
    t0 = time.perf_counter()
    best_val = validation_loss(model, plant, val_scenarios, config) if val_scenarios else np.inf
    best_theta = theta.copy()
    log.best_val_loss = best_val
    log.epochs.append({
        "epoch": 0, "val_loss": best_val, "mean_loss": None, "lr": config.learning_rate,
        "grad_norm": 0.0, "scenario_losses": [], "flagged": 0,
        "elapsed_s": round(time.perf_counter() - t0, 3),
    })
    if config.max_epochs == 0:
        return unflatten_params(best_theta, template), log

    since_best = 0
    for epoch in range(1, config.max_epochs + 1):
        lr = config.learning_rate * config.lr_decay ** (epoch - 1)
        losses, grad_norms = [], []
        flagged = 0
        for scenario in train_scenarios:
            current = unflatten_params(theta, template)
            grad, loss, bad = _qp_gradient_step(
                current, template, theta, plant, scenario, config, fixed_binaries
            )
            if bad:
                flagged += 1
                continue
            theta = adam.step(theta, grad, lr=lr)
            if isinstance(template, RcThermalModel):
                theta = np.maximum(theta, 1e-3)
            losses.append(loss)
            grad_norms.append(float(np.linalg.norm(grad)))
        mean_loss = float(np.mean(losses)) if losses else None
        val = validation_loss(unflatten_params(theta, template), plant, val_scenarios, config) \
            if val_scenarios else (mean_loss if mean_loss is not None else np.inf)
        log.epochs.append({
            "epoch": epoch, "val_loss": val, "mean_loss": mean_loss, "lr": lr,
            "grad_norm": float(np.mean(grad_norms)) if grad_norms else 0.0,
            "scenario_losses": losses, "flagged": flagged,
            "elapsed_s": round(time.perf_counter() - t0, 3),
        })
        if epoch_callback is not None:
            epoch_callback(epoch, unflatten_params(theta, template), adam)
        if val < best_val - 1e-12:
            best_val, best_theta = val, theta.copy()
            log.best_epoch = epoch
            log.best_val_loss = val
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                log.stopped_early = True
                break
    return unflatten_params(best_theta, template), log


def train_qp_relaxation(
    model: ThermalModel,
    plant: PlantModel,
    train_scenarios: list[BuildingScenario],
    val_scenarios: list[BuildingScenario],
    config: TrainingConfig,
    epoch_callback=None,
) -> tuple[ThermalModel, TrainingLog]:
    """DFL by differentiating the continuous (sigma in [0,1]) relaxation."""
    return _train_qp_family(model, plant, train_scenarios, val_scenarios, config, False, epoch_callback)


def train_fixed_binaries(
    model: ThermalModel,
    plant: PlantModel,
    train_scenarios: list[BuildingScenario],
    val_scenarios: list[BuildingScenario],
    config: TrainingConfig,
    epoch_callback=None,
) -> tuple[ThermalModel, TrainingLog]:
    """DFL by freezing the MIQP incumbent binaries, then differentiating."""
    return _train_qp_family(model, plant, train_scenarios, val_scenarios, config, True, epoch_callback)

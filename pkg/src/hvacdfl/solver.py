"""Convex QP solver and branch-and-bound MIQP solver.

The QP solver is a Mehrotra predictor-corrector primal-dual interior-point
method on the sparse KKT system

    [ P + G' W G   A' ] [dx]   [ ... ]
    [ A            0  ] [dy] = [ ... ]

where A are the equality rows and G stacks the <= rows with the finite
variable box rows.  Variables with equal bounds are eliminated in a
presolve pass (branching and input pinning both work by collapsing
bounds, and interior-point iterates need strictly feasible slacks).

The MIQP solver runs best-bound branch-and-bound over the ReLU binaries:
branch on the most fractional sigma (lowest column index on ties), fix it
through :func:`hvacdfl.encoding.apply_binary_pattern` (which also tightens
the neuron's rows), and keep going until the relative gap
``(incumbent - bound) / max(1, |incumbent|)`` clears ``gap_tol``.  A
rounding heuristic at the root and every 16 nodes supplies early
incumbents.  Everything is deterministic: ties break on insertion order,
and no randomness enters the search.
"""

from __future__ import annotations

import heapq
import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .encoding import MiqpInstance, apply_binary_pattern

__all__ = ["QpSolution", "MiqpSolution", "solve_qp", "solve_miqp", "fix_binaries"]

_REG = 1e-11


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    status: str  # optimal | infeasible | iteration_limit
    dual_eq: np.ndarray
    dual_le: np.ndarray
    dual_lb: np.ndarray
    dual_ub: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass
class MiqpSolution:
    x: np.ndarray
    objective: float
    best_bound: float
    gap: float
    node_count: int
    wall_time: float
    status: str  # optimal | node_limit | infeasible
    binary_values: dict[int, int] = field(default_factory=dict)
    log_lines: list[str] = field(default_factory=list)

    def summary_json(self) -> str:
        return json.dumps(
            {
                "status": self.status,
                "objective": self.objective,
                "best_bound": self.best_bound,
                "gap": self.gap,
                "node_count": self.node_count,
                "wall_time_s": round(self.wall_time, 6),
            },
            sort_keys=True,
        )


# ---------------------------------------------------------------------------
# Interior point QP
# ---------------------------------------------------------------------------

def _presolve_fixed(instance: MiqpInstance):
    """Split off variables with lb == ub; returns reduced matrices."""
    lb, ub = instance.lb, instance.ub
    fixed = np.isclose(lb, ub, rtol=0.0, atol=0.0)
    free = ~fixed
    xf = lb[fixed]
    free_idx = np.where(free)[0]
    fixed_idx = np.where(fixed)[0]

    A = instance.A_eq.tocsc()
    G = instance.A_le.tocsc()
    b = instance.b_eq - (A[:, fixed_idx] @ xf if fixed_idx.size else 0.0)
    h = instance.b_le - (G[:, fixed_idx] @ xf if fixed_idx.size else 0.0)
    A_r = A[:, free_idx].tocsr()
    G_r = G[:, free_idx].tocsr()

    # rows with no free support must already hold
    def prune(mat, rhs, is_eq):
        counts = np.diff(mat.indptr)
        empty = counts == 0
        if not empty.any():
            return mat, rhs, np.where(~empty)[0], True
        bad = (np.abs(rhs[empty]) > 1e-9) if is_eq else (rhs[empty] < -1e-9)
        return mat[~empty], rhs[~empty], np.where(~empty)[0], not bad.any()

    A_r, b, eq_keep, ok_eq = prune(A_r, b, True)
    G_r, h, le_keep, ok_le = prune(G_r, h, False)
    q = instance.obj_quad
    c = instance.obj_lin.copy()
    const = instance.obj_const
    if fixed_idx.size:
        const += float(c[fixed_idx] @ xf + q[fixed_idx] @ (xf * xf))
    return {
        "free_idx": free_idx,
        "fixed_idx": fixed_idx,
        "xf": xf,
        "A": A_r,
        "b": b,
        "G": G_r,
        "h": h,
        "eq_keep": eq_keep,
        "le_keep": le_keep,
        "q": q[free_idx],
        "c": c[free_idx],
        "const": const,
        "lb": lb[free_idx],
        "ub": ub[free_idx],
        "feasible": ok_eq and ok_le,
    }


def solve_qp(
    instance: MiqpInstance,
    x0: np.ndarray | None = None,
    tol: float = 1e-9,
    max_iter: int = 60,
) -> QpSolution:
    """Solve the instance with binaries treated as boxed continuous columns.

    Callers that want binaries at specific values fix them through the
    variable bounds first (see :func:`fix_binaries`).  Returns primal and
    dual values; ``dual_le``/``dual_lb``/``dual_ub`` are nonnegative
    multipliers of the <=, lower-box and upper-box rows.
    """
    red = _presolve_fixed(instance)
    n_full = instance.n_vars
    m_eq_full = instance.A_eq.shape[0]
    m_le_full = instance.A_le.shape[0]

    def full_solution(x_free, y_red, z_le_red, z_lb, z_ub, status, iters, rp, rd):
        x = np.empty(n_full)
        x[red["free_idx"]] = x_free
        x[red["fixed_idx"]] = red["xf"]
        dual_eq = np.zeros(m_eq_full)
        dual_eq[red["eq_keep"]] = y_red
        dual_le = np.zeros(m_le_full)
        dual_le[red["le_keep"]] = z_le_red
        dlb = np.zeros(n_full)
        dub = np.zeros(n_full)
        dlb[red["free_idx"]] = z_lb
        dub[red["free_idx"]] = z_ub
        if red["fixed_idx"].size:
            # reduced cost of pinned columns, signed into the box duals
            grad = instance.obj_lin + 2.0 * instance.obj_quad * x
            resid = grad + instance.A_eq.T @ dual_eq + instance.A_le.T @ dual_le
            rc = resid[red["fixed_idx"]]
            dlb[red["fixed_idx"]] = np.maximum(rc, 0.0)
            dub[red["fixed_idx"]] = np.maximum(-rc, 0.0)
        return QpSolution(
            x=x,
            objective=instance.objective_value(x),
            status=status,
            dual_eq=dual_eq,
            dual_le=dual_le,
            dual_lb=dlb,
            dual_ub=dub,
            iterations=iters,
            primal_residual=rp,
            dual_residual=rd,
        )

    if not red["feasible"]:
        return full_solution(
            np.zeros(red["free_idx"].size), np.zeros(red["b"].size),
            np.zeros(red["h"].size), np.zeros(red["free_idx"].size),
            np.zeros(red["free_idx"].size), "infeasible", 0, np.inf, np.inf,
        )

    n = red["free_idx"].size
    if n == 0:
        ok = True
        return full_solution(
            np.zeros(0), np.zeros(red["b"].size), np.zeros(red["h"].size),
            np.zeros(0), np.zeros(0), "optimal" if ok else "infeasible", 0, 0.0, 0.0,
        )

    lb, ub = red["lb"], red["ub"]
    if np.any(lb > ub):
        return full_solution(
            np.zeros(n), np.zeros(red["b"].size), np.zeros(red["h"].size),
            np.zeros(n), np.zeros(n), "infeasible", 0, np.inf, np.inf,
        )

    # stack general <= rows with the finite box rows
    G_gen = red["G"]
    h_gen = red["h"]
    ub_rows = np.where(np.isfinite(ub))[0]
    lb_rows = np.where(np.isfinite(lb))[0]
    eye = sp.eye(n, format="csr")
    G = sp.vstack(
        [G_gen, eye[ub_rows], -eye[lb_rows]], format="csr"
    ) if (ub_rows.size or lb_rows.size) else G_gen.tocsr()
    h = np.concatenate([h_gen, ub[ub_rows], -lb[lb_rows]])
    A = red["A"].tocsr()
    b = red["b"]
    m_i, m_e = G.shape[0], A.shape[0]
    P = sp.diags(2.0 * red["q"], format="csr")
    c = red["c"]

    # strictly interior start
    x = np.zeros(n)
    finite_both = np.isfinite(lb) & np.isfinite(ub)
    x[finite_both] = 0.5 * (lb[finite_both] + ub[finite_both])
    only_lb = np.isfinite(lb) & ~np.isfinite(ub)
    x[only_lb] = lb[only_lb] + 1.0
    only_ub = ~np.isfinite(lb) & np.isfinite(ub)
    x[only_ub] = ub[only_ub] - 1.0
    if x0 is not None:
        cand = np.asarray(x0, dtype=float)[red["free_idx"]]
        span = np.where(finite_both, 0.05 * np.maximum(ub - lb, 1e-6), 1.0)
        x = np.clip(cand, np.where(np.isfinite(lb), lb + span, -np.inf),
                    np.where(np.isfinite(ub), ub - span, np.inf))
    s = np.maximum(h - G @ x, 1.0)
    z = np.ones(m_i)
    y = np.zeros(m_e)

    scale_b = 1.0 + max(np.abs(b).max() if m_e else 0.0, np.abs(h).max() if m_i else 0.0)
    scale_c = 1.0 + np.abs(c).max() if n else 1.0

    best = None
    tiny_steps = 0
    status = "iteration_limit"
    it = 0
    for it in range(1, max_iter + 1):
        Px = P @ x
        rd = Px + c + (A.T @ y if m_e else 0.0) + (G.T @ z if m_i else 0.0)
        rp = (A @ x - b) if m_e else np.zeros(0)
        rg = (G @ x + s - h) if m_i else np.zeros(0)
        mu = float(s @ z / m_i) if m_i else 0.0
        pri = max(
            np.abs(rp).max() / scale_b if m_e else 0.0,
            np.abs(rg).max() / scale_b if m_i else 0.0,
        )
        dua = np.abs(rd).max() / (scale_c + np.abs(Px).max()) if n else 0.0
        gap = mu / (1.0 + abs(float(0.5 * x @ Px + c @ x)))
        score = max(pri, dua, gap)
        if best is None or score < best[0]:
            best = (score, x.copy(), y.copy(), z.copy(), pri, dua, it)
        if pri <= tol and dua <= tol and gap <= tol:
            status = "optimal"
            break
        if mu < 1e-13 and pri > 1e-6:
            status = "infeasible"
            break
        if (np.abs(z).max() if m_i else 0.0) > 1e13:
            status = "infeasible"
            break

        W = z / s
        H = P + (G.T @ sp.diags(W) @ G if m_i else 0.0) + _REG * sp.eye(n)
        if m_e:
            K = sp.bmat([[H, A.T], [A, -_REG * sp.eye(m_e)]], format="csc")
        else:
            K = H.tocsc()
        try:
            lu = spla.splu(K)
        except RuntimeError:
            status = "iteration_limit"
            break

        def kkt_solve(r1, r2):
            rhs = np.concatenate([r1, r2]) if m_e else r1
            sol = lu.solve(rhs)
            # one refinement pass keeps residuals near machine precision
            res = rhs - K @ sol
            sol = sol + lu.solve(res)
            return (sol[:n], sol[n:]) if m_e else (sol, np.zeros(0))

        def direction(r_sz):
            w0 = (-r_sz + z * rg) / s if m_i else np.zeros(0)
            r1 = -rd - (G.T @ w0 if m_i else 0.0)
            dx, dy = kkt_solve(r1, -rp if m_e else np.zeros(0))
            dz = w0 + W * (G @ dx) if m_i else np.zeros(0)
            ds = -rg - G @ dx if m_i else np.zeros(0)
            return dx, dy, dz, ds

        # predictor
        dx_a, dy_a, dz_a, ds_a = direction(s * z)
        alpha_p = _max_step(s, ds_a)
        alpha_d = _max_step(z, dz_a)
        if m_i:
            mu_aff = float((s + alpha_p * ds_a) @ (z + alpha_d * dz_a) / m_i)
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            r_sz = s * z + ds_a * dz_a - sigma * mu
        else:
            r_sz = np.zeros(0)
        dx, dy, dz, ds = direction(r_sz)
        alpha_p = 0.99995 * _max_step(s, ds)
        alpha_d = 0.99995 * _max_step(z, dz)
        alpha_p = min(alpha_p, 1.0)
        alpha_d = min(alpha_d, 1.0)
        if max(alpha_p, alpha_d) < 1e-10:
            tiny_steps += 1
            if tiny_steps >= 3:
                status = "infeasible" if pri > 1e-6 else "iteration_limit"
                break
        else:
            tiny_steps = 0
        x = x + alpha_p * dx
        s = s + alpha_p * ds if m_i else s
        y = y + alpha_d * dy
        z = z + alpha_d * dz if m_i else z

    if status != "optimal" and best is not None:
        _, x, y, z, pri, dua, _ = best
    else:
        Px = P @ x
        rd = Px + c + (A.T @ y if m_e else 0.0) + (G.T @ z if m_i else 0.0)
        pri = max(
            np.abs(A @ x - b).max() / scale_b if m_e else 0.0,
            np.abs(np.maximum(G @ x - h, 0.0)).max() / scale_b if m_i else 0.0,
        )
        dua = np.abs(rd).max() / (scale_c + np.abs(Px).max()) if n else 0.0

    z_gen = z[:G_gen.shape[0]]
    z_ub_full = np.zeros(n)
    z_lb_full = np.zeros(n)
    off = G_gen.shape[0]
    z_ub_full[ub_rows] = z[off:off + ub_rows.size]
    z_lb_full[lb_rows] = z[off + ub_rows.size:]
    return full_solution(x, y, z_gen, z_lb_full, z_ub_full, status, it, pri, dua)


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    if v.size == 0:
        return 1.0
    neg = dv < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


# ---------------------------------------------------------------------------
# Branch and bound
# ---------------------------------------------------------------------------

def fix_binaries(instance: MiqpInstance, assignment: dict[int, int]) -> MiqpInstance:
    """Substitute a complete 0/1 assignment of the relaxable binaries.

    Raises on missing columns, unknown columns, or values fixed against a
    stabilized neuron.  The result has no free binaries and solves as a QP.
    """
    free = set(int(j) for j in instance.free_binaries())
    given = set(int(j) for j in assignment)
    if given != free:
        missing = sorted(free - given)
        extra = sorted(given - free)
        raise ValueError(f"assignment mismatch: missing {missing[:5]}, unknown {extra[:5]}")
    fixed = apply_binary_pattern(instance, {int(k): int(v) for k, v in assignment.items()})
    if fixed is None:
        raise ValueError("assignment contradicts variable bounds")
    return fixed


def solve_miqp(
    instance: MiqpInstance,
    gap_tol: float = 1e-4,
    node_limit: int = 50_000,
    log: list[str] | None = None,
    heuristic_period: int = 16,
) -> MiqpSolution:
    """Best-bound branch-and-bound over the instance's free binaries.

    The reported ``best_bound`` also covers nodes discarded by the
    tolerance prune, so the certified gap never understates the true gap.
    Node relaxations that fail to converge keep their parent's bound and
    are branched rather than trusted.
    """
    t_start = time.perf_counter()
    log_lines: list[str] = [] if log is None else log

    incumbent_x = None
    incumbent_obj = np.inf
    incumbent_assign: dict[int, int] = {}
    floor_bound = np.inf  # min bound over pruned-by-tolerance subtrees

    def try_incumbent(x, obj, assign):
        nonlocal incumbent_x, incumbent_obj, incumbent_assign
        if obj < incumbent_obj - 1e-12:
            incumbent_x, incumbent_obj = x.copy(), float(obj)
            incumbent_assign = dict(assign)
            return True
        return False

    def prune_margin():
        return gap_tol * max(1.0, abs(incumbent_obj)) if incumbent_obj < np.inf else 0.0

    def plunge(start_pattern, start_sol):
        """Guided dive: repeatedly pin the most-confident sigmas to their
        rounded relaxation values until the pattern is complete."""
        pattern = dict(start_pattern)
        sol = start_sol
        all_free = [int(j) for j in instance.free_binaries()]
        while True:
            free = [j for j in all_free if j not in pattern]
            if not free:
                if sol.optimal:
                    try_incumbent(sol.x, sol.objective, pattern)
                return
            vals = np.array([sol.x[j] for j in free])
            dist = np.abs(vals - np.round(vals))
            if dist.max() <= 1e-6 and sol.optimal:
                assign = dict(pattern)
                for j, v in zip(free, np.round(vals)):
                    assign[j] = int(v)
                try_incumbent(sol.x, sol.objective, assign)
                return
            close = dist <= 0.1
            picks = np.where(close)[0] if close.any() else [int(np.argmin(dist))]
            for k in picks:
                pattern[free[int(k)]] = int(round(vals[int(k)]))
            inst2 = apply_binary_pattern(instance, pattern)
            if inst2 is None:
                return
            sol = solve_qp(inst2, x0=sol.x)
            if sol.status == "infeasible":
                return

    counter = 0
    heap: list[tuple[float, int, dict]] = []
    heapq.heappush(heap, (-np.inf, counter, {}))
    nodes = 0
    exhausted = True

    while heap:
        bound_est, _, pattern = heapq.heappop(heap)
        if incumbent_obj < np.inf and bound_est >= incumbent_obj - prune_margin():
            floor_bound = min(floor_bound, bound_est)
            continue
        if nodes >= node_limit:
            exhausted = False
            counter += 1
            heapq.heappush(heap, (bound_est, counter, pattern))
            break
        nodes += 1
        node_inst = apply_binary_pattern(instance, pattern)
        if node_inst is None:
            log_lines.append(f"node={nodes} depth={len(pattern)} presolve-infeasible")
            continue
        sol = solve_qp(node_inst)
        if sol.status == "infeasible":
            log_lines.append(f"node={nodes} depth={len(pattern)} infeasible")
            continue
        if sol.optimal:
            bound = max(sol.objective, bound_est) if np.isfinite(bound_est) else sol.objective
        else:
            bound = bound_est  # relaxation unreliable; keep the parent's bound
        if incumbent_obj < np.inf and bound >= incumbent_obj - prune_margin():
            floor_bound = min(floor_bound, bound)
            log_lines.append(
                f"node={nodes} depth={len(pattern)} bound={bound:.9g} pruned incumbent={incumbent_obj:.9g}"
            )
            continue

        free = [j for j in instance.free_binaries() if j not in pattern]
        frac = np.array([abs(sol.x[j] - round(sol.x[j])) for j in free]) if free else np.zeros(0)
        if sol.optimal and (frac.size == 0 or frac.max() <= 1e-6):
            assign = dict(pattern)
            for j in free:
                assign[j] = int(round(sol.x[j]))
            took = try_incumbent(sol.x, sol.objective, assign)
            log_lines.append(
                f"node={nodes} depth={len(pattern)} integral value={sol.objective:.9g}"
                + (" new-incumbent" if took else "")
            )
            continue

        # heuristics for early incumbents: guided plunge at the root,
        # cheap rounding dives periodically afterwards
        if sol.optimal and nodes == 1:
            plunge(pattern, sol)
            if incumbent_obj < np.inf:
                log_lines.append(f"node={nodes} plunge incumbent={incumbent_obj:.9g}")
        elif sol.optimal and nodes % heuristic_period == 0:
            rounded = dict(pattern)
            for j in free:
                rounded[j] = int(round(sol.x[j]))
            dive_inst = apply_binary_pattern(instance, rounded)
            if dive_inst is not None:
                dive = solve_qp(dive_inst, x0=sol.x)
                if dive.status == "optimal":
                    if try_incumbent(dive.x, dive.objective, rounded):
                        log_lines.append(
                            f"node={nodes} heuristic incumbent={dive.objective:.9g}"
                        )

        # branch on most fractional, lowest column index on ties
        scores = np.abs(np.array([sol.x[j] for j in free]) - 0.5)
        j_branch = free[int(np.argmin(scores))]
        log_lines.append(
            f"node={nodes} depth={len(pattern)} bound={bound:.9g} branch=sigma#{j_branch}"
            f" frac={sol.x[j_branch]:.4f}"
        )
        for v in (0, 1):
            child = dict(pattern)
            child[j_branch] = v
            counter += 1
            heapq.heappush(heap, (bound, counter, child))

    open_bounds = [item[0] for item in heap]
    candidates = [incumbent_obj, floor_bound] + open_bounds
    best_bound = min(c for c in candidates if c is not None)
    if incumbent_x is None:
        return MiqpSolution(
            x=np.zeros(instance.n_vars),
            objective=np.inf,
            best_bound=best_bound,
            gap=np.inf,
            node_count=nodes,
            wall_time=time.perf_counter() - t_start,
            status="infeasible" if exhausted else "node_limit",
            log_lines=log_lines,
        )
    best_bound = min(best_bound, incumbent_obj)
    if not np.isfinite(best_bound):
        best_bound = incumbent_obj
    gap = max(0.0, (incumbent_obj - best_bound) / max(1.0, abs(incumbent_obj)))
    return MiqpSolution(
        x=incumbent_x,
        objective=incumbent_obj,
        best_bound=best_bound,
        gap=gap,
        node_count=nodes,
        wall_time=time.perf_counter() - t_start,
        status="optimal" if (exhausted or gap <= gap_tol) else "node_limit",
        binary_values=incumbent_assign,
        log_lines=log_lines,
    )

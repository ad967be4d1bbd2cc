"""Sequential quadratic programming for smooth nonlinear programs.

Problems carry analytic evaluators: an objective (value and gradient),
optionally a least-squares residual form used for a Gauss-Newton
Hessian model, inequality and equality constraints with Jacobians, and
box bounds on the decision vector.  Each iteration linearizes the
constraints, solves a convex QP for the step, and backtracks on an
l1 merit function.  An infeasible QP subproblem triggers one elastic
retry with slack variables; its use is reported in the result.

Everything is deterministic for fixed inputs and options.  A wall-time
budget can cut a solve short between iterations, returning the best
iterate so far; leave it unset when bitwise reproducibility matters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .qp import solve_qp

CONVERGED = "converged"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"
TIMEOUT = "timeout"


@dataclass
class Problem:
    dim: int
    objective: object                  # z -> (f, grad)
    residuals: object = None           # z -> (r, J) with f = r @ r
    inequalities: object = None        # z -> (g, Jg), feasible iff g <= 0
    equalities: object = None          # z -> (h, Jh), feasible iff h = 0
    lower: np.ndarray = None
    upper: np.ndarray = None
    x0: np.ndarray = None


@dataclass
class Options:
    kkt_tol: float = 1e-6
    feas_tol: float = 1e-8
    max_iter: int = 100
    max_time: float = None
    armijo: float = 1e-4
    max_linesearch: int = 30
    elastic_penalty: float = 1e6
    levenberg: float = 1e-9
    trace: bool = False


@dataclass
class Result:
    z: np.ndarray
    status: str
    kkt_residual: float
    iterations: int
    wall_time: float
    objective: float
    max_violation: float
    elastic_used: bool = False
    multipliers: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)


def _clip_box(z, lower, upper):
    if lower is not None:
        z = np.maximum(z, lower)
    if upper is not None:
        z = np.minimum(z, upper)
    return z


def _evaluate(problem, z):
    if problem.residuals is not None:
        r, jac = problem.residuals(z)
        f = float(r @ r)
        grad = 2.0 * jac.T @ r
    else:
        f, grad = problem.objective(z)
        r, jac = None, None
    if problem.inequalities is not None:
        g, jg = problem.inequalities(z)
    else:
        g, jg = np.zeros(0), np.zeros((0, problem.dim))
    if problem.equalities is not None:
        h, jh = problem.equalities(z)
    else:
        h, jh = np.zeros(0), np.zeros((0, problem.dim))
    return f, grad, r, jac, g, jg, h, jh


def _violation(g, h):
    v = 0.0
    if g.size:
        v = max(v, float(np.max(g)))
    if h.size:
        v = max(v, float(np.max(np.abs(h))))
    return v


def _violation_l1(g, h):
    total = float(np.sum(np.maximum(g, 0.0))) if g.size else 0.0
    if h.size:
        total += float(np.sum(np.abs(h)))
    return total


def check_kkt(problem, z, multipliers):
    """Combined stationarity, feasibility and complementarity residual."""
    z = np.asarray(z, dtype=float)
    f, grad, _, _, g, jg, h, jh = _evaluate(problem, z)
    lam = np.asarray(multipliers.get("ineq", np.zeros(g.shape[0])), dtype=float)
    nu = np.asarray(multipliers.get("eq", np.zeros(h.shape[0])), dtype=float)
    lo = np.asarray(multipliers.get("lower", np.zeros(problem.dim)), dtype=float)
    up = np.asarray(multipliers.get("upper", np.zeros(problem.dim)), dtype=float)
    stat = grad.copy()
    if g.size:
        stat += jg.T @ lam
    if h.size:
        stat += jh.T @ nu
    stat += up - lo
    residual = float(np.linalg.norm(stat, np.inf))
    residual = max(residual, _violation(g, h))
    if g.size:
        residual = max(residual, float(np.max(np.abs(lam * g))))
    if problem.lower is not None:
        residual = max(residual, float(np.max(np.abs(lo * (problem.lower - z)))))
    if problem.upper is not None:
        residual = max(residual, float(np.max(np.abs(up * (z - problem.upper)))))
    return residual


def _hessian(problem, z, jac, grad, state, opts):
    n = problem.dim
    if jac is not None:
        h = 2.0 * jac.T @ jac
        return h + opts.levenberg * max(1.0, np.trace(h) / n) * np.eye(n)
    # Damped BFGS on the objective gradient.
    if state.get("h") is None:
        state["h"] = np.eye(n)
        state["z"] = z.copy()
        state["grad"] = grad.copy()
        return state["h"].copy()
    s = z - state["z"]
    y = grad - state["grad"]
    hmat = state["h"]
    sts = float(s @ s)
    if sts > 1e-16:
        hs = hmat @ s
        shs = float(s @ hs)
        sy = float(s @ y)
        theta = 1.0 if sy >= 0.2 * shs else 0.8 * shs / (shs - sy)
        ybar = theta * y + (1.0 - theta) * hs
        hmat = hmat - np.outer(hs, hs) / shs + np.outer(ybar, ybar) / float(s @ ybar)
        state["h"] = 0.5 * (hmat + hmat.T)
    state["z"] = z.copy()
    state["grad"] = grad.copy()
    return state["h"].copy()


def _step_qp(hess, grad, g, jg, h, jh, z, lower, upper, opts):
    """Solve the local QP for the step; fall back to elastic slacks.

    Returns (d, lam, nu, lam_lo, lam_up, elastic).
    """
    n = grad.shape[0]
    rows = []
    rhs = []
    if g.size:
        rows.append(jg)
        rhs.append(-g)
    if lower is not None:
        finite = np.isfinite(lower)
        if np.any(finite):
            eye = -np.eye(n)[finite]
            rows.append(eye)
            rhs.append((z - lower)[finite])
    if upper is not None:
        finite = np.isfinite(upper)
        if np.any(finite):
            eye = np.eye(n)[finite]
            rows.append(eye)
            rhs.append((upper - z)[finite])
    gmat = np.vstack(rows) if rows else None
    hvec = np.concatenate(rhs) if rows else None
    amat, bvec = (jh, -h) if h.size else (None, None)

    res = solve_qp(hess, grad, gmat, hvec, amat, bvec)
    if res.converged:
        return _unpack_step(res, n, g, lower, upper, z, elastic=False)

    # Elastic retry: slacks on the nonlinear inequalities only.
    m = g.shape[0]
    if m == 0:
        return None
    dim = n + m
    pen = opts.elastic_penalty
    p_ext = np.zeros((dim, dim))
    p_ext[:n, :n] = hess
    p_ext[n:, n:] = 1e-8 * np.eye(m)
    q_ext = np.concatenate([grad, pen * np.ones(m)])
    rows = [np.hstack([jg, -np.eye(m)])]
    rhs = [-g]
    rows.append(np.hstack([np.zeros((m, n)), -np.eye(m)]))
    rhs.append(np.zeros(m))
    if lower is not None:
        finite = np.isfinite(lower)
        if np.any(finite):
            rows.append(np.hstack([-np.eye(n)[finite], np.zeros((int(finite.sum()), m))]))
            rhs.append((z - lower)[finite])
    if upper is not None:
        finite = np.isfinite(upper)
        if np.any(finite):
            rows.append(np.hstack([np.eye(n)[finite], np.zeros((int(finite.sum()), m))]))
            rhs.append((upper - z)[finite])
    res = solve_qp(
        p_ext, q_ext, np.vstack(rows), np.concatenate(rhs),
        np.hstack([jh, np.zeros((jh.shape[0], m))]) if h.size else None,
        -h if h.size else None,
    )
    if not res.converged:
        return None
    trimmed = QpView(res.x[:n], res.z[:m], res.y)
    return _unpack_step(trimmed, n, g, lower, upper, z, elastic=True)


class QpView:
    def __init__(self, x, z, y):
        self.x, self.z, self.y = x, z, y


def _unpack_step(res, n, g, lower, upper, z, elastic):
    d = res.x[:n]
    m = g.shape[0]
    lam = res.z[:m] if m else np.zeros(0)
    offset = m
    lam_lo = np.zeros(n)
    lam_up = np.zeros(n)
    if not elastic:
        if lower is not None:
            finite = np.isfinite(lower)
            k = int(finite.sum())
            if k:
                lam_lo[finite] = res.z[offset:offset + k]
                offset += k
        if upper is not None:
            finite = np.isfinite(upper)
            k = int(finite.sum())
            if k:
                lam_up[finite] = res.z[offset:offset + k]
                offset += k
    nu = res.y if res.y is not None else np.zeros(0)
    return d, lam, nu, lam_lo, lam_up, elastic


def solve(problem, warm_start=None, opts=None):
    """Run the SQP iteration from the warm start (clipped into the box)."""
    opts = opts or Options()
    start = time.perf_counter()
    z = np.asarray(
        warm_start if warm_start is not None else problem.x0, dtype=float
    ).copy()
    z = _clip_box(z, problem.lower, problem.upper)

    mu = 1.0
    state = {}
    best = None
    elastic_used = False
    multipliers = {}
    status = MAX_ITER
    trace = []
    kkt_residual = np.inf
    it = 0

    for it in range(opts.max_iter):
        if opts.max_time is not None and time.perf_counter() - start > opts.max_time:
            status = TIMEOUT
            break
        f, grad, r, jac, g, jg, h, jh = _evaluate(problem, z)
        feas = _violation(g, h)
        if opts.trace:
            trace.append((f, feas))
        key = (max(feas - opts.feas_tol, 0.0), f)
        if best is None or key < best[0]:
            best = (key, z.copy(), f, feas)

        kkt_residual = check_kkt(problem, z, multipliers)
        if feas <= opts.feas_tol and kkt_residual <= opts.kkt_tol:
            status = CONVERGED
            break

        hess = _hessian(problem, z, jac, grad, state, opts)
        stepped = _step_qp(
            hess, grad, g, jg, h, jh, z, problem.lower, problem.upper, opts
        )
        if stepped is None:
            status = INFEASIBLE
            break
        d, lam, nu, lam_lo, lam_up, elastic = stepped
        elastic_used = elastic_used or elastic
        multipliers = {"ineq": lam, "eq": nu, "lower": lam_lo, "upper": lam_up}

        scale = max(
            float(np.max(lam)) if lam.size else 0.0,
            float(np.max(np.abs(nu))) if nu.size else 0.0,
        )
        mu = max(mu, 1.1 * scale + 1.0)

        viol = _violation_l1(g, h)
        merit0 = f + mu * viol
        descent = float(grad @ d) - mu * viol
        step_norm = float(np.linalg.norm(d, np.inf))
        if step_norm <= 1e-14 * (1.0 + float(np.linalg.norm(z, np.inf))):
            status = CONVERGED if feas <= opts.feas_tol else MAX_ITER
            break

        alpha = 1.0
        accepted = False
        for _ in range(opts.max_linesearch):
            z_try = _clip_box(z + alpha * d, problem.lower, problem.upper)
            f_try, _, _, _, g_try, _, h_try, _ = _evaluate(problem, z_try)
            merit_try = f_try + mu * _violation_l1(g_try, h_try)
            if merit_try <= merit0 + opts.armijo * alpha * min(descent, 0.0):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            status = MAX_ITER
            break
        z = z_try

    # Prefer the final iterate unless an earlier one was strictly better
    # (feasibility first, then objective).
    f_final, _, _, _, g_final, _, h_final, _ = _evaluate(problem, z)
    feas_final = _violation(g_final, h_final)
    final_key = (max(feas_final - opts.feas_tol, 0.0), f_final)
    if best is not None and best[0] < final_key:
        _, z, f_final, feas_final = best

    kkt_residual = check_kkt(problem, z, multipliers)
    if status not in (CONVERGED, INFEASIBLE, TIMEOUT):
        if feas_final <= opts.feas_tol and kkt_residual <= opts.kkt_tol:
            status = CONVERGED
    return Result(
        z=z,
        status=status,
        kkt_residual=kkt_residual,
        iterations=it + 1,
        wall_time=time.perf_counter() - start,
        objective=f_final,
        max_violation=feas_final,
        elastic_used=elastic_used,
        multipliers=multipliers,
        trace=trace,
    )

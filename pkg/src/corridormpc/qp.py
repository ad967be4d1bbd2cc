"""Dense convex quadratic programming by primal-dual interior point.

Solves
    minimize    0.5 x^T P x + q^T x
    subject to  G x <= h,   A x = b

with P symmetric positive semidefinite.  Mehrotra predictor-corrector
steps on the perturbed KKT system, with the slack/multiplier block
eliminated so every iteration factors one symmetric (n + p) system.
Purely deterministic: identical inputs produce identical iterates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_REG = 1e-12


@dataclass
class QpResult:
    x: np.ndarray
    z: np.ndarray            # inequality multipliers, >= 0
    y: np.ndarray            # equality multipliers
    converged: bool
    iterations: int
    gap: float


def solve_qp(p_mat, q_vec, g_mat=None, h_vec=None, a_mat=None, b_vec=None,
             x0=None, tol=1e-10, max_iter=100):
    """Solve the QP; see module docstring for the problem form."""
    q_vec = np.asarray(q_vec, dtype=float)
    n = q_vec.shape[0]
    p_mat = np.asarray(p_mat, dtype=float)

    if g_mat is None or len(g_mat) == 0:
        return _solve_equality_qp(p_mat, q_vec, a_mat, b_vec, n)

    g_mat = np.asarray(g_mat, dtype=float)
    h_vec = np.asarray(h_vec, dtype=float)
    m = g_mat.shape[0]
    has_eq = a_mat is not None and len(a_mat) > 0
    if has_eq:
        a_mat = np.asarray(a_mat, dtype=float)
        b_vec = np.asarray(b_vec, dtype=float)
        p = a_mat.shape[0]
    else:
        p = 0

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    y = np.zeros(p)
    slack_guess = h_vec - g_mat @ x
    s = np.where(slack_guess > 1.0, slack_guess, 1.0)
    z = np.ones(m)

    def residuals(x, y, z, s):
        r_dual = p_mat @ x + q_vec + g_mat.T @ z
        if has_eq:
            r_dual = r_dual + a_mat.T @ y
        r_eq = a_mat @ x - b_vec if has_eq else np.zeros(0)
        r_ineq = g_mat @ x + s - h_vec
        return r_dual, r_eq, r_ineq

    best = None
    for it in range(max_iter):
        r_dual, r_eq, r_ineq = residuals(x, y, z, s)
        mu = float(z @ s) / m
        res = max(
            np.linalg.norm(r_dual, np.inf),
            np.linalg.norm(r_ineq, np.inf) if m else 0.0,
            np.linalg.norm(r_eq, np.inf) if p else 0.0,
        )
        if best is None or res + mu < best[0]:
            best = (res + mu, x.copy(), y.copy(), z.copy())
        if res < tol and mu < tol:
            return QpResult(x=x, z=z, y=y, converged=True, iterations=it, gap=mu)

        zs = z / s
        kkt = np.zeros((n + p, n + p))
        kkt[:n, :n] = p_mat + g_mat.T * zs @ g_mat + _REG * np.eye(n)
        if p:
            kkt[:n, n:] = a_mat.T
            kkt[n:, :n] = a_mat
            kkt[n:, n:] = -_REG * np.eye(p)

        def kkt_step(r_cent):
            rhs = np.concatenate([
                -r_dual + g_mat.T @ ((r_cent - z * r_ineq) / s),
                -r_eq,
            ])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                return None
            dx = sol[:n]
            dy = sol[n:]
            ds = -r_ineq - g_mat @ dx
            dz = -(r_cent + z * ds) / s
            return dx, dy, ds, dz

        aff = kkt_step(z * s)
        if aff is None:
            break
        dx_a, dy_a, ds_a, dz_a = aff
        alpha_aff = _max_step(s, ds_a, z, dz_a)
        mu_aff = float((z + alpha_aff * dz_a) @ (s + alpha_aff * ds_a)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0.0 else 0.0

        corr = kkt_step(z * s + ds_a * dz_a - sigma * mu)
        if corr is None:
            break
        dx, dy, ds, dz = corr
        alpha = 0.99 * _max_step(s, ds, z, dz)
        alpha = min(1.0, alpha)
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
        if not np.all(np.isfinite(x)):
            break

    _, bx, by, bz = best if best is not None else (0.0, x, y, z)
    r_dual, r_eq, r_ineq = residuals(bx, by, bz, np.maximum(h_vec - g_mat @ bx, 0.0))
    gap = float(bz @ np.maximum(h_vec - g_mat @ bx, 0.0)) / m
    return QpResult(x=bx, z=bz, y=by, converged=False, iterations=max_iter, gap=gap)


def _max_step(s, ds, z, dz):
    """Largest step in (0, 1] keeping s and z strictly positive."""
    alpha = 1.0
    neg = ds < 0.0
    if np.any(neg):
        alpha = min(alpha, float(np.min(-s[neg] / ds[neg])))
    neg = dz < 0.0
    if np.any(neg):
        alpha = min(alpha, float(np.min(-z[neg] / dz[neg])))
    return alpha


def _solve_equality_qp(p_mat, q_vec, a_mat, b_vec, n):
    if a_mat is None or len(a_mat) == 0:
        x = np.linalg.solve(p_mat + _REG * np.eye(n), -q_vec)
        return QpResult(
            x=x, z=np.zeros(0), y=np.zeros(0),
            converged=True, iterations=1, gap=0.0,
        )
    a_mat = np.asarray(a_mat, dtype=float)
    b_vec = np.asarray(b_vec, dtype=float)
    p = a_mat.shape[0]
    kkt = np.zeros((n + p, n + p))
    kkt[:n, :n] = p_mat + _REG * np.eye(n)
    kkt[:n, n:] = a_mat.T
    kkt[n:, :n] = a_mat
    kkt[n:, n:] = -_REG * np.eye(p)
    sol = np.linalg.solve(kkt, np.concatenate([-q_vec, b_vec]))
    return QpResult(
        x=sol[:n], z=np.zeros(0), y=sol[n:],
        converged=True, iterations=1, gap=0.0,
    )

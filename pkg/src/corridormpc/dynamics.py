"""Triple-integrator discretization for jerk-interpolated inputs.

The jerk input is a continuous linear interpolation of its knot values
(a sum of triangular hat functions on a uniform grid).  Integrating
three times gives exact discrete dynamics of the form

    x[k+1] = Phi x[k] + Gamma0 u[k] + Gamma1 u[k+1]

for the stacked state x = [pos; vel; acc] of n parallel channels.  The
same system serves the joints (n = dof) and the path parameter (n = 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def hat(t, t_k, ts):
    """Triangular basis function with support [t_k, t_k + 2 ts], peak 1."""
    if t_k <= t < t_k + ts:
        return (t - t_k) / ts
    if t_k + ts <= t <= t_k + 2.0 * ts:
        return (t_k + 2.0 * ts - t) / ts
    return 0.0


@dataclass(frozen=True)
class DiscreteLTI:
    phi: np.ndarray      # 3n x 3n
    gamma0: np.ndarray   # 3n x n, multiplies u[k]
    gamma1: np.ndarray   # 3n x n, multiplies u[k+1]
    ts: float
    n: int


def discretize(ts, n):
    """Exact one-step matrices for n jerk-interpolated triple integrators.

    With the jerk ramping linearly from u[k] to u[k+1] over the step,
    closed-form integration gives per-channel input columns

        Gamma0 = [ts^3/8,  ts^2/3, ts/2]^T
        Gamma1 = [ts^3/24, ts^2/6, ts/2]^T
    """
    if ts <= 0.0:
        raise ValueError("sampling time must be positive")
    eye = np.eye(n)
    zero = np.zeros((n, n))
    phi = np.block([
        [eye, ts * eye, 0.5 * ts * ts * eye],
        [zero, eye, ts * eye],
        [zero, zero, eye],
    ])
    gamma0 = np.vstack([ts**3 / 8.0 * eye, ts**2 / 3.0 * eye, ts / 2.0 * eye])
    gamma1 = np.vstack([ts**3 / 24.0 * eye, ts**2 / 6.0 * eye, ts / 2.0 * eye])
    return DiscreteLTI(phi=phi, gamma0=gamma0, gamma1=gamma1, ts=ts, n=n)


def step(lti, x, u_k, u_k1):
    """Advance the stacked [pos; vel; acc] state by one sample."""
    x = np.asarray(x, dtype=float)
    u_k = np.atleast_1d(np.asarray(u_k, dtype=float))
    u_k1 = np.atleast_1d(np.asarray(u_k1, dtype=float))
    return lti.phi @ x + lti.gamma0 @ u_k + lti.gamma1 @ u_k1


def continuous_eval(x0, jerk_knots, ts, t):
    """Evaluate pos/vel/acc between samples from the initial state.

    ``jerk_knots`` holds the K+1 knot values u[0..K] spanning K steps,
    each an n-vector (or scalar for n = 1).  Acceleration is piecewise
    quadratic and continuous at the knots, velocity cubic, position
    quartic.  Valid for 0 <= t <= K ts.
    """
    knots = np.atleast_2d(np.asarray(jerk_knots, dtype=float))
    if knots.shape[0] == 1 and knots.shape[1] > 1 and np.ndim(jerk_knots) == 1:
        knots = knots.T
    n_knots, n = knots.shape
    if n_knots < 2:
        raise ValueError("need at least two jerk knots")
    horizon = (n_knots - 1) * ts
    if t < 0.0 or t > horizon + 1e-12:
        raise ValueError(f"t={t} outside [0, {horizon}]")
    t = min(t, horizon)

    x0 = np.asarray(x0, dtype=float)
    pos, vel, acc = x0[:n].copy(), x0[n:2 * n].copy(), x0[2 * n:].copy()
    k = min(int(t / ts), n_knots - 2)
    lti = discretize(ts, n)
    x = np.concatenate([pos, vel, acc])
    for i in range(k):
        x = step(lti, x, knots[i], knots[i + 1])
    pos, vel, acc = x[:n], x[n:2 * n], x[2 * n:]

    s = t - k * ts
    u0, u1 = knots[k], knots[k + 1]
    du = (u1 - u0) / ts
    pos_t = pos + vel * s + acc * s**2 / 2.0 + u0 * s**3 / 6.0 + du * s**4 / 24.0
    vel_t = vel + acc * s + u0 * s**2 / 2.0 + du * s**3 / 6.0
    acc_t = acc + u0 * s + du * s**2 / 2.0
    return pos_t, vel_t, acc_t

"""Receding-horizon planner with corridor-bounded path errors.

Every sampling period the planner rolls the jerk-driven joint and
path-parameter systems out over the horizon, decomposes the predicted
pose errors against the reference path, and solves a smooth nonlinear
program for the jerk knots.  States are eliminated by the rollout
(single shooting), so the decision vector is just the N joint-jerk
knots and N path-jerk knots.  Only the first knot of each is applied;
the shifted solution warm-starts the next cycle.

Per cycle the orientation machinery is anchored at the exact start
error: the inverse Jacobians, the per-segment projection vectors and
the nullspace projector are frozen there, while forward kinematics and
the corridor constraints are evaluated exactly along the rollout with
analytic derivatives.  One planning loop is strictly sequential;
distinct loops never share mutable state.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import bounds as bnd
from . import dynamics as dyn
from . import errors as err
from . import kinematics as kin
from . import paths as pth
from . import rotations as rot
from . import sqp

STATUS_CONVERGED = "converged"
STATUS_FEASIBLE = "feasible"        # iteration budget hit at a feasible point
STATUS_BRAKING = "braking"          # fallback inputs, no usable solution


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 10
    ts: float = 0.1
    w_tangential: float = 1000.0
    w_error_rate: float = 0.5
    w_nullspace: float = 0.05
    w_joint_jerk: float = 1e-4
    w_path_jerk: float = 50.0
    path_weight: float = 1.0          # weight on (phi - phi_f)^2 times scale/phi_f
    path_weight_scale: float = 50.0   # W = scale * diag(path_weight/phi_f, 1, 1)
    sigmoid_offset: float = 0.02      # meters before the path end
    sigmoid_gain: float = 100.0
    lookahead_segments: int = 4
    q_min: np.ndarray = None
    q_max: np.ndarray = None
    qd_max: np.ndarray = None
    qdd_max: np.ndarray = None
    jerk_max: np.ndarray = None
    kkt_tol: float = 1e-6
    feas_tol: float = 1e-8
    max_iterations: int = 100
    max_solve_time: float = None      # unset keeps runs bitwise reproducible
    exit_phi_gap: float = 1e-4
    exit_position_error: float = 2e-3
    exit_orientation_error: float = np.deg2rad(1.0)
    exit_phi_rate: float = 1e-3

    def xi_weight(self, phi_end):
        w = self.path_weight_scale
        return np.diag([w * self.path_weight / phi_end, w, w])


@dataclass
class PlannerState:
    x: np.ndarray            # stacked [q; qd; qdd]
    u_prev: np.ndarray       # joint jerk knot applied at the current sample
    xi: np.ndarray           # stacked [phi; phid; phidd]
    v_prev: float
    omega_c_total: np.ndarray = field(default_factory=lambda: np.zeros(3))
    revision: int = 0

    @property
    def phi(self):
        return float(self.xi[0])

    @classmethod
    def at_rest(cls, q0, dof=None):
        q0 = np.asarray(q0, dtype=float)
        n = q0.shape[0] if dof is None else dof
        x = np.concatenate([q0, np.zeros(2 * n)])
        return cls(x=x, u_prev=np.zeros(n), xi=np.zeros(3), v_prev=0.0)


@dataclass
class PlanStep:
    """Model quantities at one horizon step of a converged plan."""
    phi: float
    phid: float
    e_p: np.ndarray
    e_p_par: np.ndarray
    e_o: np.ndarray
    alpha: float
    beta: float
    gamma: float
    psi: np.ndarray          # four channel constraint values
    segment: int


@dataclass
class PlanCycleOutput:
    u_first: np.ndarray
    v_first: float
    status: str
    solver: sqp.Result
    steps: list
    warm_next: np.ndarray
    anchor_singular: bool


def _sigmoid(x):
    # Guard the exponent; the blend saturates far from the path end.
    return 1.0 / (1.0 + np.exp(np.clip(-x, -500.0, 500.0)))


class HorizonModel:
    """Analytic NLP evaluators for one planning cycle.

    The decision vector is z = [u_1 .. u_N, v_1 .. v_N].  The joint and
    path states over the horizon are affine in z; everything else is
    evaluated exactly at the rolled-out states with hand-coded chain
    rules, so central finite differences reproduce the returned
    gradients.
    """

    def __init__(self, chain, path, corridor, config, state, warm_start=None):
        self.chain = chain
        self.path = path
        self.corridor = corridor
        self.cfg = config
        n = chain.dof
        big_n = config.horizon
        self.n = n
        self.N = big_n
        self.zdim = big_n * (n + 1)

        self.lti_joint = dyn.discretize(config.ts, n)
        self.lti_path = dyn.discretize(config.ts, 1)

        # Affine rollout maps x_i = cx[i] + mx[i] @ z (v columns zero)
        # and xi_i = cxi[i] + mxi[i] @ z (u columns zero).
        self.cx = [state.x.copy()]
        self.mx = [np.zeros((3 * n, self.zdim))]
        self.cxi = [state.xi.copy()]
        self.mxi = [np.zeros((3, self.zdim))]
        for i in range(big_n):
            sel_now = self._u_selector(i)
            sel_next = self._u_selector(i + 1)
            const_u = state.u_prev if i == 0 else np.zeros(n)
            self.cx.append(
                self.lti_joint.phi @ self.cx[i] + self.lti_joint.gamma0 @ const_u
            )
            self.mx.append(
                self.lti_joint.phi @ self.mx[i]
                + self.lti_joint.gamma0 @ sel_now
                + self.lti_joint.gamma1 @ sel_next
            )
            vel_now = self._v_selector(i)
            vel_next = self._v_selector(i + 1)
            const_v = np.array([state.v_prev if i == 0 else 0.0])
            self.cxi.append(
                self.lti_path.phi @ self.cxi[i] + self.lti_path.gamma0 @ const_v
            )
            self.mxi.append(
                self.lti_path.phi @ self.mxi[i]
                + self.lti_path.gamma0 @ vel_now
                + self.lti_path.gamma1 @ vel_next
            )

        # Anchor quantities at the cycle start.
        q0 = state.x[:n]
        qd0 = state.x[n:2 * n]
        self.phi0 = float(state.xi[0])
        _, r_c0 = kin.forward_kinematics(chain, q0)
        self.e_o0, self.anchor_singular = err.orientation_error_true(
            r_c0, path, self.phi0
        )
        self.jl0 = rot.inv_jacobian_left(self.e_o0)
        self.jr0 = rot.inv_jacobian_right(self.e_o0)
        self.omega_c0 = kin.geometric_jacobian(chain, q0)[3:] @ qd0
        self.omega_r_ref = pth.integrated_reference_rotation(path, self.phi0)
        self.nullspace = kin.nullspace_projector(chain, q0)

        # Segment window: constraints and references are assembled for a
        # bounded number of segments ahead; the path is treated as
        # ending at the window boundary.
        first = pth.segment_index(path, self.phi0)
        last = min(first + config.lookahead_segments - 1, path.n_segments - 1)
        self.seg_lo = first
        self.seg_hi = last
        self.phi_f_eff = float(path.via_phis[last + 1])
        self.phi_f = path.phi_end

        # Projection vectors per window segment, linearized at the
        # anchor error in each segment's own basis.
        self.rho = {}
        self.exact_anchor = {}
        for l in range(first, last + 1):
            seg = corridor[l]
            alpha0, beta0, gamma0, singular = err.decompose_orientation_error(
                self.e_o0, seg.basis_orn, seg.spin_axis
            )
            self.exact_anchor[l] = (alpha0, beta0, gamma0)
            self.anchor_singular = self.anchor_singular or singular
            self.rho[l] = err.projection_vectors(
                self.e_o0, alpha0, beta0, seg.basis_orn, seg.spin_axis
            )

        # Scalar angle chain starts from the exact decomposition in the
        # starting segment; increments switch rho after a via crossing.
        self.alpha0, self.beta0, self.gamma0 = self.exact_anchor[first]

        # Per-step frozen segment map from the warm-start rollout.
        if warm_start is None:
            warm_start = np.zeros(self.zdim)
        self.frozen_segment = []
        for i in range(1, big_n + 1):
            phi_i = float(self.cxi[i][0] + self.mxi[i][0] @ warm_start)
            self.frozen_segment.append(self._window_segment(phi_i))

        self.xi_target = np.array([self.phi_f, 0.0, 0.0])
        self.sqrt_w_xi = np.sqrt(config.xi_weight(self.phi_f))
        self._affine_constraints()
        self._cache_key = None
        self._cache_steps = None

    # -- selectors ----------------------------------------------------
    def _u_selector(self, k):
        """Matrix picking jerk knot u_k out of z (zero for k = 0)."""
        sel = np.zeros((self.n, self.zdim))
        if k >= 1:
            col = (k - 1) * self.n
            sel[:, col:col + self.n] = np.eye(self.n)
        return sel

    def _v_selector(self, k):
        sel = np.zeros((1, self.zdim))
        if k >= 1:
            sel[0, self.N * self.n + k - 1] = 1.0
        return sel

    def _window_segment(self, phi):
        idx = pth.segment_index(self.path, min(max(phi, 0.0), self.phi_f))
        return min(max(idx, self.seg_lo), self.seg_hi)

    # -- path helpers with smooth extrapolation ------------------------
    def _position_ref(self, phi):
        """Reference point and tangent at phi, extended past segment ends."""
        seg = self.path.position_segments[self._window_segment(phi)]
        point = seg.base + seg.slope * (phi - seg.phi_start)
        return point, seg.slope

    def _omega_r_integral(self, phi):
        """Integral of the reference spin from the anchor phi, extended."""
        idx = self._window_segment(phi)
        seg = self.path.orientation_segments[idx]
        inside = pth.integrated_reference_rotation(
            self.path, min(max(phi, 0.0), self.phi_f)
        )
        overhang = 0.0
        if phi > self.phi_f:
            overhang = phi - self.phi_f
        elif phi < 0.0:
            overhang = phi
        return inside + seg.omega * overhang - self.omega_r_ref, seg.omega

    # -- constraints ----------------------------------------------------
    def _affine_constraints(self):
        """State-box and path-parameter rows, linear in z."""
        cfg = self.cfg
        n = self.n
        rows = []
        offsets = []

        def two_sided(mat, con, low, high):
            if high is not None:
                rows.append(mat)
                offsets.append(con - np.asarray(high, dtype=float))
            if low is not None:
                rows.append(-mat)
                offsets.append(np.asarray(low, dtype=float) - con)

        for i in range(1, self.N + 1):
            mx, cx = self.mx[i], self.cx[i]
            mxi, cxi = self.mxi[i], self.cxi[i]
            two_sided(mx[:n], cx[:n], cfg.q_min, cfg.q_max)
            if cfg.qd_max is not None:
                qd_lim = np.asarray(cfg.qd_max, dtype=float)
                two_sided(mx[n:2 * n], cx[n:2 * n], -qd_lim, qd_lim)
            if cfg.qdd_max is not None:
                qdd_lim = np.asarray(cfg.qdd_max, dtype=float)
                two_sided(mx[2 * n:], cx[2 * n:], -qdd_lim, qdd_lim)
            # phi_i <= phi_f_eff and phid_i >= 0
            rows.append(mxi[0:1])
            offsets.append(np.array([cxi[0] - self.phi_f_eff]))
            rows.append(-mxi[1:2])
            offsets.append(np.array([-cxi[1]]))
        self.aff_mat = np.vstack(rows)
        self.aff_vec = np.concatenate(offsets)

    def box(self):
        """Decision-vector bounds from the jerk limits."""
        lower = np.full(self.zdim, -np.inf)
        upper = np.full(self.zdim, np.inf)
        if self.cfg.jerk_max is not None:
            jm = np.tile(np.asarray(self.cfg.jerk_max, dtype=float), self.N)
            lower[:self.N * self.n] = -jm
            upper[:self.N * self.n] = jm
        return lower, upper

    # -- full evaluation -------------------------------------------------
    def _chain_quantities(self, z):
        """Everything the residuals and constraints need, with gradients.

        Memoizes the most recent decision vector: the solver evaluates
        residuals and inequalities back to back at the same point.
        """
        key = z.tobytes()
        if key == self._cache_key:
            return self._cache_steps
        steps = self._chain_quantities_uncached(z)
        self._cache_key = key
        self._cache_steps = steps
        return steps

    def _chain_quantities_uncached(self, z):
        cfg = self.cfg
        n, big_n = self.n, self.N
        steps = []
        omega_int = np.zeros(3)
        d_omega_int = np.zeros((3, self.zdim))
        omega_prev = self.omega_c0
        d_omega_prev = np.zeros((3, self.zdim))
        e_o_prev = self.e_o0
        d_e_o_prev = np.zeros((3, self.zdim))
        alpha, beta, gamma = self.alpha0, self.beta0, self.gamma0
        d_alpha = np.zeros(self.zdim)
        d_beta = np.zeros(self.zdim)
        d_gamma = np.zeros(self.zdim)

        for i in range(1, big_n + 1):
            x_i = self.cx[i] + self.mx[i] @ z
            xi_i = self.cxi[i] + self.mxi[i] @ z
            q_i, qd_i = x_i[:n], x_i[n:2 * n]
            phi_i, phid_i = float(xi_i[0]), float(xi_i[1])
            dq = self.mx[i][:n]
            dqd = self.mx[i][n:2 * n]
            dphi = self.mxi[i][0]
            dphid = self.mxi[i][1]

            p_i, _ = kin.forward_kinematics(self.chain, q_i)
            jac = kin.geometric_jacobian(self.chain, q_i)
            djac_qd = kin.jacobian_velocity_derivative(self.chain, q_i, qd_i)
            jv, jw = jac[:3], jac[3:]
            dv_q, dw_q = djac_qd[:3], djac_qd[3:]

            dp = jv @ dq
            v_tool = jv @ qd_i
            dv_tool = dv_q @ dq + jv @ dqd
            w_tool = jw @ qd_i
            dw_tool = dw_q @ dq + jw @ dqd

            omega_int = omega_int + 0.5 * cfg.ts * (omega_prev + w_tool)
            d_omega_int = d_omega_int + 0.5 * cfg.ts * (d_omega_prev + dw_tool)
            omega_prev, d_omega_prev = w_tool, dw_tool

            omega_r_int, omega_r_local = self._omega_r_integral(phi_i)
            e_o_i = self.e_o0 + self.jl0 @ omega_int - self.jr0 @ omega_r_int
            d_e_o_i = (
                self.jl0 @ d_omega_int
                - np.outer(self.jr0 @ omega_r_local, dphi)
            )

            seg_idx = self.frozen_segment[i - 1]
            seg = self.corridor[seg_idx]
            rho = self.rho[seg_idx]
            delta = e_o_i - e_o_prev
            d_delta = d_e_o_i - d_e_o_prev
            alpha = alpha + float(rho.rho_alpha @ delta)
            beta = beta + float(rho.rho_beta @ delta)
            gamma = gamma + float(rho.rho_gamma @ delta)
            d_alpha = d_alpha + rho.rho_alpha @ d_delta
            d_beta = d_beta + rho.rho_beta @ d_delta
            d_gamma = d_gamma + rho.rho_gamma @ d_delta
            e_o_prev, d_e_o_prev = e_o_i, d_e_o_i

            point, tangent = self._position_ref(phi_i)
            e_p = p_i - point
            d_e_p = dp - np.outer(tangent, dphi)
            e_par = (tangent @ e_p) * tangent
            d_e_par = np.outer(tangent, tangent @ d_e_p)

            dyn_seg = self.corridor[self._window_segment(phi_i)]
            proj_p = np.array([
                dyn_seg.basis_pos.b1 @ e_p, dyn_seg.basis_pos.b2 @ e_p
            ])
            d_proj_p = np.vstack([
                dyn_seg.basis_pos.b1 @ d_e_p, dyn_seg.basis_pos.b2 @ d_e_p
            ])

            e_o_par = beta * seg.spin_axis
            d_e_o_par = np.outer(seg.spin_axis, d_beta)

            omega_seg = self.path.orientation_segments[seg_idx].omega
            ed_p = v_tool - tangent * phid_i
            d_ed_p = dv_tool - np.outer(tangent, dphid)
            ed_o = self.jl0 @ w_tool - (self.jr0 @ omega_seg) * phid_i
            d_ed_o = self.jl0 @ dw_tool - np.outer(self.jr0 @ omega_seg, dphid)

            sig = _sigmoid(cfg.sigmoid_gain * (phi_i - (self.phi_f - cfg.sigmoid_offset)))
            d_sig = cfg.sigmoid_gain * sig * (1.0 - sig) * dphi

            steps.append({
                "x": x_i, "xi": xi_i, "q": q_i, "qd": qd_i,
                "phi": phi_i, "phid": phid_i, "dphi": dphi, "dphid": dphid,
                "dq": dq, "dqd": dqd,
                "p": p_i, "e_p": e_p, "d_e_p": d_e_p,
                "e_par": e_par, "d_e_par": d_e_par,
                "proj_p": proj_p, "d_proj_p": d_proj_p,
                "e_o": e_o_i, "d_e_o": d_e_o_i,
                "alpha": alpha, "beta": beta, "gamma": gamma,
                "d_alpha": d_alpha.copy(), "d_beta": d_beta.copy(),
                "d_gamma": d_gamma.copy(),
                "e_o_par": e_o_par, "d_e_o_par": d_e_o_par,
                "ed_p": ed_p, "d_ed_p": d_ed_p,
                "ed_o": ed_o, "d_ed_o": d_ed_o,
                "sigma": sig, "d_sigma": d_sig,
                "segment": seg_idx, "dyn_segment": self._window_segment(phi_i),
            })
        return steps

    def residuals(self, z):
        """Stacked weighted residuals r with f = r @ r, plus the Jacobian."""
        cfg = self.cfg
        z = np.asarray(z, dtype=float)
        steps = self._chain_quantities(z)
        n = self.n
        r_parts = []
        j_parts = []
        sw_par = np.sqrt(cfg.w_tangential)
        sw_rate = np.sqrt(cfg.w_error_rate)
        sw_null = np.sqrt(cfg.w_nullspace)
        sw_u = np.sqrt(cfg.w_joint_jerk)
        sw_v = np.sqrt(cfg.w_path_jerk)
        for i, st in enumerate(steps, start=1):
            sig, d_sig = st["sigma"], st["d_sigma"]
            e_p_obj = (1.0 - sig) * st["e_par"] + sig * st["e_p"]
            d_e_p_obj = (
                (1.0 - sig) * st["d_e_par"] + sig * st["d_e_p"]
                + np.outer(st["e_p"] - st["e_par"], d_sig)
            )
            e_o_obj = (1.0 - sig) * st["e_o_par"] + sig * st["e_o"]
            d_e_o_obj = (
                (1.0 - sig) * st["d_e_o_par"] + sig * st["d_e_o"]
                + np.outer(st["e_o"] - st["e_o_par"], d_sig)
            )
            u_i = z[(i - 1) * n:i * n]
            v_i = z[self.N * n + i - 1]
            du = self._u_selector(i)
            dv = self._v_selector(i)

            r_parts.extend([
                sw_par * e_p_obj,
                sw_par * e_o_obj,
                sw_rate * st["ed_p"],
                sw_rate * st["ed_o"],
                self.sqrt_w_xi @ (st["xi"] - self.xi_target),
                sw_null * (self.nullspace @ st["qd"]),
                sw_u * u_i,
                np.array([sw_v * v_i]),
            ])
            j_parts.extend([
                sw_par * d_e_p_obj,
                sw_par * d_e_o_obj,
                sw_rate * st["d_ed_p"],
                sw_rate * st["d_ed_o"],
                self.sqrt_w_xi @ self.mxi[i],
                sw_null * (self.nullspace @ st["dqd"]),
                sw_u * du,
                sw_v * dv,
            ])
        return np.concatenate(r_parts), np.vstack(j_parts)

    def inequalities(self, z):
        """Affine state/path rows plus the four corridor channels per step."""
        z = np.asarray(z, dtype=float)
        steps = self._chain_quantities(z)
        vals = [self.aff_mat @ z + self.aff_vec]
        jacs = [self.aff_mat]
        for st in steps:
            seg = self.corridor[st["dyn_segment"]]
            for channel, value, d_value in (
                (seg.pos_1, st["proj_p"][0], st["d_proj_p"][0]),
                (seg.pos_2, st["proj_p"][1], st["d_proj_p"][1]),
                (seg.orn_1, st["alpha"], st["d_alpha"]),
                (seg.orn_2, st["gamma"], st["d_gamma"]),
            ):
                y, yp = bnd.eval_bound_extrapolated(channel.envelope, st["phi"])
                mid = 0.5 * (channel.e_lower + channel.e_upper)
                half = 0.5 * (channel.e_upper - channel.e_lower)
                offset = mid * y
                width = half * y
                resid = value - offset
                vals.append(np.array([resid ** 2 - width ** 2]))
                grad = 2.0 * resid * (d_value - mid * yp * st["dphi"])
                grad -= 2.0 * width * half * yp * st["dphi"]
                jacs.append(grad[None, :])
        return np.concatenate(vals), np.vstack(jacs)

    def objective(self, z):
        r, jac = self.residuals(z)
        return float(r @ r), 2.0 * jac.T @ r

    def problem(self, warm_start=None):
        lower, upper = self.box()
        x0 = np.zeros(self.zdim) if warm_start is None else np.asarray(warm_start)
        return sqp.Problem(
            dim=self.zdim,
            objective=self.objective,
            residuals=self.residuals,
            inequalities=self.inequalities,
            lower=lower,
            upper=upper,
            x0=x0,
        )

    def inspect(self, z):
        """Per-step plan records for diagnostics and logging."""
        steps = self._chain_quantities(np.asarray(z, dtype=float))
        out = []
        for st in steps:
            seg = self.corridor[st["dyn_segment"]]
            psi = np.array([
                seg.pos_1.psi(st["proj_p"][0], st["phi"]),
                seg.pos_2.psi(st["proj_p"][1], st["phi"]),
                seg.orn_1.psi(st["alpha"], st["phi"]),
                seg.orn_2.psi(st["gamma"], st["phi"]),
            ])
            out.append(PlanStep(
                phi=st["phi"], phid=st["phid"],
                e_p=st["e_p"], e_p_par=st["e_par"],
                e_o=st["e_o"], alpha=st["alpha"], beta=st["beta"],
                gamma=st["gamma"], psi=psi, segment=st["dyn_segment"],
            ))
        return out


def shift_warm_start(z, big_n, n):
    """Shift a horizon solution one sample, repeating the last knots."""
    z = np.asarray(z, dtype=float)
    u = z[:big_n * n].reshape(big_n, n)
    v = z[big_n * n:]
    u_next = np.vstack([u[1:], u[-1:]])
    v_next = np.concatenate([v[1:], v[-1:]])
    return np.concatenate([u_next.ravel(), v_next])


def braking_inputs(state, config):
    """Jerk knots that drive the accelerations toward zero.

    With the jerk ramping between knots, the acceleration change over
    one sample is ts (u_k + u_{k+1}) / 2; the previous knot is already
    committed, so the free knot takes the remainder, clipped to the
    jerk box.
    """
    u1 = -2.0 * state.x[2 * len(state.u_prev):] / config.ts - state.u_prev
    if config.jerk_max is not None:
        jm = np.asarray(config.jerk_max, dtype=float)
        u1 = np.clip(u1, -jm, jm)
    v1 = -2.0 * float(state.xi[2]) / config.ts - state.v_prev
    return u1, v1


def plan_cycle(chain, state, path, corridor, config, warm_start=None):
    """Assemble and solve one receding-horizon problem.

    Returns the applied knots, the predicted plan and the solver
    diagnostics.  A solver that runs out of budget at a feasible point
    still yields usable inputs (flagged); hard infeasibility falls back
    to braking.
    """
    model = HorizonModel(chain, path, corridor, config, state, warm_start)
    problem = model.problem(warm_start)
    opts = sqp.Options(
        kkt_tol=config.kkt_tol,
        feas_tol=config.feas_tol,
        max_iter=config.max_iterations,
        max_time=config.max_solve_time,
    )
    result = sqp.solve(problem, warm_start=warm_start, opts=opts)

    if result.status == sqp.CONVERGED:
        status = STATUS_CONVERGED
    elif result.max_violation <= config.feas_tol:
        status = STATUS_FEASIBLE
    else:
        status = STATUS_BRAKING

    if status == STATUS_BRAKING:
        u1, v1 = braking_inputs(state, config)
        steps = []
        warm_next = np.zeros(model.zdim)
    else:
        u1 = result.z[:chain.dof].copy()
        v1 = float(result.z[config.horizon * chain.dof])
        steps = model.inspect(result.z)
        warm_next = shift_warm_start(result.z, config.horizon, chain.dof)

    return PlanCycleOutput(
        u_first=u1,
        v_first=v1,
        status=status,
        solver=result,
        steps=steps,
        warm_next=warm_next,
        anchor_singular=model.anchor_singular,
    )


def advance_state(chain, state, config, u1, v1):
    """Ideal-tracking state update: the model transition applied exactly."""
    n = chain.dof
    lti_joint = dyn.discretize(config.ts, n)
    lti_path = dyn.discretize(config.ts, 1)
    x_new = dyn.step(lti_joint, state.x, state.u_prev, u1)
    xi_new = dyn.step(lti_path, state.xi, np.array([state.v_prev]), np.array([v1]))
    omega_old = kin.geometric_jacobian(chain, state.x[:n])[3:] @ state.x[n:2 * n]
    omega_new = kin.geometric_jacobian(chain, x_new[:n])[3:] @ x_new[n:2 * n]
    omega_total = state.omega_c_total + 0.5 * config.ts * (omega_old + omega_new)
    return PlannerState(
        x=x_new,
        u_prev=np.asarray(u1, dtype=float).copy(),
        xi=xi_new,
        v_prev=float(v1),
        omega_c_total=omega_total,
        revision=state.revision,
    )


@dataclass
class LoopRecord:
    """One closed-loop sample: the measured state plus plan diagnostics."""
    t: float
    state: PlannerState
    p: np.ndarray
    e_o: np.ndarray
    e_p: np.ndarray
    e_p_par_norm: float
    e_o_par_norm: float
    proj: np.ndarray          # exact channel errors [p1, p2, o1, o2]
    psi_model: np.ndarray     # constraint values of the applied plan step
    upsilon: np.ndarray       # envelope value per channel at this phi
    offset: np.ndarray        # corridor offset per channel at this phi
    u: np.ndarray
    v: float
    status: str
    iterations: int
    solve_time: float
    revision: int
    segment: int


@dataclass
class TrajectoryLog:
    records: list
    finished: bool
    exit_reason: str

    @property
    def duration(self):
        return self.records[-1].t if self.records else 0.0


def measure(chain, state, path, corridor):
    """Exact pose errors of a state against the path, per channel."""
    n = chain.dof
    p, r_c = kin.forward_kinematics(chain, state.x[:n])
    phi = state.phi
    seg_idx = pth.segment_index(path, min(phi, path.phi_end))
    seg = corridor[seg_idx]
    dec_p = err.position_error(p, path, phi, seg.basis_pos)
    e_o, _ = err.orientation_error_true(r_c, path, phi)
    alpha, beta, gamma, _ = err.decompose_orientation_error(
        e_o, seg.basis_orn, seg.spin_axis
    )
    proj = np.array([dec_p.projection[0], dec_p.projection[1], alpha, gamma])
    upsilon = np.zeros(4)
    offset = np.zeros(4)
    for k, channel in enumerate(seg.channels()):
        y, _ = bnd.eval_bound_extrapolated(channel.envelope, phi)
        upsilon[k] = y
        offset[k] = 0.5 * (channel.e_lower + channel.e_upper) * y
    return {
        "p": p, "e_p": dec_p.error, "e_o": e_o,
        "e_p_par_norm": float(np.linalg.norm(dec_p.tangential)),
        "e_o_par_norm": abs(beta),
        "proj": proj, "upsilon": upsilon, "offset": offset,
        "segment": seg_idx,
    }


@dataclass(frozen=True)
class ReplanEvent:
    """Swap the remaining reference path during the run.

    Fires once when the loop time reaches ``trigger_time`` or the path
    parameter reaches ``trigger_phi``.  ``anchor`` names where the new
    path branches off: "current" splices at the reference pose of the
    live path parameter, an integer via index branches at that via.
    """
    new_via_poses: tuple
    new_segment_specs: tuple
    trigger_time: float = None
    trigger_phi: float = None
    anchor: object = "current"


def replan(state, path, corridor, anchor_pose, new_via_poses, new_segment_specs):
    """Build the successor path and corridor branching at an on-path pose.

    The feasibility-preserving choice at the branch point: each channel
    of the first new segment starts at the value of the old envelope
    there, so whatever orthogonal error the robot carries stays
    admissible.  When the branch lands exactly on an existing via the
    new specs are trusted as-is, which makes splicing a path onto its
    own tail an exact no-op.
    """
    new_path, phi_tilde = pth.splice_path(
        path, anchor_pose[0], anchor_pose[1], new_via_poses
    )
    if phi_tilde < state.phi - 1e-9:
        raise ValueError("replanned path must branch at or after the current phi")

    old_idx = pth.segment_index(path, min(phi_tilde, path.phi_end))
    on_via = any(abs(v - phi_tilde) <= 1e-12 for v in path.via_phis)
    kept = []
    for l, seg in enumerate(corridor.segments):
        if path.position_segments[l].phi_end <= phi_tilde + 1e-12:
            kept.append(seg)
    if not on_via:
        kept = kept[:old_idx]
        kept.append(bnd.truncate_segment_corridor(corridor[old_idx], phi_tilde))

    new_segments = list(kept)
    n_new = new_path.n_segments - len(kept)
    if len(new_segment_specs) != n_new:
        raise ValueError(f"need {n_new} new segment specs, got {len(new_segment_specs)}")
    for k in range(n_new):
        spec = new_segment_specs[k]
        if k == 0 and not on_via:
            old_seg = corridor[old_idx]
            spec = replace(
                spec,
                pos_1=replace(spec.pos_1, eps_start=_envelope_at(old_seg.pos_1, phi_tilde)),
                pos_2=replace(spec.pos_2, eps_start=_envelope_at(old_seg.pos_2, phi_tilde)),
                orn_1=replace(spec.orn_1, eps_start=_envelope_at(old_seg.orn_1, phi_tilde)),
                orn_2=replace(spec.orn_2, eps_start=_envelope_at(old_seg.orn_2, phi_tilde)),
            )
        new_segments.append(
            bnd.build_segment_corridor(new_path, len(kept) + k, spec)
        )
    new_corridor = bnd.Corridor(segments=tuple(new_segments))
    return new_path, new_corridor, phi_tilde


def _envelope_at(channel, phi):
    y, _ = bnd.eval_bound_extrapolated(channel.envelope, phi)
    return float(y)


def run_loop(chain, state, path, corridor, config, events=(), max_steps=2000,
             cold_start=False):
    """Drive the closed loop under ideal tracking until the path is done.

    Terminates once the path parameter is within ``exit_phi_gap`` of
    the end, the full pose errors are inside the exit tolerances and
    the path speed has settled, or when the step budget runs out.
    Replanning events fire at most once each, in order.
    """
    records = []
    warm = None
    pending = sorted(
        events,
        key=lambda e: (e.trigger_time if e.trigger_time is not None else np.inf,
                       e.trigger_phi if e.trigger_phi is not None else np.inf),
    )
    t = 0.0
    exit_reason = "step_budget"
    finished = False

    for _ in range(max_steps):
        while pending and _triggered(pending[0], t, state.phi):
            event = pending.pop(0)
            anchor_pose = _anchor_pose(event, path, state)
            path, corridor, _ = replan(
                state, path, corridor, anchor_pose,
                event.new_via_poses, event.new_segment_specs,
            )
            state = replace(state, revision=state.revision + 1)
            warm = None if warm is None else warm.copy()

        cycle = plan_cycle(
            chain, state, path, corridor, config,
            warm_start=None if cold_start else warm,
        )
        measured = measure(chain, state, path, corridor)
        psi_model = cycle.steps[0].psi if cycle.steps else np.full(4, np.nan)
        records.append(LoopRecord(
            t=t,
            state=state,
            p=measured["p"],
            e_o=measured["e_o"],
            e_p=measured["e_p"],
            e_p_par_norm=measured["e_p_par_norm"],
            e_o_par_norm=measured["e_o_par_norm"],
            proj=measured["proj"],
            psi_model=psi_model,
            upsilon=measured["upsilon"],
            offset=measured["offset"],
            u=cycle.u_first,
            v=cycle.v_first,
            status=cycle.status,
            iterations=cycle.solver.iterations,
            solve_time=cycle.solver.wall_time,
            revision=state.revision,
            segment=measured["segment"],
        ))

        state = advance_state(chain, state, config, cycle.u_first, cycle.v_first)
        warm = cycle.warm_next
        t += config.ts

        done_phi = state.phi >= path.phi_end - config.exit_phi_gap
        final = measure(chain, state, path, corridor)
        done_err = (
            np.linalg.norm(final["e_p"]) < config.exit_position_error
            and np.linalg.norm(final["e_o"]) < config.exit_orientation_error
            and abs(float(state.xi[1])) < config.exit_phi_rate
        )
        if done_phi and done_err:
            finished = True
            exit_reason = "path_complete"
            records.append(_terminal_record(chain, state, path, corridor, t, final))
            break

    return TrajectoryLog(records=records, finished=finished, exit_reason=exit_reason)


def _terminal_record(chain, state, path, corridor, t, measured):
    return LoopRecord(
        t=t,
        state=state,
        p=measured["p"],
        e_o=measured["e_o"],
        e_p=measured["e_p"],
        e_p_par_norm=measured["e_p_par_norm"],
        e_o_par_norm=measured["e_o_par_norm"],
        proj=measured["proj"],
        psi_model=np.full(4, np.nan),
        upsilon=measured["upsilon"],
        offset=measured["offset"],
        u=np.zeros(chain.dof),
        v=0.0,
        status="terminal",
        iterations=0,
        solve_time=0.0,
        revision=state.revision,
        segment=measured["segment"],
    )


def _triggered(event, t, phi):
    if event.trigger_time is not None and t >= event.trigger_time - 1e-12:
        return True
    if event.trigger_phi is not None and phi >= event.trigger_phi - 1e-12:
        return True
    return False


def _anchor_pose(event, path, state):
    if event.anchor == "current":
        point, _, _, _ = pth.eval_position(path, state.phi)
        rotvec = rot.log(pth.reference_rotation(path, state.phi))
        return point, rotvec
    idx = int(event.anchor)
    return path.via_positions[idx].copy(), path.via_rotvecs[idx].copy()

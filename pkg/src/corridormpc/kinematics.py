"""Serial-chain forward kinematics, geometric Jacobian, nullspace projection.

A chain is an ordered list of revolute joints.  Each joint frame is
placed relative to its parent by a fixed translation and a fixed
rotation, then rotates about its (unit) axis by the joint angle.  A
rigid tool transform follows the last joint.  Chains are immutable
after construction and safe to share; all functions here are pure in
(chain, q).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rotations as rot

AXIS_TOL = 1e-9


class SingularConfiguration(Exception):
    """Raised when J J^T is too ill-conditioned to invert."""


@dataclass(frozen=True)
class Joint:
    axis: np.ndarray           # unit rotation axis in the parent frame
    offset: np.ndarray         # translation from the parent frame, meters
    orientation: np.ndarray    # fixed rotation vector applied before the joint

    def __post_init__(self):
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=float))
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))
        object.__setattr__(
            self, "orientation", np.asarray(self.orientation, dtype=float)
        )
        if abs(np.linalg.norm(self.axis) - 1.0) > AXIS_TOL:
            raise ValueError("joint axis must have unit length")


@dataclass(frozen=True)
class KinematicChain:
    joints: tuple
    tool_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tool_orientation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(
            self, "tool_offset", np.asarray(self.tool_offset, dtype=float)
        )
        object.__setattr__(
            self, "tool_orientation", np.asarray(self.tool_orientation, dtype=float)
        )
        if len(self.joints) < 1:
            raise ValueError("chain needs at least one joint")

    @property
    def dof(self):
        return len(self.joints)


def chain_from_dict(data):
    """Build a chain from a plain dict (the scenario file format).

    Expected keys: ``joints`` (list of {axis, offset, orientation}),
    ``tool_offset`` and ``tool_orientation`` (optional).
    """
    joints = [
        Joint(
            axis=j["axis"],
            offset=j["offset"],
            orientation=j.get("orientation", (0.0, 0.0, 0.0)),
        )
        for j in data["joints"]
    ]
    return KinematicChain(
        joints=joints,
        tool_offset=data.get("tool_offset", (0.0, 0.0, 0.0)),
        tool_orientation=data.get("tool_orientation", (0.0, 0.0, 0.0)),
    )


def _check_q(chain, q):
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.dof,):
        raise ValueError(f"expected {chain.dof} joint values, got {q.shape}")
    return q


def joint_frames(chain, q):
    """World origin and world axis of every joint at configuration q.

    Returns (origins, axes) as (n, 3) arrays.  The axis of a joint is
    unaffected by its own angle, so these are the quantities entering
    the geometric Jacobian columns.
    """
    q = _check_q(chain, q)
    p = np.zeros(3)
    r = np.eye(3)
    origins = np.zeros((chain.dof, 3))
    axes = np.zeros((chain.dof, 3))
    for i, joint in enumerate(chain.joints):
        p = p + r @ joint.offset
        r = r @ rot.exp(joint.orientation)
        origins[i] = p
        axes[i] = r @ joint.axis
        r = r @ rot.exp(joint.axis * q[i])
    return origins, axes


def forward_kinematics(chain, q):
    """Tool-frame pose in the world frame: (position, rotation matrix)."""
    q = _check_q(chain, q)
    p = np.zeros(3)
    r = np.eye(3)
    for i, joint in enumerate(chain.joints):
        p = p + r @ joint.offset
        r = r @ rot.exp(joint.orientation) @ rot.exp(joint.axis * q[i])
    p = p + r @ chain.tool_offset
    r = r @ rot.exp(chain.tool_orientation)
    return p, r


def geometric_jacobian(chain, q):
    """6 x n map from joint rates to tool [linear; angular] velocity."""
    q = _check_q(chain, q)
    origins, axes = joint_frames(chain, q)
    p_tool, _ = forward_kinematics(chain, q)
    jac = np.zeros((6, chain.dof))
    for i in range(chain.dof):
        jac[:3, i] = np.cross(axes[i], p_tool - origins[i])
        jac[3:, i] = axes[i]
    return jac


def jacobian_velocity_derivative(chain, q, qdot):
    """Partial derivative of J(q) qdot with respect to q, as a 6 x n matrix.

    Column j holds d/dq_j of the tool twist at fixed qdot.  Uses the
    closed form for revolute chains: rotating joint j sweeps every
    distal axis and origin about the axis of joint j, so

        d z_i / d q_j    = z_j x z_i            (j < i, else 0)
        d p_i / d q_j    = z_j x (p_i - p_j)    (j < i, else 0)
        d p_tool / d q_j = z_j x (p_tool - p_j)
    """
    q = _check_q(chain, q)
    qdot = np.asarray(qdot, dtype=float)
    n = chain.dof
    origins, axes = joint_frames(chain, q)
    p_tool, _ = forward_kinematics(chain, q)
    out = np.zeros((6, n))
    for j in range(n):
        zj, pj = axes[j], origins[j]
        dp_tool = np.cross(zj, p_tool - pj)
        dv = np.zeros(3)
        dw = np.zeros(3)
        for i in range(n):
            lever = p_tool - origins[i]
            if j < i:
                dz = np.cross(zj, axes[i])
                dlever = dp_tool - np.cross(zj, origins[i] - pj)
                dv += qdot[i] * (np.cross(dz, lever) + np.cross(axes[i], dlever))
                dw += qdot[i] * dz
            else:
                dv += qdot[i] * np.cross(axes[i], dp_tool)
        out[:3, j] = dv
        out[3:, j] = dw
    return out


def nullspace_projector(chain, q, cond_limit=1e8):
    """Projector onto joint motions that leave the tool still.

    P = I - J^+ J with the right pseudo-inverse J^+ = J^T (J J^T)^-1.
    Falls back to an SVD pseudo-inverse when J J^T is poorly
    conditioned, and raises :class:`SingularConfiguration` past
    ``cond_limit``.
    """
    jac = geometric_jacobian(chain, q)
    gram = jac @ jac.T
    cond = np.linalg.cond(gram)
    if cond > cond_limit:
        raise SingularConfiguration(
            f"J J^T condition number {cond:.3e} exceeds {cond_limit:.1e}"
        )
    if cond > 1e6:
        pinv = np.linalg.pinv(jac)
    else:
        pinv = jac.T @ np.linalg.solve(gram, np.eye(6))
    return np.eye(chain.dof) - pinv @ jac

"""Rotation-group arithmetic on rotation vectors and 3x3 matrices.

A rotation vector tau = theta * u encodes a rotation by the angle
theta = ||tau|| about the unit axis u.  All functions are pure and
operate on plain numpy arrays; values can be shared freely across
threads.
"""

from __future__ import annotations

import numpy as np

# Angle thresholds for switching to series expansions.  exp() is
# regular everywhere, but the closed forms of log() and the inverse
# Jacobians divide by sin(theta) and theta.
_EXP_SMALL = 1e-8
_LOG_SMALL = 1e-8
_JAC_SMALL = 1e-6
_NEAR_PI = 1e-6

ORTHONORMAL_TOL = 1e-9


def skew(v):
    """Skew-symmetric matrix S with S @ w == cross(v, w)."""
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def unskew(m):
    """Extract the vector of a skew-symmetric matrix."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def exp(tau):
    """Rotation matrix for a rotation vector (Rodrigues formula)."""
    tau = np.asarray(tau, dtype=float)
    theta = np.linalg.norm(tau)
    s = skew(tau)
    if theta < _EXP_SMALL:
        return np.eye(3) + s + 0.5 * (s @ s)
    u = skew(tau / theta)
    return np.eye(3) + np.sin(theta) * u + (1.0 - np.cos(theta)) * (u @ u)


def log(r):
    """Rotation vector of a rotation matrix, angle in [0, pi].

    The angle-pi case is handled through the symmetric part of the
    matrix: the axis is the eigenvector of (r + r^T)/2 with eigenvalue
    one, with the sign fixed by the first nonzero component.  Use
    :func:`is_near_pi` on the result to detect that the axis sign is
    ambiguous.
    """
    r = np.asarray(r, dtype=float)
    cos_theta = np.clip(0.5 * (np.trace(r) - 1.0), -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < _LOG_SMALL:
        return 0.5 * unskew(r - r.T)
    if np.pi - theta < _NEAR_PI:
        sym = 0.5 * (r + r.T)
        eigvals, eigvecs = np.linalg.eigh(sym)
        axis = eigvecs[:, np.argmax(eigvals)]
        axis = axis / np.linalg.norm(axis)
        for component in axis:
            if abs(component) > 1e-12:
                if component < 0.0:
                    axis = -axis
                break
        # Off the exact singularity the antisymmetric part still fixes
        # the sign of the axis.
        residual = unskew(r - r.T)
        if np.dot(residual, axis) < 0.0:
            axis = -axis
        return theta * axis
    return (theta / (2.0 * np.sin(theta))) * unskew(r - r.T)


def is_near_pi(tau, tol=_NEAR_PI):
    """True when the rotation angle is within ``tol`` of pi."""
    return np.pi - np.linalg.norm(tau) < tol


def canonicalize(tau):
    """Wrap a rotation vector so that its angle lies in [0, pi]."""
    tau = np.asarray(tau, dtype=float)
    theta = np.linalg.norm(tau)
    if theta <= np.pi or theta == 0.0:
        return tau.copy()
    axis = tau / theta
    theta = np.fmod(theta, 2.0 * np.pi)
    if theta > np.pi:
        theta = 2.0 * np.pi - theta
        axis = -axis
    return theta * axis


def _inv_jacobian_coeff(theta):
    # 1/theta^2 - (1 + cos(theta)) / (2 theta sin(theta)), with the
    # Taylor expansion 1/12 + theta^2/720 + ... near zero.
    if theta < _JAC_SMALL:
        t2 = theta * theta
        return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    return 1.0 / (theta * theta) - (1.0 + np.cos(theta)) / (
        2.0 * theta * np.sin(theta)
    )


def inv_jacobian_left(tau):
    """Inverse of the left Jacobian of the exponential map."""
    tau = np.asarray(tau, dtype=float)
    s = skew(tau)
    c = _inv_jacobian_coeff(np.linalg.norm(tau))
    return np.eye(3) - 0.5 * s + c * (s @ s)


def inv_jacobian_right(tau):
    """Inverse of the right Jacobian; equals inv_jacobian_left(-tau)."""
    tau = np.asarray(tau, dtype=float)
    s = skew(tau)
    c = _inv_jacobian_coeff(np.linalg.norm(tau))
    return np.eye(3) + 0.5 * s + c * (s @ s)


def concat_approx(tau1, tau2, tau3):
    """First-order rotation vector of Exp(tau3) Exp(tau2) Exp(tau1).

    Linearizes the two outer factors around the middle rotation:

        tau2 + Jl^-1(tau2) tau3 + Jr^-1(Log(R3 R2)) tau1

    Accurate to second order in ||tau1|| and ||tau3||.
    """
    tau1 = np.asarray(tau1, dtype=float)
    tau2 = np.asarray(tau2, dtype=float)
    tau3 = np.asarray(tau3, dtype=float)
    tau32 = log(exp(tau3) @ exp(tau2))
    return tau2 + inv_jacobian_left(tau2) @ tau3 + inv_jacobian_right(tau32) @ tau1


def is_rotation_matrix(r, tol=ORTHONORMAL_TOL):
    """Check orthonormality and unit determinant elementwise."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        return False
    if not np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0.0):
        return False
    return abs(np.linalg.det(r) - 1.0) <= tol

"""Tangential/orthogonal decomposition of pose path errors.

Position errors split exactly into a component along the path tangent
and a remainder in the orthogonal plane, expressed in a per-segment
orthonormal basis chosen by the user through a desired direction.

Orientation errors use the rotation-vector error between the current
and reference frames.  The error matrix factors into three single-axis
rotations about the two orthogonal basis directions and the reference
spin axis; the middle (tangential) angle is extracted in a rotated
frame like roll/pitch/yaw angles.  A linearization of that factoring
yields per-segment projection vectors rho so that the three angles
evolve with rho^T d(e_o), which is what the planner integrates over a
horizon without ever evaluating the reference orientation away from
the cycle start.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import paths as pth
from . import rotations as rot

PARALLEL_TOL = 1e-6
BETA_SINGULAR_TOL = 1e-3
GRAM_COND_LIMIT = 1e10


@dataclass(frozen=True)
class OrthoBasis:
    b1: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class ProjectionVectors:
    rho_alpha: np.ndarray
    rho_beta: np.ndarray
    rho_gamma: np.ndarray


@dataclass(frozen=True)
class PositionErrorDecomposition:
    error: np.ndarray        # full error
    tangential: np.ndarray   # component along the tangent
    orthogonal: np.ndarray   # remainder in the orthogonal plane
    projection: np.ndarray   # orthogonal part in basis coordinates, 2-vector


def gram_schmidt_basis(direction, desired):
    """Orthonormal basis of the plane orthogonal to ``direction``.

    b1 is the normalized rejection of the desired vector from the
    direction; b2 completes the right-handed triple (direction, b1, b2)
    via the cross product.  Invariant under positive scaling of
    ``direction``.
    """
    direction = np.asarray(direction, dtype=float)
    desired = np.asarray(desired, dtype=float)
    norm = np.linalg.norm(direction)
    if norm <= 0.0:
        raise ValueError("direction must be nonzero")
    unit = direction / norm
    rejected = desired - (unit @ desired) * unit
    rej_norm = np.linalg.norm(rejected)
    if rej_norm <= PARALLEL_TOL * np.linalg.norm(desired):
        raise ValueError("desired basis vector is parallel to the direction")
    b1 = rejected / rej_norm
    return OrthoBasis(b1=b1, b2=np.cross(unit, b1))


def orientation_axis(omega, fallback):
    """Unit spin axis of a segment, or the fallback for a still segment."""
    norm = np.linalg.norm(omega)
    if norm < 1e-12:
        fallback = np.asarray(fallback, dtype=float)
        return fallback / np.linalg.norm(fallback)
    return np.asarray(omega, dtype=float) / norm


def position_error(p_c, path, phi, basis):
    """Decompose the error of a point against the path at phi."""
    p_c = np.asarray(p_c, dtype=float)
    point, tangent, _, _ = pth.eval_position(path, phi)
    error = p_c - point
    tangential = (tangent @ error) * tangent
    orthogonal = error - tangential
    projection = np.array([basis.b1 @ orthogonal, basis.b2 @ orthogonal])
    return PositionErrorDecomposition(
        error=error,
        tangential=tangential,
        orthogonal=orthogonal,
        projection=projection,
    )


def position_error_rate(tool_velocity, error, tangent, phidot, curvature=None):
    """Time derivatives of the position error and its split.

    ``curvature`` is the second derivative of the reference curve with
    respect to phi; it vanishes on linear segments but the general
    terms are kept for curved references.
    Returns (de, de_tangential, de_orthogonal).
    """
    tool_velocity = np.asarray(tool_velocity, dtype=float)
    error = np.asarray(error, dtype=float)
    tangent = np.asarray(tangent, dtype=float)
    de = tool_velocity - tangent * phidot
    de_par = (tangent @ de) * tangent
    if curvature is not None:
        curve_rate = np.asarray(curvature, dtype=float) * phidot
        de_par = de_par + (curve_rate @ error) * tangent + (tangent @ error) * curve_rate
    return de, de_par, de - de_par


def orientation_error_true(r_c, path, phi):
    """Exact rotation-vector error against the reference orientation.

    Returns (e_o, near_half_turn) where the flag marks the ambiguous
    axis at a rotation angle of pi.
    """
    e_o = rot.log(np.asarray(r_c, dtype=float) @ pth.reference_rotation(path, phi).T)
    return e_o, rot.is_near_pi(e_o)


def decompose_orientation_error(e_o, basis, omega_dir):
    """Exact three-angle split of an orientation error.

    Factors Exp(e_o) = Exp(gamma b2) Exp(beta w) Exp(alpha b1) with w
    the unit spin axis.  Solved by expressing the error matrix in the
    frame with columns (b2, w, b1) and reading off x-y-z fixed-angle
    values.  Returns (alpha, beta, gamma, singular) where ``singular``
    flags beta within one milliradian of a quarter turn.
    """
    omega_dir = np.asarray(omega_dir, dtype=float)
    r_err = rot.exp(np.asarray(e_o, dtype=float))
    frame = np.column_stack([basis.b2, omega_dir, basis.b1])
    m = frame.T @ r_err @ frame
    beta = np.arcsin(np.clip(m[0, 2], -1.0, 1.0))
    alpha = np.arctan2(-m[0, 1], m[0, 0])
    gamma = np.arctan2(-m[1, 2], m[2, 2])
    singular = abs(abs(beta) - 0.5 * np.pi) < BETA_SINGULAR_TOL
    return alpha, beta, gamma, singular


def reconstruct_orientation_error(alpha, beta, gamma, basis, omega_dir):
    """Error matrix from the three angles (inverse of the decomposition)."""
    return (
        rot.exp(gamma * basis.b2)
        @ rot.exp(beta * np.asarray(omega_dir, dtype=float))
        @ rot.exp(alpha * basis.b1)
    )


def projection_vectors(e_o, alpha0, beta0, basis, omega_dir):
    """Linear maps from error increments to the three angles.

    Linearizing the factored error around the initial angles turns the
    three-angle fit into a least-squares problem in (alpha, beta,
    gamma) with constant columns r1, r2, r3; solving its normal
    equations row-wise gives vectors rho with angle ~= rho^T e_o.
    """
    e_o = np.asarray(e_o, dtype=float)
    omega_dir = np.asarray(omega_dir, dtype=float)
    r_err = rot.exp(e_o)
    r1 = rot.inv_jacobian_right(rot.log(r_err)) @ basis.b1
    peeled = r_err @ rot.exp(alpha0 * basis.b1).T
    r2 = rot.inv_jacobian_right(rot.log(peeled)) @ omega_dir
    peeled = peeled @ rot.exp(beta0 * omega_dir).T
    r3 = rot.inv_jacobian_right(rot.log(peeled)) @ basis.b2
    columns = np.column_stack([r1, r2, r3])
    gram = columns.T @ columns
    if np.linalg.cond(gram) > GRAM_COND_LIMIT:
        raise ValueError("projection axes are degenerate")
    rho = columns @ np.linalg.inv(gram)
    return ProjectionVectors(
        rho_alpha=rho[:, 0], rho_beta=rho[:, 1], rho_gamma=rho[:, 2]
    )


@dataclass(frozen=True)
class PropagatedOrientationError:
    e_o: np.ndarray
    alpha: float
    beta: float
    gamma: float
    segment: int


def propagate_orientation_error(
    e_o0, path, segment_bases, omega_c_integrals, phi_series, phi0=None
):
    """Linearized horizon rollout of the orientation error.

    ``omega_c_integrals`` holds the running integral of the tool
    angular velocity at each sample, relative to the first sample.
    The full error evolves with the inverse Jacobians frozen at the
    start error; the three angles accumulate projection-vector
    increments segment by segment, switching after a via is crossed.
    ``segment_bases`` provides (OrthoBasis, unit spin axis) per path
    segment.
    """
    e_o0 = np.asarray(e_o0, dtype=float)
    phi_series = np.asarray(phi_series, dtype=float)
    if phi0 is None:
        phi0 = float(phi_series[0])
    jl0 = rot.inv_jacobian_left(e_o0)
    jr0 = rot.inv_jacobian_right(e_o0)
    omega_r_ref = pth.integrated_reference_rotation(path, phi0)

    n_seg = path.n_segments
    rhos = []
    for l in range(n_seg):
        basis, axis = segment_bases[l]
        alpha0, beta0, _, _ = decompose_orientation_error(e_o0, basis, axis)
        rhos.append(projection_vectors(e_o0, alpha0, beta0, basis, axis))

    start_seg = pth.segment_index(path, phi0)
    basis0, axis0 = segment_bases[start_seg]
    alpha, beta, gamma, _ = decompose_orientation_error(e_o0, basis0, axis0)

    out = []
    prev = e_o0
    for k, phi in enumerate(phi_series):
        omega_r_int = pth.integrated_reference_rotation(path, phi) - omega_r_ref
        e_o = e_o0 + jl0 @ np.asarray(omega_c_integrals[k], dtype=float)
        e_o = e_o - jr0 @ omega_r_int
        seg = pth.segment_index(path, phi)
        delta = e_o - prev
        alpha += float(rhos[seg].rho_alpha @ delta)
        beta += float(rhos[seg].rho_beta @ delta)
        gamma += float(rhos[seg].rho_gamma @ delta)
        out.append(
            PropagatedOrientationError(
                e_o=e_o, alpha=alpha, beta=beta, gamma=gamma, segment=seg
            )
        )
        prev = e_o
    return out

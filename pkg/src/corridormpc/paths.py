"""Piecewise-linear pose reference paths parameterized by arc length.

A path couples a piecewise-linear position curve with a piecewise
constant-angular-velocity orientation curve through one shared
parameter phi (the position arc length).  Segment l runs from phi_l to
phi_{l+1}; at a via-point the incoming segment answers slope queries so
that accumulated error bookkeeping switches strictly after crossing.
Paths are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rotations as rot

_MIN_SEGMENT = 1e-9
_PI_STEP_TOL = 1e-9


@dataclass(frozen=True)
class PositionSegment:
    slope: np.ndarray       # unit direction
    base: np.ndarray        # position at phi_start, meters
    phi_start: float
    phi_end: float


@dataclass(frozen=True)
class OrientationSegment:
    omega: np.ndarray       # angular rate, radians per meter of phi
    r_start: np.ndarray     # rotation matrix at phi_start
    phi_start: float
    phi_end: float


@dataclass(frozen=True)
class PiecewisePath:
    position_segments: tuple
    orientation_segments: tuple
    via_phis: np.ndarray
    via_positions: np.ndarray
    via_rotvecs: np.ndarray

    @property
    def phi_end(self):
        return float(self.via_phis[-1])

    @property
    def n_segments(self):
        return len(self.position_segments)


def build_path(via_poses):
    """Construct a path through (position, rotation-vector) via poses.

    phi values are the cumulative Euclidean arc lengths of the position
    polyline; the constant angular rate of each orientation segment is
    chosen so consecutive via orientations connect exactly.
    """
    if len(via_poses) < 2:
        raise ValueError("need at least two via poses")
    positions = np.array([np.asarray(p, dtype=float) for p, _ in via_poses])
    rotvecs = np.array([np.asarray(o, dtype=float) for _, o in via_poses])

    deltas = np.diff(positions, axis=0)
    lengths = np.linalg.norm(deltas, axis=1)
    for idx, length in enumerate(lengths):
        if length <= _MIN_SEGMENT:
            raise ValueError(
                f"consecutive via positions {idx} and {idx + 1} coincide"
            )
    phis = np.concatenate([[0.0], np.cumsum(lengths)])

    pos_segments = []
    orn_segments = []
    rmats = [rot.exp(v) for v in rotvecs]
    for l in range(len(via_poses) - 1):
        span = phis[l + 1] - phis[l]
        pos_segments.append(
            PositionSegment(
                slope=deltas[l] / lengths[l],
                base=positions[l].copy(),
                phi_start=float(phis[l]),
                phi_end=float(phis[l + 1]),
            )
        )
        step = rot.log(rmats[l + 1] @ rmats[l].T)
        if np.pi - np.linalg.norm(step) < _PI_STEP_TOL:
            raise ValueError(
                f"orientation step between vias {l} and {l + 1} is a half "
                "turn; insert an intermediate via pose"
            )
        orn_segments.append(
            OrientationSegment(
                omega=step / span,
                r_start=rmats[l],
                phi_start=float(phis[l]),
                phi_end=float(phis[l + 1]),
            )
        )
    return PiecewisePath(
        position_segments=tuple(pos_segments),
        orientation_segments=tuple(orn_segments),
        via_phis=phis,
        via_positions=positions,
        via_rotvecs=rotvecs,
    )


def segment_index(path, phi):
    """Index of the segment answering queries at phi (incoming at vias)."""
    idx = int(np.searchsorted(path.via_phis, phi, side="left")) - 1
    return min(max(idx, 0), path.n_segments - 1)


def clamp_phi(path, phi):
    """Clamp phi into [0, phi_end]; returns (value, clamped flag)."""
    if phi < 0.0:
        return 0.0, True
    if phi > path.phi_end:
        return path.phi_end, True
    return float(phi), False


def eval_position(path, phi):
    """Position, unit tangent and segment index at phi (clamped).

    Returns (point, tangent, segment_index, clamped).
    """
    phi_c, clamped = clamp_phi(path, phi)
    idx = segment_index(path, phi_c)
    seg = path.position_segments[idx]
    point = seg.base + seg.slope * (phi_c - seg.phi_start)
    return point, seg.slope.copy(), idx, clamped


def eval_orientation_velocity(path, phi):
    """Constant angular rate (rad per meter) of the active segment."""
    phi_c, _ = clamp_phi(path, phi)
    idx = segment_index(path, phi_c)
    return path.orientation_segments[idx].omega.copy(), idx


def reference_rotation(path, phi):
    """Reference rotation matrix at phi (clamped)."""
    phi_c, _ = clamp_phi(path, phi)
    idx = segment_index(path, phi_c)
    seg = path.orientation_segments[idx]
    return rot.exp(seg.omega * (phi_c - seg.phi_start)) @ seg.r_start


def integrated_reference_rotation(path, phi):
    """Integral of the angular rate from 0 to phi, piecewise linear."""
    phi_c, _ = clamp_phi(path, phi)
    idx = segment_index(path, phi_c)
    total = np.zeros(3)
    for l in range(idx):
        seg = path.orientation_segments[l]
        total += seg.omega * (seg.phi_end - seg.phi_start)
    seg = path.orientation_segments[idx]
    total += seg.omega * (phi_c - seg.phi_start)
    return total


def splice_path(path, anchor_position, anchor_rotvec, new_via_poses):
    """Replace the tail of a path from an on-path anchor pose onward.

    The anchor must lie on the existing path at some phi_tilde; the
    returned path keeps the original geometry on [0, phi_tilde] and
    continues through ``new_via_poses``.  Returns (new_path, phi_tilde).
    When the anchor coincides with an existing via, no extra via is
    introduced, so splicing a path onto its own tail reproduces it
    exactly.
    """
    anchor_position = np.asarray(anchor_position, dtype=float)
    anchor_rot = rot.exp(np.asarray(anchor_rotvec, dtype=float))

    phi_tilde = None
    for l, seg in enumerate(path.position_segments):
        along = float(seg.slope @ (anchor_position - seg.base))
        candidate = seg.phi_start + along
        if candidate < seg.phi_start - 1e-9 or candidate > seg.phi_end + 1e-9:
            continue
        candidate = min(max(candidate, seg.phi_start), seg.phi_end)
        point = seg.base + seg.slope * (candidate - seg.phi_start)
        if np.linalg.norm(point - anchor_position) > 1e-7:
            continue
        r_ref = reference_rotation(path, candidate)
        if np.linalg.norm(rot.log(anchor_rot @ r_ref.T)) > 1e-6:
            continue
        phi_tilde = candidate
        break
    if phi_tilde is None:
        raise ValueError("replanned path must branch from a pose on the path")

    keep = [
        (path.via_positions[i].copy(), path.via_rotvecs[i].copy())
        for i in range(len(path.via_phis))
        if path.via_phis[i] < phi_tilde - 1e-12
    ]
    on_via = any(abs(path.via_phis[i] - phi_tilde) <= 1e-12
                 for i in range(len(path.via_phis)))
    if on_via:
        i = int(np.argmin(np.abs(path.via_phis - phi_tilde)))
        keep.append((path.via_positions[i].copy(), path.via_rotvecs[i].copy()))
    else:
        keep.append((anchor_position.copy(), rot.log(anchor_rot)))
    keep.extend(
        (np.asarray(p, dtype=float), np.asarray(o, dtype=float))
        for p, o in new_via_poses
    )
    return build_path(keep), float(phi_tilde)

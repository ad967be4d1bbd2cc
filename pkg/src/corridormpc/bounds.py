"""Quartic error-bound envelopes and asymmetric corridor constraints.

Between two via-points the admissible orthogonal deviation is a quartic
polynomial in phi fixed by five conditions: its values and slopes at
both ends and its value at the midpoint.  Per-direction scale factors
e_l < e_u turn the symmetric envelope into an offset corridor
[e_l Y, e_u Y] through the constraint function psi, which is negative
exactly inside the corridor.  Envelopes are immutable after fitting.

A corridor bundles, for every path segment, the orthogonal-plane bases
for position and orientation plus the four bounded channels (two
position directions, two orientation directions).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import errors as err

_GRID = 512

DEFAULT_EPS_POS = 1e-3                      # meters
DEFAULT_EPS_ORN = np.deg2rad(0.5)           # radians
DEFAULT_MAX_POS = 0.05                      # meters
DEFAULT_MAX_ORN = np.deg2rad(5.0)           # radians
DEFAULT_SLOPE = 0.1


@dataclass(frozen=True)
class BoundSegment:
    coefficients: np.ndarray   # a0..a4 in powers of (phi - phi_start)
    phi_start: float
    phi_end: float
    s0: float
    sf: float
    upsilon_max: float
    eps_start: float
    eps_end: float


def fit_bound(phi_start, phi_end, s0, sf, upsilon_max, eps_start, eps_end):
    """Fit the unique quartic through the five envelope conditions.

    Slopes are signed: a bump rising from a via and pinching into the
    next one uses a positive s0 and a negative sf.  Raises when the
    fitted envelope is not strictly positive on the open segment.
    """
    h = float(phi_end) - float(phi_start)
    if h <= 0.0:
        raise ValueError("phi_end must exceed phi_start")
    if upsilon_max <= max(eps_start, eps_end):
        raise ValueError("upsilon_max must exceed the endpoint relaxations")
    if eps_start < 0.0 or eps_end < 0.0:
        raise ValueError("relaxations must be nonnegative")

    powers = np.arange(5)
    mid = h / 2.0
    system = np.array([
        [1.0, 0.0, 0.0, 0.0, 0.0],
        h ** powers,
        [0.0, 1.0, 0.0, 0.0, 0.0],
        np.concatenate([[0.0], powers[1:] * h ** (powers[1:] - 1)]),
        mid ** powers,
    ])
    rhs = np.array([eps_start, eps_end, s0, sf, upsilon_max], dtype=float)
    coeffs = np.linalg.solve(system, rhs)

    seg = BoundSegment(
        coefficients=coeffs,
        phi_start=float(phi_start),
        phi_end=float(phi_end),
        s0=float(s0),
        sf=float(sf),
        upsilon_max=float(upsilon_max),
        eps_start=float(eps_start),
        eps_end=float(eps_end),
    )
    interior = np.linspace(0.0, h, _GRID)[1:-1]
    if np.any(np.polyval(coeffs[::-1], interior) <= 0.0):
        raise ValueError("envelope is not positive on the open segment")
    return seg


def eval_bound(segment, phi):
    """Envelope value and slope at phi inside the segment."""
    if phi < segment.phi_start - 1e-12 or phi > segment.phi_end + 1e-12:
        raise ValueError(
            f"phi={phi} outside [{segment.phi_start}, {segment.phi_end}]"
        )
    return eval_bound_extrapolated(segment, phi)


def eval_bound_extrapolated(segment, phi):
    """Polynomial value and slope at phi without the domain check.

    Optimizer iterates may step slightly past a segment while a plan is
    being refined; the quartic extends smoothly.
    """
    x = float(phi) - segment.phi_start
    a = segment.coefficients
    value = a[0] + x * (a[1] + x * (a[2] + x * (a[3] + x * a[4])))
    slope = a[1] + x * (2.0 * a[2] + x * (3.0 * a[3] + x * 4.0 * a[4]))
    return value, slope


def psi_asymmetric(e_proj, upsilon, e_upper, e_lower):
    """Corridor constraint value; nonpositive inside [e_l Y, e_u Y].

    With e_upper = 1 and e_lower = -1 this reduces to the symmetric
    form e_proj^2 - Y^2.
    """
    if e_upper <= e_lower:
        raise ValueError("upper scale must exceed lower scale")
    offset = 0.5 * (e_lower + e_upper) * upsilon
    half_width = 0.5 * (e_upper - e_lower) * upsilon
    return (e_proj - offset) ** 2 - half_width ** 2


@dataclass(frozen=True)
class ChannelSpec:
    """Envelope parameters of one bounded error channel on one segment.

    ``slope`` is the unsigned pinch rate at the vias: the fitted
    envelope rises at +slope out of the segment start and descends at
    -slope into the segment end.
    """
    upsilon_max: float
    slope: float = DEFAULT_SLOPE
    eps_start: float = None
    eps_end: float = None
    e_upper: float = 1.0
    e_lower: float = -1.0


@dataclass(frozen=True)
class SegmentSpec:
    """Bound channels and desired basis directions for one segment."""
    pos_1: ChannelSpec
    pos_2: ChannelSpec
    orn_1: ChannelSpec
    orn_2: ChannelSpec
    basis_pos_desired: np.ndarray = None
    basis_orn_desired: np.ndarray = None


@dataclass(frozen=True)
class Channel:
    envelope: BoundSegment
    e_upper: float
    e_lower: float

    def psi(self, e_proj, phi):
        y, _ = eval_bound_extrapolated(self.envelope, phi)
        return psi_asymmetric(e_proj, y, self.e_upper, self.e_lower)


@dataclass(frozen=True)
class SegmentCorridor:
    basis_pos: err.OrthoBasis
    basis_orn: err.OrthoBasis
    spin_axis: np.ndarray            # unit tangential axis of the orientation
    pos_1: Channel
    pos_2: Channel
    orn_1: Channel
    orn_2: Channel

    def channels(self):
        return (self.pos_1, self.pos_2, self.orn_1, self.orn_2)


@dataclass(frozen=True)
class Corridor:
    segments: tuple

    def __getitem__(self, idx):
        return self.segments[idx]

    def __len__(self):
        return len(self.segments)


def auto_basis_direction(direction):
    """World axis least aligned with ``direction`` (deterministic)."""
    direction = np.asarray(direction, dtype=float)
    unit = direction / np.linalg.norm(direction)
    return np.eye(3)[int(np.argmin(np.abs(unit)))]


def _fit_channel(spec, phi_start, phi_end, default_eps):
    eps_start = default_eps if spec.eps_start is None else spec.eps_start
    eps_end = default_eps if spec.eps_end is None else spec.eps_end
    envelope = fit_bound(
        phi_start, phi_end, spec.slope, -spec.slope,
        spec.upsilon_max, eps_start, eps_end,
    )
    if spec.e_upper <= spec.e_lower:
        raise ValueError("channel upper scale must exceed lower scale")
    return Channel(envelope=envelope, e_upper=spec.e_upper, e_lower=spec.e_lower)


def build_segment_corridor(path, index, spec):
    """Bases and fitted channels for one path segment."""
    pos_seg = path.position_segments[index]
    orn_seg = path.orientation_segments[index]

    fallback = np.array([0.0, 0.0, 1.0])
    for back in range(index, -1, -1):
        omega = path.orientation_segments[back].omega
        if np.linalg.norm(omega) >= 1e-12:
            fallback = omega / np.linalg.norm(omega)
            break
    spin_axis = err.orientation_axis(orn_seg.omega, fallback)

    pos_desired = spec.basis_pos_desired
    if pos_desired is None:
        pos_desired = auto_basis_direction(pos_seg.slope)
    orn_desired = spec.basis_orn_desired
    if orn_desired is None:
        orn_desired = auto_basis_direction(spin_axis)
    basis_pos = err.gram_schmidt_basis(pos_seg.slope, pos_desired)
    basis_orn = err.gram_schmidt_basis(spin_axis, orn_desired)

    lo, hi = pos_seg.phi_start, pos_seg.phi_end
    return SegmentCorridor(
        basis_pos=basis_pos,
        basis_orn=basis_orn,
        spin_axis=spin_axis,
        pos_1=_fit_channel(spec.pos_1, lo, hi, DEFAULT_EPS_POS),
        pos_2=_fit_channel(spec.pos_2, lo, hi, DEFAULT_EPS_POS),
        orn_1=_fit_channel(spec.orn_1, lo, hi, DEFAULT_EPS_ORN),
        orn_2=_fit_channel(spec.orn_2, lo, hi, DEFAULT_EPS_ORN),
    )


def build_corridor(path, segment_specs):
    """Fit bases and envelopes for every segment of a path."""
    if len(segment_specs) != path.n_segments:
        raise ValueError(
            f"need {path.n_segments} segment specs, got {len(segment_specs)}"
        )
    return Corridor(segments=tuple(
        build_segment_corridor(path, l, spec)
        for l, spec in enumerate(segment_specs)
    ))


def truncate_segment_corridor(segment, phi_end):
    """Cut a segment corridor short at phi_end, keeping its envelopes.

    Used when a replanned path branches off mid-segment: behavior up to
    the branch point must not change, so the original quartics keep
    their coefficients on the shortened domain (their endpoint
    conditions no longer describe the new phi_end).
    """
    def cut(channel):
        env = replace(channel.envelope, phi_end=float(phi_end))
        return replace(channel, envelope=env)

    return replace(
        segment,
        pos_1=cut(segment.pos_1), pos_2=cut(segment.pos_2),
        orn_1=cut(segment.orn_1), orn_2=cut(segment.orn_2),
    )

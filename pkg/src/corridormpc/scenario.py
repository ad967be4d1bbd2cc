"""Scenario files, closed-loop execution and log emission.

A scenario is a JSON document (conventionally ``*.scenario``) with
explicit units: positions in meters, orientations as rotation vectors
in radians, times in seconds.  It names the kinematic chain, the start
configuration, the via poses, per-segment bound channels and optional
replanning events.  Running a scenario is deterministic: identical
inputs produce byte-identical CSV output (per-cycle wall times are
reported in the summary only, never in the CSV).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from . import bounds as bnd
from . import errors as err
from . import kinematics as kin
from . import paths as pth
from . import planner as pln
from . import rotations as rot

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "scenarios")

POSE_POSITION_TOL = 1e-3            # meters
POSE_ORIENTATION_TOL = np.deg2rad(1.0)


class ScenarioError(ValueError):
    """Scenario file violates the documented schema."""


@dataclass
class Scenario:
    name: str
    chain: kin.KinematicChain
    initial_q: np.ndarray
    via_poses: list
    segment_specs: list
    config: pln.MpcConfig
    events: list
    slope: float

    def build(self):
        """Path and corridor for the nominal via poses."""
        path = pth.build_path(self.via_poses)
        corridor = bnd.build_corridor(path, self.segment_specs)
        return path, corridor


def bundled_scenario_path(name):
    """Absolute path of a scenario shipped with the package."""
    filename = name if name.endswith(".scenario") else f"{name}.scenario"
    return os.path.join(SCENARIO_DIR, filename)


def _as_vec(raw, length, what):
    arr = np.asarray(raw, dtype=float)
    if arr.shape != (length,):
        raise ScenarioError(f"{what} must be a {length}-vector, got {arr.shape}")
    return arr


def _parse_vias(raw_vias):
    vias = []
    for idx, entry in enumerate(raw_vias):
        if "position" not in entry:
            raise ScenarioError(f"via {idx} is missing its position")
        if "orientation" not in entry:
            raise ScenarioError(f"via {idx} is missing its orientation")
        vias.append((
            _as_vec(entry["position"], 3, f"via {idx} position"),
            _as_vec(entry["orientation"], 3, f"via {idx} orientation"),
        ))
    return vias


def _parse_channel(raw, defaults, kind):
    upsilon_max = raw.get(
        "upsilon_max",
        defaults["upsilon_max_pos"] if kind == "pos" else defaults["upsilon_max_orn"],
    )
    eps_default = defaults["eps_pos"] if kind == "pos" else defaults["eps_orn"]
    spec = bnd.ChannelSpec(
        upsilon_max=float(upsilon_max),
        slope=float(raw.get("slope", defaults["slope"])),
        eps_start=float(raw.get("eps_start", eps_default)),
        eps_end=float(raw.get("eps_end", eps_default)),
        e_upper=float(raw.get("e_upper", 1.0)),
        e_lower=float(raw.get("e_lower", -1.0)),
    )
    if spec.e_upper <= spec.e_lower:
        raise ScenarioError("channel e_upper must exceed e_lower")
    return spec


def _parse_segments(raw_segments, n_segments, defaults):
    if raw_segments is None:
        raw_segments = [{} for _ in range(n_segments)]
    if len(raw_segments) != n_segments:
        raise ScenarioError(
            f"expected {n_segments} segment entries, got {len(raw_segments)}"
        )
    specs = []
    for raw in raw_segments:
        kwargs = {}
        for key, kind in (
            ("pos_1", "pos"), ("pos_2", "pos"), ("orn_1", "orn"), ("orn_2", "orn"),
        ):
            kwargs[key] = _parse_channel(raw.get(key, {}), defaults, kind)
        for key, field in (
            ("basis_pos", "basis_pos_desired"), ("basis_orn", "basis_orn_desired"),
        ):
            if key in raw:
                kwargs[field] = _as_vec(raw[key], 3, key)
        specs.append(bnd.SegmentSpec(**kwargs))
    return specs


def _parse_events(raw_events, defaults):
    events = []
    last_time, last_phi = -np.inf, -np.inf
    for idx, raw in enumerate(raw_events or []):
        trigger_time = raw.get("trigger_time")
        trigger_phi = raw.get("trigger_phi")
        if trigger_time is None and trigger_phi is None:
            raise ScenarioError(f"event {idx} needs trigger_time or trigger_phi")
        if trigger_time is not None:
            if trigger_time <= last_time:
                raise ScenarioError("event triggers must be strictly increasing")
            last_time = trigger_time
        if trigger_phi is not None:
            if trigger_phi <= last_phi:
                raise ScenarioError("event triggers must be strictly increasing")
            last_phi = trigger_phi
        vias = _parse_vias(raw["vias"])
        # One new segment leads from the branch point to the first new
        # via, then one per following via.
        specs = _parse_segments(raw.get("segments"), len(vias), defaults)
        anchor = raw.get("anchor", "current")
        if anchor != "current":
            anchor = int(anchor)
        events.append(pln.ReplanEvent(
            new_via_poses=tuple(vias),
            new_segment_specs=tuple(specs),
            trigger_time=trigger_time,
            trigger_phi=trigger_phi,
            anchor=anchor,
        ))
    return events


def load_scenario(file_path):
    """Parse and validate a scenario file."""
    with open(file_path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        return _build_scenario(raw, os.path.dirname(os.path.abspath(file_path)))
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc


def _build_scenario(raw, base_dir):
    if "chain" in raw:
        chain = kin.chain_from_dict(raw["chain"])
    elif "chain_file" in raw:
        candidates = [
            os.path.join(base_dir, raw["chain_file"]),
            os.path.join(SCENARIO_DIR, raw["chain_file"]),
        ]
        for candidate in candidates:
            if os.path.exists(candidate):
                with open(candidate, "r", encoding="utf-8") as fh:
                    chain = kin.chain_from_dict(json.load(fh))
                break
        else:
            raise ScenarioError(f"chain file {raw['chain_file']} not found")
    else:
        raise ScenarioError("scenario needs 'chain' or 'chain_file'")

    initial_q = _as_vec(raw["initial_q"], chain.dof, "initial_q")
    vias = _parse_vias(raw["vias"])
    if len(vias) < 2:
        raise ScenarioError("need at least two via poses")

    defaults = {
        "upsilon_max_pos": bnd.DEFAULT_MAX_POS,
        "upsilon_max_orn": bnd.DEFAULT_MAX_ORN,
        "eps_pos": bnd.DEFAULT_EPS_POS,
        "eps_orn": bnd.DEFAULT_EPS_ORN,
        "slope": bnd.DEFAULT_SLOPE,
    }
    defaults.update(raw.get("defaults", {}))

    segment_specs = _parse_segments(raw.get("segments"), len(vias) - 1, defaults)

    limits = raw.get("limits", {})
    mpc_raw = dict(raw.get("mpc", {}))
    config = pln.MpcConfig(
        **mpc_raw,
        q_min=_as_vec(limits["q_min"], chain.dof, "q_min") if "q_min" in limits else None,
        q_max=_as_vec(limits["q_max"], chain.dof, "q_max") if "q_max" in limits else None,
        qd_max=_as_vec(limits["qd_max"], chain.dof, "qd_max") if "qd_max" in limits else None,
        qdd_max=_as_vec(limits["qdd_max"], chain.dof, "qdd_max") if "qdd_max" in limits else None,
        jerk_max=_as_vec(limits["jerk_max"], chain.dof, "jerk_max") if "jerk_max" in limits else None,
    )

    scenario = Scenario(
        name=raw.get("name", "scenario"),
        chain=chain,
        initial_q=initial_q,
        via_poses=vias,
        segment_specs=segment_specs,
        config=config,
        events=_parse_events(raw.get("events"), defaults),
        slope=float(defaults["slope"]),
    )
    _validate(scenario)
    return scenario


def _validate(scenario):
    path, corridor = scenario.build()   # raises on bad bases or envelopes
    p0, r0 = kin.forward_kinematics(scenario.chain, scenario.initial_q)
    via_p, via_o = scenario.via_poses[0]
    if np.linalg.norm(p0 - via_p) > POSE_POSITION_TOL:
        raise ScenarioError(
            "initial configuration sits "
            f"{np.linalg.norm(p0 - via_p):.4f} m from the first via position"
        )
    gap = np.linalg.norm(rot.log(r0 @ rot.exp(via_o).T))
    if gap > POSE_ORIENTATION_TOL:
        raise ScenarioError(
            f"initial orientation is {np.rad2deg(gap):.2f} deg from the first via"
        )
    del path, corridor


def apply_overrides(scenario, horizon=None, path_weight=None, slope=None):
    """Clone a scenario with the studied parameters swapped out."""
    config = scenario.config
    specs = scenario.segment_specs
    if horizon is not None:
        config = replace(config, horizon=int(horizon))
    if path_weight is not None:
        config = replace(config, path_weight=float(path_weight))
    if slope is not None:
        slope = float(slope)
        specs = [
            replace(
                spec,
                pos_1=replace(spec.pos_1, slope=slope),
                pos_2=replace(spec.pos_2, slope=slope),
                orn_1=replace(spec.orn_1, slope=slope),
                orn_2=replace(spec.orn_2, slope=slope),
            )
            for spec in specs
        ]
    out = replace(scenario, config=config, segment_specs=specs)
    if slope is not None:
        out = replace(out, slope=slope)
    return out


def run(scenario, max_steps=2000, cold_start=False):
    """Closed-loop execution of a scenario; returns the trajectory log."""
    path, corridor = scenario.build()
    state = pln.PlannerState.at_rest(scenario.initial_q)
    return pln.run_loop(
        scenario.chain, state, path, corridor, scenario.config,
        events=scenario.events, max_steps=max_steps, cold_start=cold_start,
    )


# -- emission ----------------------------------------------------------

def csv_columns(dof):
    cols = ["t", "revision", "segment", "status", "iterations"]
    cols += [f"q{i}" for i in range(dof)]
    cols += [f"qd{i}" for i in range(dof)]
    cols += [f"qdd{i}" for i in range(dof)]
    cols += [f"u{i}" for i in range(dof)]
    cols += ["v", "phi", "phid", "phidd", "px", "py", "pz"]
    cols += ["eo_x", "eo_y", "eo_z", "ep_par_norm", "eo_par_norm"]
    cols += ["ep_proj1", "ep_proj2", "eo_proj1", "eo_proj2"]
    cols += ["psi_p1", "psi_p2", "psi_o1", "psi_o2"]
    cols += ["ups_p1", "ups_p2", "ups_o1", "ups_o2"]
    cols += ["off_p1", "off_p2", "off_o1", "off_o2"]
    return cols


def _format(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def emit_csv(log, dof, file_path):
    """Write the per-step log; floats keep full round-trip precision.

    Solve wall times are deliberately excluded so reruns of the same
    scenario emit identical bytes; timing lives in the summary.
    """
    lines = [",".join(csv_columns(dof))]
    for rec in log.records:
        n = dof
        row = [rec.t, rec.revision, rec.segment, rec.status, rec.iterations]
        row += list(rec.state.x[:n]) + list(rec.state.x[n:2 * n])
        row += list(rec.state.x[2 * n:])
        row += list(rec.u)
        row += [rec.v, rec.state.xi[0], rec.state.xi[1], rec.state.xi[2]]
        row += list(rec.p) + list(rec.e_o)
        row += [rec.e_p_par_norm, rec.e_o_par_norm]
        row += list(rec.proj)
        row += list(rec.psi_model)
        row += list(rec.upsilon)
        row += list(rec.offset)
        lines.append(",".join(_format(v) for v in row))
    payload = "\n".join(lines) + "\n"
    with open(file_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(payload)
    return payload


def parse_csv(file_path):
    """Read an emitted CSV back into a list of per-step dicts."""
    with open(file_path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            parts = line.strip().split(",")
            row = {}
            for key, value in zip(header, parts):
                if key == "status":
                    row[key] = value
                elif key in ("revision", "segment", "iterations"):
                    row[key] = int(value)
                else:
                    row[key] = float(value)
            rows.append(row)
    return rows


def summarize(log, dof, name=""):
    """Human-readable run summary including solve-time statistics."""
    records = log.records
    solve_times = [r.solve_time for r in records if r.status != "terminal"]
    iters = [r.iterations for r in records if r.status != "terminal"]
    statuses = {}
    for r in records:
        statuses[r.status] = statuses.get(r.status, 0) + 1
    utilization = np.zeros(4)
    for r in records:
        for k in range(4):
            if r.upsilon[k] > 0.0:
                utilization[k] = max(
                    utilization[k], abs(r.proj[k]) / r.upsilon[k]
                )
    last = records[-1]
    lines = [
        f"scenario: {name}",
        f"duration_s: {last.t!r}",
        f"steps: {len(records)}",
        f"finished: {log.finished}",
        f"exit_reason: {log.exit_reason}",
        f"terminal_position_error_m: {np.linalg.norm(last.e_p)!r}",
        f"terminal_orientation_error_rad: {np.linalg.norm(last.e_o)!r}",
        f"max_abs_proj_over_upsilon: "
        + " ".join(f"{u:.4f}" for u in utilization),
        "solve_time_ms_min_max_mean: "
        + (
            f"{1e3 * min(solve_times):.1f} {1e3 * max(solve_times):.1f} "
            f"{1e3 * float(np.mean(solve_times)):.1f}"
            if solve_times else "n/a"
        ),
        "iterations_min_max_mean: "
        + (
            f"{min(iters)} {max(iters)} {float(np.mean(iters)):.1f}"
            if iters else "n/a"
        ),
        "statuses: " + " ".join(f"{k}={v}" for k, v in sorted(statuses.items())),
        f"revisions: {last.revision}",
    ]
    return "\n".join(lines) + "\n"


def emit(log, dof, out_dir, name=""):
    """Write trajectory.csv and summary.txt into the output directory."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "trajectory.csv")
    emit_csv(log, dof, csv_path)
    summary_path = os.path.join(out_dir, "summary.txt")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(summarize(log, dof, name))
    return csv_path, summary_path

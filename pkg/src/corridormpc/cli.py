"""Command-line interface: plan, sweep, bench and validate scenarios."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import scenario as scn


def _scenario_path(arg):
    if os.path.exists(arg):
        return arg
    bundled = scn.bundled_scenario_path(arg)
    if os.path.exists(bundled):
        return bundled
    raise SystemExit(f"scenario '{arg}' not found (no file, not bundled)")


def _load(arg, horizon=None, w_xi=None, slope=None):
    scenario = scn.load_scenario(_scenario_path(arg))
    return scn.apply_overrides(
        scenario, horizon=horizon, path_weight=w_xi, slope=slope
    )


def _verbose():
    return os.environ.get("CORRIDORMPC_VERBOSE", "") not in ("", "0")


def _run_one(scenario, out_dir, label=None):
    log = scn.run(scenario)
    if _verbose():
        for rec in log.records:
            print(
                f"t={rec.t:6.2f} phi={rec.state.xi[0]:.4f} "
                f"status={rec.status} iters={rec.iterations}"
            )
    name = label or scenario.name
    csv_path, summary_path = scn.emit(log, scenario.chain.dof, out_dir, name)
    print(f"{name}: duration {log.duration:.2f} s, "
          f"{'finished' if log.finished else 'INCOMPLETE'} -> {csv_path}")
    with open(summary_path, "r", encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    failed = (not log.finished) or any(
        rec.status == "braking" for rec in log.records
    )
    return 1 if failed else 0


def cmd_plan(args):
    scenario = _load(args.scenario, args.horizon, args.w_xi, args.slope)
    return _run_one(scenario, args.out)


def cmd_sweep(args):
    key = {"horizon": "horizon", "w-xi": "path_weight", "slope": "slope"}[args.param]
    rc = 0
    for value in args.values:
        scenario = _load(args.scenario)
        scenario = scn.apply_overrides(scenario, **{key: value})
        label = f"{scenario.name}_{args.param.replace('-', '_')}_{value:g}"
        out_dir = os.path.join(args.out, label)
        rc = max(rc, _run_one(scenario, out_dir, label))
    return rc


def cmd_bench(args):
    scenario = _load(args.scenario)
    log = scn.run(scenario)
    times = np.array([
        rec.solve_time for rec in log.records if rec.status != "terminal"
    ])
    print(f"{scenario.name}: {len(times)} cycles")
    print(f"solve_time_ms min={1e3 * times.min():.1f} "
          f"max={1e3 * times.max():.1f} mean={1e3 * times.mean():.1f} "
          f"median={1e3 * np.median(times):.1f}")
    budget = scenario.config.ts
    over = int(np.sum(times > budget))
    print(f"cycles_over_{1e3 * budget:.0f}ms: {over}")
    return 0 if log.finished else 1


def cmd_validate(args):
    try:
        scenario = scn.load_scenario(_scenario_path(args.scenario))
    except scn.ScenarioError as exc:
        print(f"invalid: {exc}")
        return 1
    path, _ = scenario.build()
    print(f"valid: {scenario.name}")
    print(f"dof: {scenario.chain.dof}")
    print(f"segments: {path.n_segments}, arc length: {path.phi_end:.4f} m")
    print(f"events: {len(scenario.events)}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="corridormpc",
        description="Corridor-bounded path-following MPC scenarios",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="run one scenario closed loop")
    p_plan.add_argument("scenario")
    p_plan.add_argument("--horizon", type=int, default=None)
    p_plan.add_argument("--w-xi", type=float, default=None)
    p_plan.add_argument("--slope", type=float, default=None)
    p_plan.add_argument("--out", default="out")
    p_plan.set_defaults(func=cmd_plan)

    p_sweep = sub.add_parser("sweep", help="run a one-parameter study")
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("--param", choices=["horizon", "w-xi", "slope"],
                         required=True)
    p_sweep.add_argument("--values", type=float, nargs="+", required=True)
    p_sweep.add_argument("--out", default="out")
    p_sweep.set_defaults(func=cmd_sweep)

    p_bench = sub.add_parser("bench", help="per-cycle timing statistics")
    p_bench.add_argument("scenario")
    p_bench.set_defaults(func=cmd_bench)

    p_val = sub.add_parser("validate", help="schema and feasibility precheck")
    p_val.add_argument("scenario")
    p_val.set_defaults(func=cmd_validate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

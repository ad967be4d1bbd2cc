"""Corridor-bounded Cartesian path-following MPC for serial manipulators."""

from . import bounds, dynamics, errors, kinematics, paths, planner, qp, rotations, scenario, sqp

__all__ = [
    "bounds",
    "dynamics",
    "errors",
    "kinematics",
    "paths",
    "planner",
    "qp",
    "rotations",
    "scenario",
    "sqp",
]

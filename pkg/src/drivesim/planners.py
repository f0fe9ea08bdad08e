"""Ego planners: the privileged expert and the planner-facing input contract.

The expert tracks a reference route with pure pursuit, regulates speed with
IDM against the nearest vehicle ahead in its corridor, slows for upcoming
curvature, and brakes to a stop just past the route goal.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import defaults
from .control import idm_accel, leader_in_corridor, pure_pursuit
from .geom import wrap_angle
from .kinematics import ControlAction, VehicleState
from .maps import MapTopology, RoadOption, Route

COMMAND_WINDOW = 20.0  # m, lookahead for command derivation
CURVE_SCAN = 15.0      # m, curvature lookahead for speed capping
END_STOP_MARGIN = 2.0  # m, virtual stop point past the goal


class OffRouteError(RuntimeError):
    """Ego drifted beyond the allowed lateral offset from the reference."""


class RouteCommand(Enum):
    STRAIGHT = "Straight"
    LEFT = "Left"
    RIGHT = "Right"


@dataclass(slots=True)
class Privileged:
    agents: list
    map: MapTopology


@dataclass(slots=True)
class PlannerInput:
    ego: VehicleState
    command: RouteCommand
    privileged: Privileged | None = None
    observations: list | None = None

    def __post_init__(self):
        if (self.privileged is None) == (self.observations is None):
            raise ValueError("exactly one of privileged/observations must be present")


def derive_command(reference: Route, progress: float) -> RouteCommand:
    """Map the road option within the next window onto Straight/Left/Right."""
    for option in reference.options_in_window(progress, progress + COMMAND_WINDOW):
        if option in (RoadOption.TURN_LEFT, RoadOption.LANE_CHANGE_LEFT):
            return RouteCommand.LEFT
        if option in (RoadOption.TURN_RIGHT, RoadOption.LANE_CHANGE_RIGHT):
            return RouteCommand.RIGHT
    return RouteCommand.STRAIGHT


class ExpertPlanner:
    """Privileged planner used to generate driving logs."""

    def __init__(self, reference: Route, target_speed: float | None = None):
        self.reference = reference
        self.target_speed = target_speed
        head = self.reference._headings
        self._curvature = np.abs(
            np.array([wrap_angle(b - a) for a, b in zip(head, head[1:])])
        ) / defaults.WAYPOINT_SPACING if len(head) > 1 else np.zeros(1)

    def _curve_speed_cap(self, s: float) -> float:
        if len(self._curvature) == 0:
            return math.inf
        i0 = int(max(s, 0.0) / defaults.WAYPOINT_SPACING)
        i1 = int((s + CURVE_SCAN) / defaults.WAYPOINT_SPACING) + 1
        window = self._curvature[min(i0, len(self._curvature) - 1): max(i1, i0 + 1)]
        kappa = float(window.max()) if len(window) else 0.0
        if kappa < 1e-6:
            return math.inf
        return max(math.sqrt(defaults.LATERAL_ACCEL_MAX / kappa), 2.0)

    def plan(self, inp: PlannerInput) -> ControlAction:
        if inp.privileged is None:
            raise ValueError("expert planner needs privileged input")
        ego = inp.ego
        s, lateral = self.reference.project(ego.x, ego.y)
        if abs(lateral) > defaults.OFF_ROUTE_LIMIT:
            raise OffRouteError(
                f"lateral offset {lateral:.2f} m from reference exceeds "
                f"{defaults.OFF_ROUTE_LIMIT} m at s={s:.1f}"
            )
        look = max(defaults.EXPERT_LOOKAHEAD_MIN, defaults.EXPERT_LOOKAHEAD_TIME * ego.v)
        tx, ty, _ = self.reference.point_at(s + look)
        delta = pure_pursuit(ego.x, ego.y, ego.phi, tx, ty, ego.l_f + ego.l_r)

        v0 = self.reference.speed_limit_at(s)
        if self.target_speed is not None:
            v0 = min(v0, self.target_speed)
        v0 = min(v0, self._curve_speed_cap(s))

        active = [a for a in inp.privileged.agents if a.behavior.active]
        if active:
            xy = np.array([[a.state.x, a.state.y] for a in active])
            vs = np.array([a.state.v for a in active])
            half = np.array([a.state.length / 2.0 for a in active])
            gap, lead_v = leader_in_corridor(ego.x, ego.y, ego.phi, xy, vs, half, ego.length / 2.0)
        else:
            gap, lead_v = None, 0.0
        a = idm_accel(ego.v, v0, gap, lead_v)
        end_gap = (self.reference.length + END_STOP_MARGIN) - s - ego.length / 2.0
        a = min(a, idm_accel(ego.v, v0, max(end_gap, 0.05), 0.0))
        return ControlAction(a=a, delta=delta).clamped()


class ConstantVelocityPlanner:
    """Built-in test planner: zero acceleration, zero steering."""

    def plan(self, inp: PlannerInput) -> ControlAction:
        return ControlAction(0.0, 0.0)

"""Closed-loop evaluation metrics and collision primitives.

Rates follow the episode-set formulas: collision rates average per-episode
flag fractions; route completion counts episodes with zero vehicle
collisions and no timeout (layout collisions deliberately do not disqualify
an episode from route completion).
"""

import math
from dataclasses import dataclass, field

from . import defaults
from .geom import obb_corners, point_in_polygon, segments_intersect_any, wrap_angle
from .kinematics import VehicleState


class EmptyInputError(ValueError):
    """Metrics over an empty episode/scene collection are undefined."""


@dataclass(slots=True)
class EpisodeResult:
    vehicle_collision_flags: list[bool]
    layout_collision_flags: list[bool]
    timed_out: bool = False
    completed: bool = False

    def __post_init__(self):
        if len(self.vehicle_collision_flags) != len(self.layout_collision_flags):
            raise ValueError("collision flag lists must share the tick count")

    @property
    def ticks(self) -> int:
        return len(self.vehicle_collision_flags)


@dataclass(slots=True)
class MetricsReport:
    rc: float = 0.0
    vcr: float = 0.0
    lcr: float = 0.0
    interaction_rate: float = 0.0
    speed_alteration_histogram: list[int] = field(default_factory=lambda: [0] * 5)

    def to_dict(self) -> dict:
        return {
            "rc": self.rc,
            "vcr": self.vcr,
            "lcr": self.lcr,
            "interaction_rate": self.interaction_rate,
            "speed_alteration_histogram": list(self.speed_alteration_histogram),
        }


@dataclass(frozen=True, slots=True)
class InteractionRecord:
    detect: bool
    intersect: bool

    @property
    def interaction(self) -> bool:
        return self.detect and self.intersect


@dataclass(frozen=True, slots=True)
class PlannedTrajectory:
    """Six per-step displacement vectors of a short look-ahead horizon."""

    offsets: tuple

    def __post_init__(self):
        if len(self.offsets) != 6:
            raise ValueError("exactly 6 offsets required")


def obb_collision(a: VehicleState, b: VehicleState) -> bool:
    """Separating-axis overlap test between two vehicle footprints."""
    # cheap circle reject first
    ra = 0.5 * math.hypot(a.length, a.width)
    rb = 0.5 * math.hypot(b.length, b.width)
    if math.hypot(b.x - a.x, b.y - a.y) > ra + rb:
        return False
    ca = obb_corners(a.x, a.y, a.phi, a.length, a.width)
    cb = obb_corners(b.x, b.y, b.phi, b.length, b.width)
    for phi in (a.phi, a.phi + math.pi / 2, b.phi, b.phi + math.pi / 2):
        ax, ay = math.cos(phi), math.sin(phi)
        pa = ca[:, 0] * ax + ca[:, 1] * ay
        pb = cb[:, 0] * ax + cb[:, 1] * ay
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def layout_collision(ego: VehicleState, m) -> bool:
    """True when any footprint corner leaves the drivable area entirely."""
    corners = obb_corners(ego.x, ego.y, ego.phi, ego.length, ego.width)
    for cx, cy in corners:
        if not any(point_in_polygon(cx, cy, poly) for poly in m.drivable_area):
            return True
    return False


def compute_rates(episodes) -> MetricsReport:
    """Vehicle/layout collision rates and route completion over episodes."""
    if not episodes:
        raise EmptyInputError("no episodes")
    vcr_sum = lcr_sum = rc_sum = 0.0
    for ep in episodes:
        t = ep.ticks
        if t > 0:
            vcr_sum += sum(ep.vehicle_collision_flags) / t
            lcr_sum += sum(ep.layout_collision_flags) / t
        clean = not any(ep.vehicle_collision_flags)
        rc_sum += 1.0 if (clean and not ep.timed_out) else 0.0
    n = len(episodes)
    return MetricsReport(rc=rc_sum / n, vcr=vcr_sum / n, lcr=lcr_sum / n)


def interaction_indicator(ego: VehicleState, ego_route, agent, v_max: float,
                          ego_progress: float = None) -> InteractionRecord:
    """Range + route-crossing interaction test for one agent.

    Detection: agent center inside the wide surrounding wedge within
    r_s = headway * v_max, or inside the narrow forward wedge within 2 r_s.
    Interaction additionally requires the agent's remaining route to cross
    the ego's remaining route within the lookahead horizon.
    """
    if v_max <= 0:
        raise ValueError("v_max must be positive")
    if ego_progress is None:
        ego_progress, _ = ego_route.project(ego.x, ego.y)
    r_s = defaults.INTERACTION_HEADWAY * v_max
    r_f = 2.0 * r_s
    ax, ay = agent.state.x, agent.state.y
    dist = math.hypot(ax - ego.x, ay - ego.y)
    bearing = abs(wrap_angle(math.atan2(ay - ego.y, ax - ego.x) - ego.phi))
    half_surround = math.radians(defaults.SURROUND_WEDGE_DEG / 2.0)
    half_forward = math.radians(defaults.FORWARD_WEDGE_DEG / 2.0)
    detect = (bearing <= half_surround and dist <= r_s) or (bearing <= half_forward and dist <= r_f)

    route = agent.behavior.route
    look = defaults.ROUTE_LOOKAHEAD
    ego_poly = ego_route.slice_xy(ego_progress, ego_progress + look)
    agent_poly = route.slice_xy(agent.behavior.route_progress, agent.behavior.route_progress + look)
    intersect = segments_intersect_any(ego_poly, agent_poly)
    return InteractionRecord(detect=detect, intersect=bool(intersect))


def ego_speed_alteration(traj: PlannedTrajectory) -> int:
    """Count acceleration/deceleration trend switches across the horizon."""
    norms = [math.hypot(ox, oy) for ox, oy in traj.offsets]
    diffs = [b - a for a, b in zip(norms, norms[1:])]
    count = 0
    prev_sign = 0
    for d in diffs:
        sign = 0 if d == 0.0 else (1 if d > 0 else -1)
        if sign == 0:
            continue  # zero differences inherit the previous trend
        if prev_sign != 0 and sign != prev_sign:
            count += 1
        prev_sign = sign
    return count


def interaction_rate(scenes) -> float:
    """Fraction of scenes with at least one interacting record."""
    if not scenes:
        raise EmptyInputError("no scenes")
    hits = sum(1 for records in scenes if any(r.interaction for r in records))
    return hits / len(scenes)

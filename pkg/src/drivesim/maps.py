"""Lane-graph map representation with localization, routing and sampling.

Maps are loaded from a JSON lane-graph file (see `load_map`). The loaded
topology is immutable and safe for concurrent reads; every operation here is
a pure function of its inputs.
"""

import heapq
import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import defaults
from .geom import (
    point_in_polygon,
    polygon_self_intersects,
    polyline_lengths,
    project_point_to_polyline,
    resample_polyline,
    wrap_angle,
)


class MapFormatError(ValueError):
    """Malformed map file (bad JSON, missing or mistyped fields)."""


class MapValidationError(ValueError):
    """Structurally valid file that violates a topology invariant."""


class NoLaneFoundError(LookupError):
    """No lane passes the heading gate within the lateral-offset limit."""


class UnreachableGoalError(LookupError):
    """The goal lane cannot be reached from the start over the lane graph."""


@dataclass(frozen=True, slots=True)
class LanePoint:
    x: float
    y: float
    heading: float  # rad in (-pi, pi]
    s: float        # arclength along the owning polyline, m


class RoadOption(Enum):
    FOLLOW = "Follow"
    TURN_LEFT = "TurnLeft"
    TURN_RIGHT = "TurnRight"
    LANE_CHANGE_LEFT = "LaneChangeLeft"
    LANE_CHANGE_RIGHT = "LaneChangeRight"


class Lane:
    """One directed lane: an ordered centerline plus graph links."""

    def __init__(self, lane_id, xy, speed_limit, successors, left_neighbor, right_neighbor, is_junction):
        xy = np.asarray(xy, dtype=float)
        if xy.ndim != 2 or xy.shape[1] != 2 or len(xy) < 2:
            raise MapValidationError(f"lane {lane_id!r}: needs at least 2 [x, y] points")
        self.id = str(lane_id)
        self.xy = xy
        self.cum_s = polyline_lengths(xy)
        if np.any(np.diff(self.cum_s) <= 0.0):
            raise MapValidationError(f"lane {lane_id!r}: consecutive points must advance arclength")
        self.length = float(self.cum_s[-1])
        self.speed_limit = float(speed_limit)
        self.successors = [str(s) for s in successors]
        self.left_neighbor = str(left_neighbor) if left_neighbor is not None else None
        self.right_neighbor = str(right_neighbor) if right_neighbor is not None else None
        self.is_junction = bool(is_junction)
        seg = np.diff(xy, axis=0)
        head = np.arctan2(seg[:, 1], seg[:, 0])
        self.seg_headings = head
        self._point_headings = np.concatenate((head, head[-1:]))

    @property
    def points(self) -> list[LanePoint]:
        return [
            LanePoint(float(x), float(y), float(h), float(s))
            for (x, y), h, s in zip(self.xy, self._point_headings, self.cum_s)
        ]

    def point_at(self, s: float) -> LanePoint:
        """Interpolated centerline point at arclength s (clamped)."""
        s = min(max(s, 0.0), self.length)
        x = float(np.interp(s, self.cum_s, self.xy[:, 0]))
        y = float(np.interp(s, self.cum_s, self.xy[:, 1]))
        i = min(int(np.searchsorted(self.cum_s, s, side="right")) - 1, len(self.seg_headings) - 1)
        i = max(i, 0)
        return LanePoint(x, y, float(self.seg_headings[i]), s)

    def heading_at(self, s: float) -> float:
        return self.point_at(s).heading

    def slice_xy(self, s_from: float, s_to: float) -> np.ndarray:
        """Centerline polyline between two arclengths (inclusive ends)."""
        s_from = min(max(s_from, 0.0), self.length)
        s_to = min(max(s_to, 0.0), self.length)
        if s_to < s_from:
            s_from, s_to = s_to, s_from
        a = self.point_at(s_from)
        b = self.point_at(s_to)
        inner = (self.cum_s > s_from + 1e-9) & (self.cum_s < s_to - 1e-9)
        pts = [np.array([a.x, a.y])]
        pts.extend(self.xy[inner])
        pts.append(np.array([b.x, b.y]))
        return np.array(pts)

    def project(self, px: float, py: float):
        """(s, signed lateral, segment heading) of the closest centerline point."""
        s, lateral, i = project_point_to_polyline(px, py, self.xy, self.cum_s)
        return s, lateral, float(self.seg_headings[i])

    def heading_change(self) -> float:
        """Net signed heading change from lane start to end."""
        total = 0.0
        for a, b in zip(self.seg_headings, self.seg_headings[1:]):
            total += wrap_angle(b - a)
        return total


@dataclass(slots=True)
class Junction:
    index: int
    lane_ids: list[str]
    centroid: tuple[float, float]


@dataclass(slots=True)
class RouteSegment:
    lane_id: str
    option: RoadOption
    s_start: float  # route arclength where this lane's portion begins
    s_end: float


class Route:
    """A drivable path: lane sequence, resampled waypoints, road options."""

    def __init__(self, lane_sequence, waypoints_xy, options, segments, speed_limits):
        self.lane_sequence = list(lane_sequence)
        self.xy = np.asarray(waypoints_xy, dtype=float)
        self.cum_s = polyline_lengths(self.xy)
        self.length = float(self.cum_s[-1])
        self.road_option_sequence = list(options)
        self.segments = list(segments)
        self.speed_limits = np.asarray(speed_limits, dtype=float)
        seg = np.diff(self.xy, axis=0)
        head = np.arctan2(seg[:, 1], seg[:, 0])
        self._headings = np.concatenate((head, head[-1:])) if len(head) else np.zeros(1)

    @property
    def waypoints(self) -> list[LanePoint]:
        return [
            LanePoint(float(x), float(y), float(h), float(s))
            for (x, y), h, s in zip(self.xy, self._headings, self.cum_s)
        ]

    def point_at(self, s: float):
        s = min(max(s, 0.0), self.length)
        x = float(np.interp(s, self.cum_s, self.xy[:, 0]))
        y = float(np.interp(s, self.cum_s, self.xy[:, 1]))
        i = min(int(np.searchsorted(self.cum_s, s, side="right")) - 1, len(self._headings) - 1)
        return x, y, float(self._headings[max(i, 0)])

    def project(self, px: float, py: float):
        """(s, signed lateral) of a point projected onto the route polyline."""
        s, lateral, _ = project_point_to_polyline(px, py, self.xy, self.cum_s)
        return s, lateral

    def speed_limit_at(self, s: float) -> float:
        i = int(np.searchsorted(self.cum_s, min(max(s, 0.0), self.length), side="right")) - 1
        return float(self.speed_limits[min(max(i, 0), len(self.speed_limits) - 1)])

    def slice_xy(self, s_from: float, s_to: float) -> np.ndarray:
        s_from = min(max(s_from, 0.0), self.length)
        s_to = min(max(s_to, 0.0), self.length)
        ax, ay, _ = self.point_at(s_from)
        bx, by, _ = self.point_at(s_to)
        inner = (self.cum_s > s_from + 1e-9) & (self.cum_s < s_to - 1e-9)
        pts = [np.array([ax, ay])]
        pts.extend(self.xy[inner])
        pts.append(np.array([bx, by]))
        return np.array(pts)

    def options_in_window(self, s_from: float, s_to: float) -> list[RoadOption]:
        out = []
        for seg in self.segments:
            if seg.s_start < s_to and seg.s_end > s_from:
                out.append(seg.option)
        return out


class MapTopology:
    """Immutable directed lane graph plus drivable-area polygons."""

    def __init__(self, lanes: dict[str, Lane], drivable_area: list[np.ndarray]):
        self.lanes = dict(sorted(lanes.items()))
        self.drivable_area = [np.asarray(p, dtype=float) for p in drivable_area]
        self._validate()
        self.predecessors: dict[str, list[str]] = {lid: [] for lid in self.lanes}
        for lane in self.lanes.values():
            for succ in lane.successors:
                self.predecessors[succ].append(lane.id)
        self.junctions = self._group_junctions()

    def _validate(self):
        for lane in self.lanes.values():
            for succ in lane.successors:
                if succ not in self.lanes:
                    raise MapValidationError(f"lane {lane.id!r}: successor {succ!r} does not exist")
            for side in ("left_neighbor", "right_neighbor"):
                ref = getattr(lane, side)
                if ref is None:
                    continue
                if ref not in self.lanes:
                    raise MapValidationError(f"lane {lane.id!r}: {side} {ref!r} does not exist")
            if lane.left_neighbor is not None:
                other = self.lanes[lane.left_neighbor]
                if other.right_neighbor != lane.id:
                    raise MapValidationError(
                        f"asymmetric neighbor link: {lane.id!r}.left = {other.id!r} "
                        f"but {other.id!r}.right = {other.right_neighbor!r}"
                    )
            if lane.right_neighbor is not None:
                other = self.lanes[lane.right_neighbor]
                if other.left_neighbor != lane.id:
                    raise MapValidationError(
                        f"asymmetric neighbor link: {lane.id!r}.right = {other.id!r} "
                        f"but {other.id!r}.left = {other.left_neighbor!r}"
                    )
        for i, poly in enumerate(self.drivable_area):
            if len(poly) < 3:
                raise MapValidationError(f"drivable polygon {i}: needs at least 3 vertices")
            if polygon_self_intersects(poly):
                raise MapValidationError(f"drivable polygon {i}: self-intersecting")

    def _group_junctions(self) -> list[Junction]:
        junction_ids = [lid for lid, lane in self.lanes.items() if lane.is_junction]
        parent = {lid: lid for lid in junction_ids}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        def union(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[rb] = ra

        jset = set(junction_ids)
        by_pred: dict[str, list[str]] = {}
        by_succ: dict[str, list[str]] = {}
        for lid in junction_ids:
            for pred in self.predecessors[lid]:
                by_pred.setdefault(pred, []).append(lid)
            for succ in self.lanes[lid].successors:
                if succ in jset:
                    union(lid, succ)
                by_succ.setdefault(succ, []).append(lid)
        for group in list(by_pred.values()) + list(by_succ.values()):
            for other in group[1:]:
                union(group[0], other)

        clusters: dict[str, list[str]] = {}
        for lid in junction_ids:
            clusters.setdefault(find(lid), []).append(lid)
        junctions = []
        for idx, members in enumerate(sorted(clusters.values(), key=lambda m: sorted(m)[0])):
            pts = np.vstack([self.lanes[m].xy for m in members])
            junctions.append(
                Junction(index=idx, lane_ids=sorted(members), centroid=(float(pts[:, 0].mean()), float(pts[:, 1].mean())))
            )
        return junctions

    def junction_distance(self, x: float, y: float) -> float:
        """Distance to the nearest junction lane point; inf when no junctions."""
        best = math.inf
        for j in self.junctions:
            for lid in j.lane_ids:
                xy = self.lanes[lid].xy
                d = float(np.min(np.hypot(xy[:, 0] - x, xy[:, 1] - y)))
                best = min(best, d)
        return best

    def in_drivable_area(self, x: float, y: float) -> bool:
        return any(point_in_polygon(x, y, poly) for poly in self.drivable_area)


def load_map(path) -> MapTopology:
    """Load and validate a JSON lane-graph map file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise MapFormatError(f"{path}: invalid JSON: {e}") from e
    return map_from_dict(raw, source=str(path))


def map_from_dict(raw: dict, source: str = "<dict>") -> MapTopology:
    if not isinstance(raw, dict) or "lanes" not in raw:
        raise MapFormatError(f"{source}: top-level object must contain 'lanes'")
    lanes = {}
    for entry in raw["lanes"]:
        try:
            lane = Lane(
                lane_id=entry["id"],
                xy=entry["points"],
                speed_limit=entry["speed_limit"],
                successors=entry.get("successors", []),
                left_neighbor=entry.get("left_neighbor"),
                right_neighbor=entry.get("right_neighbor"),
                is_junction=entry.get("is_junction", False),
            )
        except KeyError as e:
            raise MapFormatError(f"{source}: lane entry missing field {e.args[0]!r}") from e
        except (TypeError, ValueError) as e:
            if isinstance(e, MapValidationError):
                raise
            raise MapFormatError(f"{source}: bad lane entry {entry.get('id')!r}: {e}") from e
        if lane.id in lanes:
            raise MapValidationError(f"duplicate lane id {lane.id!r}")
        lanes[lane.id] = lane
    drivable = [np.asarray(p, dtype=float) for p in raw.get("drivable_area", [])]
    return MapTopology(lanes, drivable)


def localize(point, heading: float, m: MapTopology):
    """Find the lane under a pose.

    Among lanes whose local heading differs from the query by less than the
    heading gate, returns (lane_id, s, lateral_offset) for the lane with the
    smallest |lateral offset| (ties go to the smaller lane id). Lateral
    offsets are positive to the left of the lane direction.
    """
    px, py = float(point[0]), float(point[1])
    best = None
    for lid in sorted(m.lanes):
        lane = m.lanes[lid]
        s, lateral, seg_heading = lane.project(px, py)
        if abs(wrap_angle(seg_heading - heading)) >= defaults.HEADING_GATE:
            continue
        if abs(lateral) > defaults.MAX_LATERAL_OFFSET:
            continue
        if best is None or abs(lateral) < abs(best[2]):
            best = (lid, s, lateral)
    if best is None:
        raise NoLaneFoundError(
            f"no lane within {defaults.MAX_LATERAL_OFFSET} m passes the heading gate at ({px:.1f}, {py:.1f})"
        )
    return best


def _lane_option(m: MapTopology, lane_id: str, via: str) -> RoadOption:
    if via == "left":
        return RoadOption.LANE_CHANGE_LEFT
    if via == "right":
        return RoadOption.LANE_CHANGE_RIGHT
    lane = m.lanes[lane_id]
    if lane.is_junction:
        change = math.degrees(lane.heading_change())
        if change > defaults.TURN_THRESHOLD_DEG:
            return RoadOption.TURN_LEFT
        if change < -defaults.TURN_THRESHOLD_DEG:
            return RoadOption.TURN_RIGHT
    return RoadOption.FOLLOW


def build_route(m: MapTopology, lane_sequence, s_start: float, s_end: float, vias=None) -> Route:
    """Assemble a Route along connected lanes from s_start to s_end.

    `vias` labels how each lane after the first is entered: "succ", "left"
    or "right". Lane-change hops keep the entry arclength; successor hops
    enter at 0.
    """
    if vias is None:
        vias = ["succ"] * (len(lane_sequence) - 1)
    if len(vias) != len(lane_sequence) - 1:
        raise ValueError("vias must have one entry per transition")

    pieces = []
    options = []
    seg_records = []
    entry = s_start
    route_s = 0.0
    for i, lid in enumerate(lane_sequence):
        lane = m.lanes[lid]
        via = "start" if i == 0 else vias[i - 1]
        if i == len(lane_sequence) - 1:
            exit_s = s_end
        elif vias[i] == "succ":
            exit_s = lane.length
        else:
            exit_s = entry  # immediate lane change: no travel on this lane
        exit_s = min(max(exit_s, entry), lane.length)
        piece = lane.slice_xy(entry, exit_s)
        travel = exit_s - entry
        option = RoadOption.FOLLOW if i == 0 else _lane_option(m, lid, via)
        options.append(option)
        seg_records.append((lid, option, route_s, route_s + max(travel, 0.0), lane.speed_limit))
        route_s += max(travel, 0.0)
        pieces.append(piece)
        if i < len(lane_sequence) - 1:
            nxt = m.lanes[lane_sequence[i + 1]]
            entry = 0.0 if vias[i] == "succ" else min(exit_s, nxt.length)

    poly = np.vstack(pieces)
    keep = np.ones(len(poly), dtype=bool)
    keep[1:] = np.hypot(np.diff(poly[:, 0]), np.diff(poly[:, 1])) > 1e-9
    poly = poly[keep]
    if len(poly) < 2:
        poly = np.vstack((poly, poly[-1] + [1e-6, 0.0]))
    waypoints = resample_polyline(poly, defaults.WAYPOINT_SPACING)

    # map resampled waypoints onto owning segments for speed limits / options
    wp_s = polyline_lengths(waypoints)
    total = float(wp_s[-1])
    scale = total / route_s if route_s > 0 else 1.0
    segments = [
        RouteSegment(lane_id=lid, option=option, s_start=s0 * scale, s_end=s1 * scale)
        for lid, option, s0, s1, _ in seg_records
    ]
    seg_limits = [rec[4] for rec in seg_records]
    limits = np.full(len(waypoints), seg_limits[-1])
    for k, s in enumerate(wp_s):
        for seg, limit in zip(segments, seg_limits):
            if seg.s_start - 1e-6 <= s <= seg.s_end + 1e-6 and seg.s_end > seg.s_start:
                limits[k] = limit
                break
    return Route(lane_sequence, waypoints, options, segments, limits)


def plan_route(start, goal, m: MapTopology) -> Route:
    """Shortest-arclength route between (lane, s) endpoints.

    Successor hops cost the remaining arclength of the current lane;
    lane-change hops cost LANE_CHANGE_COST_FACTOR * LANE_WIDTH and keep the
    entry arclength. Raises UnreachableGoalError when no path exists.
    """
    start_lane, start_s = str(start[0]), float(start[1])
    goal_lane, goal_s = str(goal[0]), float(goal[1])
    if start_lane not in m.lanes:
        raise UnreachableGoalError(f"start lane {start_lane!r} does not exist")
    if goal_lane not in m.lanes:
        raise UnreachableGoalError(f"goal lane {goal_lane!r} does not exist")
    change_cost = defaults.LANE_CHANGE_COST_FACTOR * defaults.LANE_WIDTH

    start_state = (start_lane, round(start_s, 6))
    dist = {start_state: 0.0}
    prev: dict = {start_state: None}
    heap = [(0.0, start_state)]
    best_goal = None
    best_goal_cost = math.inf
    while heap:
        cost, state = heapq.heappop(heap)
        if cost > dist.get(state, math.inf):
            continue
        lane_id, entry = state
        lane = m.lanes[lane_id]
        if lane_id == goal_lane and entry <= goal_s + 1e-9:
            total = cost + (goal_s - entry)
            if total < best_goal_cost:
                best_goal_cost = total
                best_goal = state
        if cost >= best_goal_cost:
            continue
        moves = []
        remaining = lane.length - entry
        for succ in lane.successors:
            moves.append((cost + remaining, (succ, 0.0), "succ"))
        if lane.left_neighbor is not None:
            nb = m.lanes[lane.left_neighbor]
            moves.append((cost + change_cost, (nb.id, round(min(entry, nb.length), 6)), "left"))
        if lane.right_neighbor is not None:
            nb = m.lanes[lane.right_neighbor]
            moves.append((cost + change_cost, (nb.id, round(min(entry, nb.length), 6)), "right"))
        for new_cost, new_state, via in moves:
            if new_cost < dist.get(new_state, math.inf):
                dist[new_state] = new_cost
                prev[new_state] = (state, via)
                heapq.heappush(heap, (new_cost, new_state))

    if best_goal is None:
        raise UnreachableGoalError(f"goal lane {goal_lane!r} unreachable from {start_lane!r}")

    sequence = []
    vias = []
    state = best_goal
    while state is not None:
        sequence.append(state[0])
        link = prev[state]
        if link is None:
            break
        state, via = link
        vias.append(via)
    sequence.reverse()
    vias.reverse()
    return build_route(m, sequence, start_s, goal_s, vias)


def route_cost(m: MapTopology, lane_sequence, vias, s_start: float, s_end: float) -> float:
    """Cost of a lane sequence under the plan_route edge model (for oracles)."""
    change_cost = defaults.LANE_CHANGE_COST_FACTOR * defaults.LANE_WIDTH
    cost = 0.0
    entry = s_start
    for i, lid in enumerate(lane_sequence):
        lane = m.lanes[lid]
        if i == len(lane_sequence) - 1:
            if s_end < entry - 1e-9:
                return math.inf
            return cost + (s_end - entry)
        if vias[i] == "succ":
            cost += lane.length - entry
            entry = 0.0
        else:
            nxt = m.lanes[lane_sequence[i + 1]]
            cost += change_cost
            entry = min(entry, nxt.length)
    return cost


def sample_spawn_candidates(m: MapTopology, spacing: float) -> list[tuple[str, float]]:
    """Candidate spawn points at arclength multiples on non-junction lanes.

    Deterministic order: by lane id, then arclength.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    out = []
    for lid in sorted(m.lanes):
        lane = m.lanes[lid]
        if lane.is_junction:
            continue
        k = 0
        while k * spacing <= lane.length + 1e-9:
            out.append((lid, min(k * spacing, lane.length)))
            k += 1
    return out

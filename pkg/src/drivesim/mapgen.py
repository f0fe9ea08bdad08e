"""Programmatic builders for small test/demo maps.

Each builder returns a JSON-ready dict matching the map schema; wrap with
`maps.map_from_dict` or dump to disk for the CLI.
"""

import json
import math

import numpy as np

from .maps import MapTopology, map_from_dict


def _lane(lane_id, points, speed_limit, successors=(), left=None, right=None, junction=False):
    return {
        "id": lane_id,
        "points": [[round(float(x), 6), round(float(y), 6)] for x, y in points],
        "speed_limit": speed_limit,
        "successors": list(successors),
        "left_neighbor": left,
        "right_neighbor": right,
        "is_junction": junction,
    }


def _line(p0, p1, step=5.0):
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    n = max(2, int(math.ceil(np.hypot(*(p1 - p0)) / step)) + 1)
    t = np.linspace(0.0, 1.0, n)
    return p0[None, :] + t[:, None] * (p1 - p0)[None, :]


def _arc(center, radius, theta0, theta1, step_deg=5.0):
    n = max(3, int(abs(math.degrees(theta1 - theta0)) / step_deg) + 1)
    t = np.linspace(theta0, theta1, n)
    return np.column_stack((center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)))


def two_segment_straight(length=200.0, speed_limit=10.0) -> dict:
    """Two lanes in series (one successor link) along +x."""
    half = length / 2.0
    return {
        "lanes": [
            _lane("L0", _line((0.0, 0.0), (half, 0.0)), speed_limit, successors=["L1"]),
            _lane("L1", _line((half, 0.0), (length, 0.0)), speed_limit),
        ],
        "drivable_area": [[[-5.0, -5.0], [length + 5.0, -5.0], [length + 5.0, 5.0], [-5.0, 5.0]]],
    }


def parallel_two_lane(length=200.0, lane_width=3.5, speed_limit=10.0) -> dict:
    """Two same-direction parallel lanes along +x; "B" is left of "A"."""
    return {
        "lanes": [
            _lane("A", _line((0.0, 0.0), (length, 0.0)), speed_limit, left="B"),
            _lane("B", _line((0.0, lane_width), (length, lane_width)), speed_limit, right="A"),
        ],
        "drivable_area": [
            [[-5.0, -lane_width], [length + 5.0, -lane_width], [length + 5.0, 2 * lane_width], [-5.0, 2 * lane_width]]
        ],
    }


def single_lane(length=400.0, speed_limit=12.0) -> dict:
    return {
        "lanes": [_lane("L0", _line((0.0, 0.0), (length, 0.0)), speed_limit)],
        "drivable_area": [[[-5.0, -4.0], [length + 5.0, -4.0], [length + 5.0, 4.0], [-5.0, 4.0]]],
    }


def four_way_intersection(arm=60.0, lane_width=3.5, approach_limit=10.0, junction_limit=5.0) -> dict:
    """Four-arm intersection: 8 approach lanes, 12 junction lanes, 1 junction.

    Right-hand traffic, one lane per direction per arm. Junction box spans
    +-12 m around the origin; arcs connect inbound ends to outbound starts.
    """
    off = lane_width / 2.0   # 1.75: lane-center offset from road axis
    box = 12.0
    reach = box + arm
    half_road = 2 * lane_width  # drivable half-width of each road

    lanes = []

    def rot(p, ang):
        c, s = math.cos(ang), math.sin(ang)
        return (p[0] * c - p[1] * s, p[0] * s + p[1] * c)

    # canonical south-arm geometry (inbound heading +y), rotated per arm:
    # inbound center x=+off from y=-reach..-box; outbound x=-off, y=-box..-reach
    in_pts = [( off, -reach), ( off, -box)]
    out_pts = [(-off, -box), (-off, -reach)]
    # rotation that maps the south arm onto each arm
    arm_rot = {"s": 0.0, "w": -math.pi / 2, "n": math.pi, "e": math.pi / 2}

    for name, ang in arm_rot.items():
        lanes.append(_lane(f"in_{name}", _line(rot(in_pts[0], ang), rot(in_pts[1], ang)), approach_limit))
        lanes.append(_lane(f"out_{name}", _line(rot(out_pts[0], ang), rot(out_pts[1], ang)), approach_limit))

    # canonical junction lanes for the south inbound, rotated per arm:
    #   straight: (off,-box) -> (off, box)          (to out_n)
    #   left:     arc center (-box,-box) r=box+off  (to out_w)
    #   right:    arc center ( box,-box) r=box-off  (to out_e)
    straight = _line((off, -box), (off, box), step=4.0)
    left_arc = _arc((-box, -box), box + off, 0.0, math.pi / 2)
    right_arc = _arc((box, -box), box - off, math.pi, math.pi / 2)
    # the arm an exit belongs to, seen from the south inbound
    exits = {"s": {"straight": "n", "left": "w", "right": "e"},
             "w": {"straight": "e", "left": "n", "right": "s"},
             "n": {"straight": "s", "left": "e", "right": "w"},
             "e": {"straight": "w", "left": "s", "right": "n"}}

    for name, ang in arm_rot.items():
        for kind, pts in (("straight", straight), ("left", left_arc), ("right", right_arc)):
            pts_r = [rot(p, ang) for p in pts]
            lane_id = f"j_{name}_{kind}"
            lanes.append(_lane(lane_id, pts_r, junction_limit, successors=[f"out_{exits[name][kind]}"], junction=True))
    for lane in lanes:
        if lane["id"].startswith("in_"):
            arm_name = lane["id"][3:]
            lane["successors"] = [f"j_{arm_name}_straight", f"j_{arm_name}_left", f"j_{arm_name}_right"]

    horiz = [[-reach - 5, -half_road], [reach + 5, -half_road], [reach + 5, half_road], [-reach - 5, half_road]]
    vert = [[-half_road, -reach - 5], [half_road, -reach - 5], [half_road, reach + 5], [-half_road, reach + 5]]
    return {"lanes": lanes, "drivable_area": [horiz, vert]}


def build(spec: dict) -> MapTopology:
    return map_from_dict(spec)


def save(spec: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec, fh, indent=1, sort_keys=True)
        fh.write("\n")

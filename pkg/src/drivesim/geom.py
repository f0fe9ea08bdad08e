"""Planar geometry helpers shared across the simulator.

Conventions used everywhere in this package:
  * world frame: x east, y north, headings counter-clockwise from +x
  * headings are normalized into (-pi, pi]
  * "left" is the positive lateral direction in a vehicle/lane frame
"""

import math

import numpy as np


def wrap_angle(a: float) -> float:
    """Normalize an angle into (-pi, pi]."""
    r = math.fmod(a + math.pi, 2.0 * math.pi)
    if r <= 0.0:
        r += 2.0 * math.pi
    return r - math.pi


def wrap_angle_array(a):
    """Vectorized wrap_angle; maps exactly onto (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi)
    w = np.where(w == 0.0, 2.0 * np.pi, w)
    return w - np.pi


def rotate(x, y, angle):
    c, s = math.cos(angle), math.sin(angle)
    return x * c - y * s, x * s + y * c


def polyline_lengths(xy: np.ndarray) -> np.ndarray:
    """Cumulative arclength for an (N, 2) polyline, starting at 0."""
    seg = np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))
    return np.concatenate(([0.0], np.cumsum(seg)))


def resample_polyline(xy: np.ndarray, spacing: float) -> np.ndarray:
    """Resample a polyline at a fixed spacing.

    Returns points at arclengths 0, spacing, 2*spacing, ... plus the final
    vertex, so every gap equals `spacing` except possibly the last one.
    """
    s = polyline_lengths(xy)
    total = float(s[-1])
    if total <= 0.0:
        return xy[:1].copy()
    targets = np.arange(0.0, total, spacing)
    if total - targets[-1] > 1e-9:
        targets = np.concatenate((targets, [total]))
    else:
        targets[-1] = total
    out_x = np.interp(targets, s, xy[:, 0])
    out_y = np.interp(targets, s, xy[:, 1])
    return np.column_stack((out_x, out_y))


def project_point_to_polyline(px: float, py: float, xy: np.ndarray, cum_s: np.ndarray):
    """Project a point onto a polyline.

    Returns (s, signed_lateral, seg_index). The lateral offset is positive
    when the point lies to the left of the local segment direction.
    """
    a = xy[:-1]
    d = xy[1:] - a
    seg_len2 = np.maximum(np.einsum("ij,ij->i", d, d), 1e-18)
    rel = np.array([px, py]) - a
    t = np.clip(np.einsum("ij,ij->i", rel, d) / seg_len2, 0.0, 1.0)
    closest = a + t[:, None] * d
    dist2 = (closest[:, 0] - px) ** 2 + (closest[:, 1] - py) ** 2
    i = int(np.argmin(dist2))
    seg = d[i]
    norm = math.hypot(seg[0], seg[1])
    if norm < 1e-12:
        lateral = math.sqrt(dist2[i])
    else:
        ux, uy = seg[0] / norm, seg[1] / norm
        lateral = ux * (py - a[i, 1]) - uy * (px - a[i, 0])
    s = float(cum_s[i] + t[i] * (cum_s[i + 1] - cum_s[i]))
    return s, float(lateral), i


def segments_intersect_any(a: np.ndarray, b: np.ndarray) -> bool:
    """True if any segment of polyline `a` crosses any segment of `b`.

    Both arguments are (N, 2) polylines. Proper and touching intersections
    both count. Vectorized over all segment pairs.
    """
    if len(a) < 2 or len(b) < 2:
        return False
    p = a[:-1]
    r = a[1:] - p
    q = b[:-1]
    s = b[1:] - q
    # pairwise cross products, shape (len(p), len(q))
    px, py = p[:, 0][:, None], p[:, 1][:, None]
    rx, ry = r[:, 0][:, None], r[:, 1][:, None]
    qx, qy = q[:, 0][None, :], q[:, 1][None, :]
    sx, sy = s[:, 0][None, :], s[:, 1][None, :]
    denom = rx * sy - ry * sx
    dqpx, dqpy = qx - px, qy - py
    t_num = dqpx * sy - dqpy * sx
    u_num = dqpx * ry - dqpy * rx
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_num / denom
        u = u_num / denom
    crossing = (np.abs(denom) > 1e-12) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    if bool(np.any(crossing)):
        return True
    # collinear overlap: denom == 0 and the lines coincide
    collinear = (np.abs(denom) <= 1e-12) & (np.abs(t_num) <= 1e-9)
    if not bool(np.any(collinear)):
        return False
    idx = np.argwhere(collinear)
    for i, j in idx:
        rr = float(r[i, 0] ** 2 + r[i, 1] ** 2)
        if rr < 1e-18:
            continue
        t0 = ((q[j, 0] - p[i, 0]) * r[i, 0] + (q[j, 1] - p[i, 1]) * r[i, 1]) / rr
        t1 = t0 + (s[j, 0] * r[i, 0] + s[j, 1] * r[i, 1]) / rr
        lo, hi = min(t0, t1), max(t0, t1)
        if hi >= 0.0 and lo <= 1.0:
            return True
    return False


def count_segment_crossings(a: np.ndarray, b: np.ndarray) -> int:
    """Number of properly crossing segment pairs between two polylines."""
    if len(a) < 2 or len(b) < 2:
        return 0
    p = a[:-1]
    r = a[1:] - p
    q = b[:-1]
    s = b[1:] - q
    px, py = p[:, 0][:, None], p[:, 1][:, None]
    rx, ry = r[:, 0][:, None], r[:, 1][:, None]
    qx, qy = q[:, 0][None, :], q[:, 1][None, :]
    sx, sy = s[:, 0][None, :], s[:, 1][None, :]
    denom = rx * sy - ry * sx
    dqpx, dqpy = qx - px, qy - py
    t_num = dqpx * sy - dqpy * sx
    u_num = dqpx * ry - dqpy * rx
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_num / denom
        u = u_num / denom
    crossing = (np.abs(denom) > 1e-12) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    return int(np.count_nonzero(crossing))


def _on_segment(px, py, ax, ay, bx, by, eps=1e-9) -> bool:
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if abs(cross) > eps * max(1.0, abs(bx - ax) + abs(by - ay)):
        return False
    dot = (px - ax) * (bx - ax) + (py - ay) * (by - ay)
    if dot < -eps:
        return False
    if dot > (bx - ax) ** 2 + (by - ay) ** 2 + eps:
        return False
    return True


def point_in_polygon(px: float, py: float, poly: np.ndarray) -> bool:
    """Boundary-inclusive point-in-polygon test (even-odd rule)."""
    n = len(poly)
    inside = False
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        if _on_segment(px, py, ax, ay, bx, by):
            return True
        if (ay > py) != (by > py):
            x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
            if px < x_cross:
                inside = not inside
    return inside


def points_in_polygon_mask(xs: np.ndarray, ys: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Vectorized even-odd point-in-polygon for many query points."""
    inside = np.zeros(xs.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        if ay == by:
            continue
        cond = (ay > ys) != (by > ys)
        x_cross = ax + (ys - ay) * (bx - ax) / (by - ay)
        inside ^= cond & (xs < x_cross)
    return inside


def polygon_self_intersects(poly: np.ndarray) -> bool:
    """True when non-adjacent edges of a closed polygon cross each other."""
    n = len(poly)
    closed = np.vstack((poly, poly[:1]))
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            a = closed[i : i + 2]
            b = closed[j : j + 2]
            if segments_intersect_any(a, b):
                return True
    return False


def obb_corners(x: float, y: float, heading: float, length: float, width: float) -> np.ndarray:
    """Corners of an oriented rectangle centered at (x, y), (4, 2) array."""
    hl, hw = 0.5 * length, 0.5 * width
    c, s = math.cos(heading), math.sin(heading)
    local = np.array([(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)])
    world = np.empty_like(local)
    world[:, 0] = x + local[:, 0] * c - local[:, 1] * s
    world[:, 1] = y + local[:, 0] * s + local[:, 1] * c
    return world

"""Car-following and path-tracking laws shared by agents and the expert.

Longitudinal control is the intelligent driver model; lateral control is
pure pursuit toward a lookahead point on the tracked polyline.
"""

import math

import numpy as np

from . import defaults
from .geom import wrap_angle
from .kinematics import ACCEL_MAX, DELTA_MAX


def idm_accel(v, v0, gap=None, lead_v=0.0, s0=defaults.IDM_S0, t_headway=defaults.IDM_T_HEADWAY,
              a_max=defaults.IDM_A_MAX, b_comf=defaults.IDM_B_COMF):
    """Intelligent-driver-model acceleration for one vehicle.

    gap is bumper-to-bumper distance to the leader (None = free road).
    """
    stopped = v0 <= 0.01  # a zero target speed means "hold still"
    v0 = max(v0, 1e-3)
    term = 1.0 - (v / v0) ** defaults.IDM_EXPONENT
    if gap is not None:
        s_star = s0 + max(0.0, v * t_headway + v * (v - lead_v) / (2.0 * math.sqrt(a_max * b_comf)))
        term -= (s_star / max(gap, 0.1)) ** 2
    a = min(max(a_max * term, -ACCEL_MAX), ACCEL_MAX)
    return min(a, 0.0) if stopped else a


def idm_accel_array(v, v0, gap, lead_v, s0, t_headway,
                    a_max=defaults.IDM_A_MAX, b_comf=defaults.IDM_B_COMF):
    """Vectorized IDM over agent arrays. gap = inf means free road."""
    stopped = v0 <= 0.01
    v0 = np.maximum(v0, 1e-3)
    ratio = v / v0
    ratio2 = ratio * ratio
    term = 1.0 - ratio2 * ratio2
    brake = 0.5 / math.sqrt(a_max * b_comf)
    s_star = s0 + np.maximum(0.0, v * (t_headway + (v - lead_v) * brake))
    inter = s_star / np.maximum(gap, 0.1)  # finite/inf -> 0, no warning
    a = np.minimum(np.maximum(a_max * (term - inter * inter), -ACCEL_MAX), ACCEL_MAX)
    return np.where(stopped, np.minimum(a, 0.0), a)


def pure_pursuit(x, y, phi, target_x, target_y, wheelbase):
    """Steering angle that arcs the vehicle toward a lookahead point."""
    alpha = wrap_angle(math.atan2(target_y - y, target_x - x) - phi)
    dist = math.hypot(target_x - x, target_y - y)
    delta = math.atan2(2.0 * wheelbase * math.sin(alpha), max(dist, 1e-6))
    return min(max(delta, -DELTA_MAX), DELTA_MAX)


def pure_pursuit_array(x, y, phi, tx, ty, wheelbase):
    alpha = np.arctan2(ty - y, tx - x) - phi
    alpha = np.mod(alpha + np.pi, 2.0 * np.pi) - np.pi
    dist = np.hypot(tx - x, ty - y)
    delta = np.arctan2(2.0 * wheelbase * np.sin(alpha), np.maximum(dist, 1e-6))
    return np.clip(delta, -DELTA_MAX, DELTA_MAX)


def leader_in_corridor(x, y, phi, others_xy, others_v, others_half_len, self_half_len,
                       half_width=defaults.CORRIDOR_HALF_WIDTH, max_range=defaults.LEADER_RANGE):
    """Nearest vehicle ahead inside the straight body-frame corridor.

    Returns (gap, lead_v) with gap bumper-to-bumper, or (None, 0.0).
    """
    if len(others_xy) == 0:
        return None, 0.0
    dx = others_xy[:, 0] - x
    dy = others_xy[:, 1] - y
    c, s = math.cos(phi), math.sin(phi)
    fwd = c * dx + s * dy
    lat = -s * dx + c * dy
    mask = (fwd > 0.0) & (fwd < max_range) & (np.abs(lat) < half_width)
    if not np.any(mask):
        return None, 0.0
    idx = np.flatnonzero(mask)
    best = idx[np.argmin(fwd[idx])]
    gap = float(fwd[best]) - float(others_half_len[best]) - self_half_len
    return max(gap, 0.05), float(others_v[best])

"""Vehicle kinematics: bicycle model, its adaptive variant, and calibration.

The adaptive model blends the pre- and post-update velocity with a learned
weight u1 and scales the slip angle's effect on the displacement direction
with a second weight u2. With u1 = 0, u2 = 1 it reduces exactly to the
kinematic bicycle model.
"""

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .geom import wrap_angle

DELTA_MAX = 0.6   # rad, steering limit
ACCEL_MAX = 8.0   # m/s^2, |a| limit
SPEED_FLOOR = 0.5  # m/s, below this a frame pair is unusable for calibration


class InsufficientDataError(ValueError):
    """Raised when too few usable frame pairs remain for calibration."""


@dataclass(slots=True)
class VehicleState:
    """Pose, speed and geometry of one vehicle at one tick."""

    x: float = 0.0
    y: float = 0.0
    phi: float = 0.0      # heading, rad in (-pi, pi]
    v: float = 0.0        # m/s, >= 0
    l_f: float = 1.5      # m, center to front axle
    l_r: float = 1.5      # m, center to rear axle
    width: float = 2.0
    length: float = 4.5

    def copy(self) -> "VehicleState":
        return replace(self)


@dataclass(frozen=True, slots=True)
class ControlAction:
    """Longitudinal acceleration and steering angle."""

    a: float = 0.0
    delta: float = 0.0

    def clamped(self) -> "ControlAction":
        return ControlAction(
            a=min(max(self.a, -ACCEL_MAX), ACCEL_MAX),
            delta=min(max(self.delta, -DELTA_MAX), DELTA_MAX),
        )


@dataclass(frozen=True, slots=True)
class KinematicParams:
    """Step size plus the two adaptive blend weights."""

    dt: float = 0.1
    u1: float = 0.0
    u2: float = 1.0


@dataclass(frozen=True, slots=True)
class ImuSample:
    t: int
    x: float
    y: float
    phi: float
    v: float


def slip_angle(delta: float, l_f: float, l_r: float) -> float:
    """Slip angle between velocity direction and heading for a steering angle."""
    return math.atan(l_r / (l_f + l_r) * math.tan(delta))


def akm_step(state: VehicleState, action: ControlAction, params: KinematicParams) -> VehicleState:
    """Advance one tick with the adaptive kinematic model.

    Update order: slip angle, speed (clamped at zero), heading, blended
    speed, then position using the pre-update heading.
    """
    beta = slip_angle(action.delta, state.l_f, state.l_r)
    v_next = max(0.0, state.v + action.a * params.dt)
    phi_next = wrap_angle(state.phi + state.v / state.l_f * math.sin(beta) * params.dt)
    v_u = (1.0 - params.u1) * state.v + params.u1 * v_next
    ang = state.phi + params.u2 * beta
    return VehicleState(
        x=state.x + v_u * math.cos(ang) * params.dt,
        y=state.y + v_u * math.sin(ang) * params.dt,
        phi=phi_next,
        v=v_next,
        l_f=state.l_f,
        l_r=state.l_r,
        width=state.width,
        length=state.length,
    )


def bicycle_step(state: VehicleState, action: ControlAction, dt: float) -> VehicleState:
    """Standard kinematic bicycle model: the adaptive model at u1 = 0, u2 = 1."""
    return akm_step(state, action, KinematicParams(dt=dt, u1=0.0, u2=1.0))


def invert_slip(phi_t: float, phi_next: float, v_t: float, l_f: float, dt: float):
    """Recover the slip angle from two consecutive headings.

    Returns None for frames below the speed floor, where the slip angle is
    numerically unidentifiable. The arcsine argument is clamped to [-1, 1].
    """
    if v_t < SPEED_FLOOR:
        return None
    arg = l_f / (v_t * dt) * wrap_angle(phi_next - phi_t)
    return math.asin(min(1.0, max(-1.0, arg)))


def load_imu_csv(path) -> list[ImuSample]:
    """Read one scene's IMU log (header: tick,x,y,phi,v)."""
    samples = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            samples.append(
                ImuSample(
                    t=int(row["tick"]),
                    x=float(row["x"]),
                    y=float(row["y"]),
                    phi=float(row["phi"]),
                    v=float(row["v"]),
                )
            )
    for a, b in zip(samples, samples[1:]):
        if b.t <= a.t:
            raise ValueError(f"IMU ticks not strictly increasing at t={b.t}")
    return samples


def _calibration_arrays(logs, l_f: float, dt: float):
    """Arrays (x, y, phi, v, x1, y1, v1, beta) for all usable frame pairs."""
    rows = []
    for log in logs:
        for a, b in zip(log, log[1:]):
            if b.t != a.t + 1:
                continue
            beta = invert_slip(a.phi, b.phi, a.v, l_f, dt)
            if beta is None:
                continue
            rows.append((a.x, a.y, a.phi, a.v, b.x, b.y, b.v, beta))
    if not rows:
        return np.empty((0, 8))
    return np.array(rows)


def akm_objective(pairs: np.ndarray, u1: float, u2: float, dt: float) -> float:
    """Squared position-prediction error of the adaptive model over frame pairs."""
    x, y, phi, v, x1, y1, v1, beta = pairs.T
    v_u = (1.0 - u1) * v + u1 * v1
    ang = phi + u2 * beta
    ex = x1 - (x + v_u * np.cos(ang) * dt)
    ey = y1 - (y + v_u * np.sin(ang) * dt)
    return float(ex @ ex + ey @ ey)


def estimate_akm_params(logs, l_f: float, l_r: float, dt: float, min_pairs: int = 100) -> KinematicParams:
    """Fit the adaptive-model weights to IMU logs.

    Coarse 21x21 grid over u1 in [0, 1], u2 in [0, 2], then coordinate
    descent with step halving from 0.05 down to 1e-5. The returned objective
    value never exceeds the best grid vertex.
    """
    pairs = _calibration_arrays(logs, l_f, dt)
    if len(pairs) < min_pairs:
        raise InsufficientDataError(
            f"need at least {min_pairs} usable frame pairs, got {len(pairs)}"
        )

    def f(u1, u2):
        return akm_objective(pairs, u1, u2, dt)

    best_u1, best_u2 = 0.0, 1.0
    best = math.inf
    for u1 in np.linspace(0.0, 1.0, 21):
        for u2 in np.linspace(0.0, 2.0, 21):
            val = f(u1, u2)
            if val < best:
                best, best_u1, best_u2 = val, float(u1), float(u2)

    step = 0.05
    while step >= 1e-5:
        improved = True
        while improved:
            improved = False
            for du1, du2 in ((step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)):
                u1 = min(1.0, max(0.0, best_u1 + du1))
                u2 = min(2.0, max(0.0, best_u2 + du2))
                val = f(u1, u2)
                if val < best:
                    best, best_u1, best_u2 = val, u1, u2
                    improved = True
        step *= 0.5
    return KinematicParams(dt=dt, u1=best_u1, u2=best_u2)

"""Traffic agents: heuristic spawning and bi-interactive per-tick control.

Agents follow their own routes with IDM car-following and pure-pursuit
steering. Every active agent reads a tick-t snapshot of all other vehicles
including the ego, so influence flows in both directions. Dangerous modes
override pieces of the normal law (tailgating, panic braking, forced lane
changes). The per-tick update is free of randomness: all stochastic choices
happen at spawn time from the world seed.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import defaults
from .control import idm_accel_array
from .geom import (
    count_segment_crossings,
    polyline_lengths,
    resample_polyline,
    segments_intersect_any,
)
from .kinematics import ACCEL_MAX, DELTA_MAX, VehicleState

try:  # compiled inner loop; the numpy path below is the portable fallback
    from . import _fastpath
except ImportError:  # pragma: no cover - depends on the environment
    _fastpath = None
from .maps import MapTopology, Route, RouteSegment, RoadOption, sample_spawn_candidates
from .maps import build_route as _build_route

END_STOP_MARGIN = 2.0   # virtual stop point this far past the route end
BLOCKED_GAP = {"LaneChange": 20.0, "AggressiveOvertake": 30.0}


class SpawnMode(Enum):
    ROUTE_BASED = "RouteBased"
    TRIGGER_BASED = "TriggerBased"
    MIXED = "Mixed"


class BehaviorMode(Enum):
    NORMAL = "Normal"
    LANE_CHANGE = "LaneChange"
    AGGRESSIVE_OVERTAKE = "AggressiveOvertake"
    EMERGENCY_STOP = "EmergencyStop"
    IGNORE_SAFE_DISTANCE = "IgnoreSafeDistance"

    @property
    def is_dangerous(self) -> bool:
        return self is not BehaviorMode.NORMAL


DANGEROUS_MODES = (
    BehaviorMode.LANE_CHANGE,
    BehaviorMode.AGGRESSIVE_OVERTAKE,
    BehaviorMode.EMERGENCY_STOP,
    BehaviorMode.IGNORE_SAFE_DISTANCE,
)


def _default_mix():
    return {mode.value: 0.25 for mode in DANGEROUS_MODES}


@dataclass(slots=True)
class WorldConfig:
    """Scene setup: spawn counts, behavior mix, and the master seed."""

    max_agents: int = 8
    spawn_mode: SpawnMode = SpawnMode.ROUTE_BASED
    behavior_mix: dict = field(default_factory=_default_mix)
    dangerous_fraction: float = 0.0
    seed: int = 0
    min_route_length: float = 30.0
    spawn_exclusion_radius: float = 10.0
    t_max: int = 600

    def __post_init__(self):
        if isinstance(self.spawn_mode, str):
            self.spawn_mode = SpawnMode(self.spawn_mode)
        if self.max_agents < 0:
            raise ValueError("max_agents must be >= 0")
        if not 0.0 <= self.dangerous_fraction <= 1.0:
            raise ValueError("dangerous_fraction must be in [0, 1]")
        total = sum(self.behavior_mix.values())
        if self.behavior_mix and abs(total - 1.0) > 1e-9:
            raise ValueError(f"behavior_mix fractions must sum to 1, got {total}")
        for key in self.behavior_mix:
            BehaviorMode(key)  # raises on unknown mode names

    def to_dict(self) -> dict:
        return {
            "max_agents": self.max_agents,
            "spawn_mode": self.spawn_mode.value,
            "behavior_mix": dict(self.behavior_mix),
            "dangerous_fraction": self.dangerous_fraction,
            "seed": self.seed,
            "min_route_length": self.min_route_length,
            "spawn_exclusion_radius": self.spawn_exclusion_radius,
            "t_max": self.t_max,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "WorldConfig":
        kwargs = dict(raw)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(kwargs) - known
        if unknown:
            raise ValueError(f"unknown world config fields: {sorted(unknown)}")
        return cls(**kwargs)


@dataclass(slots=True)
class BehaviorState:
    mode: BehaviorMode
    target_speed: float
    route: Route
    route_progress: float = 0.0
    active: bool = True
    lane_change_used: bool = False


@dataclass(slots=True)
class AgentRecord:
    id: str
    state: VehicleState
    behavior: BehaviorState
    trigger: float | None = None

    def copy(self) -> "AgentRecord":
        return AgentRecord(
            id=self.id,
            state=self.state.copy(),
            behavior=replace(self.behavior),
            trigger=self.trigger,
        )


def _walk_route(m: MapTopology, lane_id: str, s: float, rng, target_len: float,
                first_hop: str | None = None, max_lanes: int = 12) -> Route:
    """Route from (lane, s) following successor links until long enough."""
    seq = [lane_id]
    cur = m.lanes[lane_id]
    total = cur.length - s
    while total < target_len and len(seq) < max_lanes:
        succs = cur.successors
        if not succs:
            break
        if first_hop is not None and len(seq) == 1:
            nxt = first_hop
        elif len(succs) == 1:
            nxt = succs[0]
        else:
            nxt = succs[int(rng.integers(len(succs)))]
        if nxt in seq:
            break
        seq.append(nxt)
        cur = m.lanes[nxt]
        total += cur.length
    return _build_route(m, seq, s, m.lanes[seq[-1]].length)


def _assign_behavior(route: Route, config: WorldConfig, rng, speed_limit: float,
                     active: bool = True) -> BehaviorState:
    if config.behavior_mix and rng.random() < config.dangerous_fraction:
        names = sorted(config.behavior_mix)
        weights = np.array([config.behavior_mix[n] for n in names])
        kind = names[int(rng.choice(len(names), p=weights / weights.sum()))]
        mode = BehaviorMode(kind)
        target = float(rng.uniform(1.0, defaults.SPEED_CAP_FACTOR)) * speed_limit
    else:
        mode = BehaviorMode.NORMAL
        target = float(rng.uniform(0.7, 1.0)) * speed_limit
    return BehaviorState(mode=mode, target_speed=target, route=route, active=active)


def spawn_route_based(m: MapTopology, ego_route: Route, config: WorldConfig, rng) -> list[AgentRecord]:
    """Place active agents, preferring spawn points whose routes cross the ego's.

    Candidates are scored by route intersection with the ego route plus
    inverse distance to it; placement is greedy with an exclusion radius.
    """
    if config.max_agents == 0:
        return []
    candidates = sample_spawn_candidates(m, defaults.SPAWN_SPACING)
    ego_start = ego_route.xy[0]
    scored = []
    for lid, s in candidates:
        lane = m.lanes[lid]
        pt = lane.point_at(s)
        if math.hypot(pt.x - ego_start[0], pt.y - ego_start[1]) < config.spawn_exclusion_radius:
            continue
        d = float(np.min(np.hypot(ego_route.xy[:, 0] - pt.x, ego_route.xy[:, 1] - pt.y)))
        best_route, best_score = None, -math.inf
        for _ in range(3):
            route = _walk_route(m, lid, s, rng, config.min_route_length + 80.0)
            if route.length < config.min_route_length:
                continue
            crosses = segments_intersect_any(route.xy, ego_route.xy)
            score = (1000.0 if crosses else 0.0) + 1.0 / (1.0 + d)
            if score > best_score:
                best_score, best_route = score, route
        if best_route is not None:
            scored.append((best_score, lid, s, pt, best_route, lane.speed_limit))
    scored.sort(key=lambda e: (-e[0], e[1], e[2]))

    placed = []
    positions = []
    for score, lid, s, pt, route, limit in scored:
        if len(placed) >= config.max_agents:
            break
        if any(math.hypot(pt.x - px, pt.y - py) < config.spawn_exclusion_radius for px, py in positions):
            continue
        state = VehicleState(x=pt.x, y=pt.y, phi=pt.heading, v=float(rng.uniform(0.4, 0.8)) * limit)
        behavior = _assign_behavior(route, config, rng, limit, active=True)
        placed.append(AgentRecord(id=f"agent-{len(placed):03d}", state=state, behavior=behavior))
        positions.append((pt.x, pt.y))
    return placed


def _lane_endpoints(m: MapTopology, lane_ids) -> list[tuple[str, float]]:
    out = []
    for lid in sorted(lane_ids):
        out.append((lid, 0.0))
        out.append((lid, m.lanes[lid].length))
    return out


def spawn_trigger_based(m: MapTopology, ego_route: Route, config: WorldConfig, rng) -> list[AgentRecord]:
    """Pre-place inactive agents that activate when the ego passes a trigger.

    Trigger arclengths are sampled on the ego route with a 3:1 weight for
    points near a junction and always precede the route's junction entry.
    Spawn candidates are the nearest junction's lane endpoints (or nearby
    lanes when the map has no junction); each candidate offers one route per
    successor branch and the route crossing the ego's remaining path most
    often wins.
    """
    if config.max_agents == 0:
        return []
    wp_s = ego_route.cum_s
    entry_s = None
    for seg in ego_route.segments:
        if m.lanes[seg.lane_id].is_junction:
            entry_s = seg.s_start
            break
    valid = wp_s >= 5.0
    if entry_s is not None:
        valid &= wp_s <= max(entry_s - 5.0, 5.0)
    idx = np.flatnonzero(valid)
    if len(idx) == 0:
        idx = np.arange(len(wp_s))
    weights = np.ones(len(idx))
    if m.junctions:
        for k, i in enumerate(idx):
            d = m.junction_distance(ego_route.xy[i, 0], ego_route.xy[i, 1])
            if d <= defaults.TRIGGER_JUNCTION_RADIUS:
                weights[k] = defaults.TRIGGER_JUNCTION_WEIGHT
    n = min(config.max_agents, len(idx))
    chosen = rng.choice(idx, size=n, replace=False, p=weights / weights.sum())

    placed = []
    positions = []
    for trig_i in np.atleast_1d(chosen):
        trigger_s = float(wp_s[trig_i])
        tx, ty = ego_route.xy[trig_i]
        if m.junctions:
            junction = min(
                m.junctions,
                key=lambda j: math.hypot(j.centroid[0] - tx, j.centroid[1] - ty),
            )
            endpoints = _lane_endpoints(m, junction.lane_ids)
        else:
            near = [
                lid
                for lid in sorted(m.lanes)
                if float(np.min(np.hypot(m.lanes[lid].xy[:, 0] - tx, m.lanes[lid].xy[:, 1] - ty)))
                <= defaults.TRIGGER_JUNCTION_RADIUS
            ]
            endpoints = _lane_endpoints(m, near)
        ego_ahead = ego_route.slice_xy(trigger_s, ego_route.length)

        best = None  # (crossings, endpoint, route, limit)
        for lid, s in endpoints:
            lane = m.lanes[lid]
            branches: list[str | None] = [None]
            if s >= lane.length - 1e-9 and lane.successors:
                branches = list(lane.successors)
            for branch in branches:
                if s >= lane.length - 1e-9 and branch is not None:
                    route = _walk_route(m, branch, 0.0, rng, config.min_route_length + 60.0)
                else:
                    route = _walk_route(m, lid, s, rng, config.min_route_length + 60.0, first_hop=branch)
                if route.length < config.min_route_length:
                    continue
                crossings = count_segment_crossings(route.xy, ego_ahead)
                if best is None or crossings > best[0]:
                    best = (crossings, (lid, s), route, lane.speed_limit)
        if best is None:
            continue
        _, (lid, s), route, limit = best
        pt = m.lanes[lid].point_at(s)
        start = route.point_at(0.0)
        px, py, heading = start
        if any(math.hypot(px - qx, py - qy) < config.spawn_exclusion_radius for qx, qy in positions):
            continue
        state = VehicleState(x=px, y=py, phi=heading, v=0.0)
        behavior = _assign_behavior(route, config, rng, limit, active=False)
        placed.append(
            AgentRecord(id=f"agent-{len(placed):03d}", state=state, behavior=behavior, trigger=trigger_s)
        )
        positions.append((px, py))
    return placed


def spawn_agents(m: MapTopology, ego_route: Route, config: WorldConfig, rng) -> list[AgentRecord]:
    """Spawn per the configured mode; Mixed splits the budget in half."""
    if config.spawn_mode is SpawnMode.ROUTE_BASED:
        return spawn_route_based(m, ego_route, config, rng)
    if config.spawn_mode is SpawnMode.TRIGGER_BASED:
        return spawn_trigger_based(m, ego_route, config, rng)
    half = replace_max(config, config.max_agents - config.max_agents // 2)
    rest = replace_max(config, config.max_agents // 2)
    agents = spawn_route_based(m, ego_route, half, rng)
    extra = spawn_trigger_based(m, ego_route, rest, rng)
    for k, rec in enumerate(extra):
        rec.id = f"agent-{len(agents) + k:03d}"
    return agents + extra


def replace_max(config: WorldConfig, n: int) -> WorldConfig:
    return WorldConfig(
        max_agents=n,
        spawn_mode=config.spawn_mode,
        behavior_mix=dict(config.behavior_mix),
        dangerous_fraction=config.dangerous_fraction,
        seed=config.seed,
        min_route_length=config.min_route_length,
        spawn_exclusion_radius=config.spawn_exclusion_radius,
        t_max=config.t_max,
    )


class SceneController:
    """Persistent vectorized stepper over one scene's agents.

    Route polylines are packed once into padded arrays; `step` advances all
    active agents one tick with numpy-only math (no allocation-heavy record
    churn), and `sync_records` materializes the AgentRecord view.
    """

    def __init__(self, m: MapTopology, agents: list[AgentRecord], dt: float = 0.1):
        self.map = m
        self.dt = dt
        self.agents = list(agents)
        self._pack()

    # -- array packing ----------------------------------------------------

    def _pack(self):
        n = len(self.agents)
        self.n = n
        if n == 0:
            return
        self.x = np.array([a.state.x for a in self.agents])
        self.y = np.array([a.state.y for a in self.agents])
        self.phi = np.array([a.state.phi for a in self.agents])
        self.v = np.array([a.state.v for a in self.agents])
        self.l_f = np.array([a.state.l_f for a in self.agents])
        self.l_r = np.array([a.state.l_r for a in self.agents])
        self.half_len = np.array([a.state.length / 2.0 for a in self.agents])
        self.target = np.array([a.behavior.target_speed for a in self.agents])
        self.progress = np.array([a.behavior.route_progress for a in self.agents])
        self.active = np.array([a.behavior.active for a in self.agents])
        self.finished = np.zeros(n, dtype=bool)
        self.trigger = np.array(
            [a.trigger if a.trigger is not None else np.inf for a in self.agents]
        )
        modes = [a.behavior.mode for a in self.agents]
        self.is_normal = np.array([m is BehaviorMode.NORMAL for m in modes])
        self.is_estop = np.array([m is BehaviorMode.EMERGENCY_STOP for m in modes])
        self.is_overtake = np.array([m is BehaviorMode.AGGRESSIVE_OVERTAKE for m in modes])
        self.wants_change = np.array(
            [m in (BehaviorMode.LANE_CHANGE, BehaviorMode.AGGRESSIVE_OVERTAKE) for m in modes]
        )
        reckless = np.array([m is BehaviorMode.IGNORE_SAFE_DISTANCE for m in modes])
        self.s0 = np.where(reckless, defaults.IGNORE_SAFE_DISTANCE_GAP, defaults.IDM_S0)
        self.t_head = np.where(reckless, 0.0, defaults.IDM_T_HEADWAY)
        self.change_used = np.array([a.behavior.lane_change_used for a in self.agents])
        self.beta_ratio = self.l_r / (self.l_f + self.l_r)
        self.two_wheelbase = 2.0 * (self.l_f + self.l_r)
        self.dt_over_lf = self.dt / self.l_f
        self.end_margin = END_STOP_MARGIN - self.half_len
        self._has_estop = bool(self.is_estop.any())
        self._has_change = bool(self.wants_change.any())
        self._all_normal = bool(self.is_normal.all())
        self._has_triggers = bool(np.isfinite(self.trigger).any())
        # scratch buffers for the world snapshot (agents + ego)
        self._bpos = np.empty(n + 1, dtype=complex)
        self._bv = np.empty(n + 1)
        self._bhl = np.empty(n + 1)
        self._ar = np.arange(n)
        self._out = [np.empty(n) for _ in range(8)]
        self._out_ending = np.empty(n, dtype=np.bool_)
        if _fastpath is not None:
            self._params = np.array([
                self.dt,
                defaults.LEADER_RANGE,
                defaults.CORRIDOR_HALF_WIDTH,
                defaults.AGENT_LOOKAHEAD_MIN,
                defaults.AGENT_LOOKAHEAD_TIME,
                1.0 / defaults.WAYPOINT_SPACING,
                defaults.SPEED_CAP_FACTOR,
                defaults.EMERGENCY_STOP_RANGE,
                defaults.EMERGENCY_BRAKE,
                defaults.IDM_A_MAX,
                defaults.IDM_B_COMF,
                DELTA_MAX,
                ACCEL_MAX,
            ])
        self._pack_routes()

    def _pack_routes(self):
        L = max(max(len(a.behavior.route.xy) for a in self.agents), 2)
        n = self.n
        self.wx = np.empty((n, L))
        self.wy = np.empty((n, L))
        self.wlimit = np.empty((n, L))
        self.route_len = np.empty(n)
        for i, a in enumerate(self.agents):
            self._pack_route_row(i, L)

    def _pack_route_row(self, i: int, L: int):
        route = self.agents[i].behavior.route
        k = len(route.xy)
        self.wx[i, :k] = route.xy[:, 0]
        self.wy[i, :k] = route.xy[:, 1]
        self.wlimit[i, :k] = route.speed_limits
        self.wx[i, k:] = route.xy[-1, 0]
        self.wy[i, k:] = route.xy[-1, 1]
        self.wlimit[i, k:] = route.speed_limits[-1]
        self.route_len[i] = route.length

    # -- stepping ----------------------------------------------------------

    def step(self, ego: VehicleState, ego_progress: float, tick: int) -> None:
        if self.n == 0:
            return
        if self._has_triggers:
            newly = (~self.active) & (~self.finished) & (self.trigger <= ego_progress)
            if newly.any():
                self.active |= newly
                if self.active.all():
                    self._has_triggers = False
        n = self.n
        if self.active.all():
            act = slice(None)  # views, no gather/scatter copies
            k = n
        else:
            act = np.flatnonzero(self.active)
            k = len(act)
            if k == 0:
                return
        ax, ay = self.x[act], self.y[act]
        aphi, av = self.phi[act], self.v[act]
        ahl = self.half_len[act]
        prog = self.progress[act]

        if _fastpath is not None:
            ox, oy, ophi, ov, oprog, ogap, olead_v, ov0 = (b[:k] for b in self._out)
            oending = self._out_ending[:k]
            rows = self._ar if k == n else act
            _fastpath.step_kernel(
                ax, ay, aphi, av, ahl, self.target[act], prog,
                self.s0[act], self.t_head[act], self.is_normal[act], self.is_estop[act],
                self.beta_ratio[act], self.two_wheelbase[act], self.dt_over_lf[act],
                self.end_margin[act], self.route_len[act],
                self.wx, self.wy, self.wlimit, rows,
                ego.x, ego.y, ego.v, ego.length / 2.0, self._params,
                ox, oy, ophi, ov, oprog, ogap, olead_v, ov0, oending,
            )
            x_next, y_next, phi_next, v_next, prog_next = ox, oy, ophi, ov, oprog
            gap, lead_v, v0, ending = ogap, olead_v, ov0, oending
        else:
            (x_next, y_next, phi_next, v_next, prog_next,
             gap, lead_v, v0, ending) = self._step_numpy(ego, act, k, ax, ay, aphi, av, ahl, prog)

        if k == n:
            self.x = x_next.copy()
            self.y = y_next.copy()
            self.phi = phi_next.copy()
            self.v = v_next.copy()
            self.progress = prog_next.copy()
        else:
            self.x[act] = x_next
            self.y[act] = y_next
            self.phi[act] = phi_next
            self.v[act] = v_next
            self.progress[act] = prog_next

        # agents that stopped at their route end leave the scene: a parked
        # carcass would otherwise block traffic forever. The IDM standstill
        # position sits about half_len + s0 before the end, hence the margin.
        done = (
            self.active
            & (self.progress >= self.route_len - self.half_len - 2.5)
            & (self.v < 0.3)
        )
        if done.any():
            self.active &= ~done
            self.finished |= done

        # forced lane changes when blocked: evaluated from this tick's leader
        # picture, rerouting takes effect next tick (rare per-agent events)
        if self._has_change:
            wants = self.wants_change[act]
            if wants.any():
                thresh = np.where(
                    self.is_overtake[act], BLOCKED_GAP["AggressiveOvertake"], BLOCKED_GAP["LaneChange"]
                )
                blocked = (
                    wants & ~self.change_used[act] & (gap < thresh) & (lead_v < 0.8 * v0) & ~ending
                )
                if blocked.any():
                    for r in np.flatnonzero(blocked):
                        self._try_lane_change(int(r) if k == n else int(act[r]))

    def _step_numpy(self, ego, act, k, ax, ay, aphi, av, ahl, prog):
        """Portable vectorized tick update (same semantics as the kernel)."""
        n = self.n
        dt = self.dt
        bpos = self._bpos[: k + 1]
        bv, bhl = self._bv[: k + 1], self._bhl[: k + 1]
        bpos.real[:k] = ax
        bpos.imag[:k] = ay
        bv[:k] = av
        bhl[:k] = ahl
        bpos.real[k] = ego.x
        bpos.imag[k] = ego.y
        bv[k] = ego.v
        bhl[k] = ego.length / 2.0

        # rotate relative positions into each agent's body frame in one
        # complex multiply: real = forward, imag = left
        cos_a = np.cos(aphi)
        sin_a = np.sin(aphi)
        unit_conj = cos_a - 1j * sin_a
        rel = bpos[None, :] - bpos[:k, None]
        rel *= unit_conj[:, None]
        fwd = rel.real
        lat = rel.imag

        ar = self._ar[:k]
        valid = (fwd > 0.05) & (fwd < defaults.LEADER_RANGE)
        np.abs(lat, out=lat)
        valid &= lat < defaults.CORRIDOR_HALF_WIDTH
        valid[ar, ar] = False
        fwd_lead = np.where(valid, fwd, np.inf)
        jmin = fwd_lead.argmin(axis=1)
        lead_fwd = fwd_lead[ar, jmin]
        lead_v = bv[jmin]
        gap = np.maximum(lead_fwd - bhl[jmin] - ahl, 0.05)

        # the route end acts as a stopped obstacle slightly past the goal
        end_gap = np.maximum(self.route_len[act] - prog + self.end_margin[act], 0.05)
        ending = end_gap < gap
        lead_v = np.where(ending, 0.0, lead_v)
        gap = np.minimum(gap, end_gap)

        # per-mode speed target: normal agents respect the lane limit
        wp_idx = np.minimum(prog.astype(np.int32), self.wx.shape[1] - 1)
        row_idx = ar if k == n else act
        limit_here = self.wlimit[row_idx, wp_idx]
        v0 = np.minimum(self.target[act], limit_here)
        if not self._all_normal:
            v0 = np.where(self.is_normal[act], v0, self.target[act])

        a = idm_accel_array(av, v0, gap, lead_v, self.s0[act], self.t_head[act])

        # emergency stop: panic brake while the ego is close ahead
        if self._has_estop:
            fwd_ego = fwd[:, -1]
            panic = (
                self.is_estop[act]
                & (fwd_ego > 0.0)
                & (fwd_ego <= defaults.EMERGENCY_STOP_RANGE)
                & (lat[:, -1] < defaults.CORRIDOR_HALF_WIDTH)
            )
            if panic.any():
                a = np.where(panic, defaults.EMERGENCY_BRAKE, a)

        # steering: pure pursuit toward the route lookahead point, using the
        # scale-free form atan2(2 L * lateral, dist^2)
        look = np.maximum(defaults.AGENT_LOOKAHEAD_MIN, defaults.AGENT_LOOKAHEAD_TIME * av)
        look += prog
        if defaults.WAYPOINT_SPACING != 1.0:
            look *= 1.0 / defaults.WAYPOINT_SPACING
        tgt_idx = np.minimum(look.astype(np.int32), self.wx.shape[1] - 1)
        tx = self.wx[row_idx, tgt_idx]
        ty = self.wy[row_idx, tgt_idx]
        tx -= ax
        ty -= ay
        lat_t = cos_a * ty - sin_a * tx
        d2 = tx * tx + ty * ty
        delta = np.arctan2(self.two_wheelbase[act] * lat_t, np.maximum(d2, 1e-9))
        np.clip(delta, -DELTA_MAX, DELTA_MAX, out=delta)

        # advance with the bicycle model (adaptive weights are ego-only)
        beta = np.arctan(self.beta_ratio[act] * np.tan(delta))
        v_next = np.clip(av + a * dt, 0.0, defaults.SPEED_CAP_FACTOR * limit_here)
        heading = aphi + np.sin(beta) * (av * self.dt_over_lf[act])
        phi_next = np.mod(heading + np.pi, 2.0 * np.pi)
        phi_next = np.where(phi_next == 0.0, 2.0 * np.pi, phi_next) - np.pi
        move = av * dt
        beta += aphi
        x_next = ax + move * np.cos(beta)
        y_next = ay + move * np.sin(beta)
        prog_next = np.minimum(prog + move, self.route_len[act])
        return x_next, y_next, phi_next, v_next, prog_next, gap, lead_v, v0, ending

    def _current_lane(self, i: int) -> str | None:
        route = self.agents[i].behavior.route
        s = self.progress[i]
        for seg in route.segments:
            if seg.s_start - 1e-6 <= s <= seg.s_end + 1e-6 and seg.s_end > seg.s_start:
                return seg.lane_id
        return route.segments[-1].lane_id if route.segments else None

    def _try_lane_change(self, i: int) -> None:
        lane_id = self._current_lane(i)
        if lane_id is None:
            return
        lane = self.map.lanes[lane_id]
        for side, neighbor in (("left", lane.left_neighbor), ("right", lane.right_neighbor)):
            if neighbor is None:
                continue
            new_route = _blend_route(self.map, self.x[i], self.y[i], self.v[i], neighbor, side)
            if new_route is None:
                continue
            rec = self.agents[i]
            rec.behavior.route = new_route
            rec.behavior.lane_change_used = True
            self.change_used[i] = True
            self.progress[i] = 0.0
            if len(new_route.xy) > self.wx.shape[1]:
                self._grow_pad(len(new_route.xy))
            self._pack_route_row(i, self.wx.shape[1])
            return

    def _grow_pad(self, new_len: int):
        L = self.wx.shape[1]
        pad = new_len - L
        self.wx = np.pad(self.wx, ((0, 0), (0, pad)), mode="edge")
        self.wy = np.pad(self.wy, ((0, 0), (0, pad)), mode="edge")
        self.wlimit = np.pad(self.wlimit, ((0, 0), (0, pad)), mode="edge")

    def sync_records(self) -> list[AgentRecord]:
        for i, rec in enumerate(self.agents):
            if self.finished[i]:
                rec.behavior.active = False
                continue
            if not self.active[i]:
                continue
            st = rec.state
            st.x = float(self.x[i])
            st.y = float(self.y[i])
            st.phi = float(self.phi[i])
            st.v = float(self.v[i])
            rec.behavior.route_progress = float(self.progress[i])
            rec.behavior.active = True
        return self.agents


def _blend_route(m: MapTopology, x: float, y: float, v: float, neighbor_id: str, side: str):
    """Route that eases laterally onto a neighbor lane, then follows it.

    The lateral offset decays along a smoothstep over the blend distance
    (duration * speed), producing the s-shaped merge path.
    """
    nb = m.lanes[neighbor_id]
    s_nb, lat0, _ = nb.project(x, y)
    blend = max(5.0, defaults.LANE_CHANGE_DURATION * max(v, 1.0))
    end_s = min(s_nb + blend, nb.length)
    if end_s - s_nb < 2.0:
        return None
    ts = np.linspace(0.0, 1.0, max(int(end_s - s_nb), 4) + 1)
    pts = []
    for t in ts:
        s = s_nb + t * (end_s - s_nb)
        p = nb.point_at(s)
        fade = 1.0 - (3.0 * t * t - 2.0 * t * t * t)  # smoothstep ease-out
        ox = -math.sin(p.heading) * lat0 * fade
        oy = math.cos(p.heading) * lat0 * fade
        pts.append((p.x + ox, p.y + oy))
    pieces = [np.array(pts)]
    seq = [neighbor_id]
    # continue along the neighbor and its successor chain
    if nb.length - end_s > 1.0:
        pieces.append(nb.slice_xy(end_s, nb.length))
    cur = nb
    total = nb.length - s_nb
    while total < 120.0 and cur.successors:
        nxt = sorted(cur.successors)[0]
        if nxt in seq:
            break
        seq.append(nxt)
        cur = m.lanes[nxt]
        pieces.append(cur.xy)
        total += cur.length
    poly = np.vstack(pieces)
    keep = np.ones(len(poly), dtype=bool)
    keep[1:] = np.hypot(np.diff(poly[:, 0]), np.diff(poly[:, 1])) > 1e-9
    poly = poly[keep]
    waypoints = resample_polyline(poly, defaults.WAYPOINT_SPACING)
    wp_s = polyline_lengths(waypoints)
    option = RoadOption.LANE_CHANGE_LEFT if side == "left" else RoadOption.LANE_CHANGE_RIGHT
    segments = [RouteSegment(lane_id=neighbor_id, option=option, s_start=0.0, s_end=float(wp_s[-1]))]
    limits = np.full(len(waypoints), nb.speed_limit)
    return Route(seq, waypoints, [option] + [RoadOption.FOLLOW] * (len(seq) - 1), segments, limits)


def controller_step(ego: VehicleState, agents: list[AgentRecord], m: MapTopology,
                    tick: int, ego_progress: float = 0.0, dt: float = 0.1) -> list[AgentRecord]:
    """One-shot functional tick update: returns updated copies of the agents.

    The engine keeps a persistent SceneController instead; this wrapper
    offers the same update as a pure function of its inputs.
    """
    ctl = SceneController(m, [a.copy() for a in agents], dt=dt)
    ctl.step(ego, ego_progress, tick)
    return ctl.sync_records()

"""Episode engine: the 10 Hz tick loop binding controller, planner,
kinematics, renderer and metrics into driving logs.

Per tick: agents update from the tick-t snapshot, the planner produces the
ego action (the privileged expert every tick in SYN mode; the external
planner at render ticks in CL mode with the action held in between), the
adaptive kinematic model advances the ego, and collision flags are
recorded. Observations render every controller_hz/render_hz ticks starting
at tick 0. Episodes end on goal arrival, vehicle collision, stall, or the
tick budget.
"""

import hashlib
import json
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .bev import CameraConfig, render_frame, save_frame
from .control import leader_in_corridor
from .controller import SceneController, WorldConfig, spawn_agents
from .ground import GroundModel
from .kinematics import ControlAction, KinematicParams, VehicleState, akm_step
from .maps import MapTopology, load_map, plan_route
from .metrics import (
    EpisodeResult,
    MetricsReport,
    PlannedTrajectory,
    compute_rates,
    ego_speed_alteration,
    interaction_indicator,
    layout_collision,
    obb_collision,
)
from .planners import ConstantVelocityPlanner, ExpertPlanner, PlannerInput, Privileged, derive_command


class ConfigError(ValueError):
    """Invalid simulation configuration."""


class EngineError(RuntimeError):
    """Episode could not run to a regular termination."""


@dataclass(slots=True)
class EgoSpec:
    start_lane: str
    start_s: float
    goal_lane: str
    goal_s: float
    initial_speed: float = 8.0
    target_speed: float | None = None
    l_f: float = 1.5
    l_r: float = 1.5
    width: float = 2.0
    length: float = 4.5


@dataclass(slots=True)
class TimeoutRule:
    stall_ticks: int = 150
    stall_speed: float = 0.1
    stall_leader_radius: float = 10.0


@dataclass(slots=True)
class SimConfig:
    name: str
    mode: str                  # "SYN" or "CL"
    map_path: str
    ego: EgoSpec
    world: WorldConfig = field(default_factory=WorldConfig)
    kinematics: KinematicParams = field(default_factory=KinematicParams)
    cameras: list = field(default_factory=lambda: [CameraConfig(id="front")])
    controller_hz: int = 10
    render_hz: int = 2
    timeout: TimeoutRule = field(default_factory=TimeoutRule)
    ground_model_path: str | None = None
    frame_encoding: str = "reference"

    def __post_init__(self):
        if self.mode not in ("SYN", "CL"):
            raise ConfigError(f"mode must be SYN or CL, got {self.mode!r}")
        if self.controller_hz <= 0 or self.render_hz <= 0:
            raise ConfigError("update frequencies must be positive")
        if self.controller_hz % self.render_hz != 0:
            raise ConfigError("controller_hz must be divisible by render_hz")
        if not self.cameras:
            raise ConfigError("at least one camera is required")
        ids = [c.id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ConfigError("camera ids must be unique")
        if abs(self.kinematics.dt * self.controller_hz - 1.0) > 1e-9:
            raise ConfigError("kinematics.dt must equal 1 / controller_hz")
        if self.frame_encoding not in ("reference", "inline"):
            raise ConfigError("frame_encoding must be 'reference' or 'inline'")

    @property
    def render_every(self) -> int:
        return self.controller_hz // self.render_hz

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mode": self.mode,
            "map_path": str(self.map_path),
            "ego": asdict(self.ego),
            "world": self.world.to_dict(),
            "kinematics": {"dt": self.kinematics.dt, "u1": self.kinematics.u1, "u2": self.kinematics.u2},
            "cameras": [c.to_dict() for c in self.cameras],
            "controller_hz": self.controller_hz,
            "render_hz": self.render_hz,
            "timeout": asdict(self.timeout),
            "ground_model_path": self.ground_model_path,
            "frame_encoding": self.frame_encoding,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        try:
            return cls(
                name=raw["name"],
                mode=raw["mode"],
                map_path=raw["map_path"],
                ego=EgoSpec(**raw["ego"]),
                world=WorldConfig.from_dict(raw.get("world", {})),
                kinematics=KinematicParams(**raw.get("kinematics", {})),
                cameras=[CameraConfig.from_dict(c) for c in raw.get("cameras", [{"id": "front"}])],
                controller_hz=raw.get("controller_hz", 10),
                render_hz=raw.get("render_hz", 2),
                timeout=TimeoutRule(**raw.get("timeout", {})),
                ground_model_path=raw.get("ground_model_path"),
                frame_encoding=raw.get("frame_encoding", "reference"),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"bad simulation config: {e}") from e


def load_configs(path) -> list[SimConfig]:
    """Read a config file holding one episode object or {"episodes": [...]}."""
    with open(path) as fh:
        raw = json.load(fh)
    if isinstance(raw, dict) and "episodes" in raw:
        return [SimConfig.from_dict(entry) for entry in raw["episodes"]]
    return [SimConfig.from_dict(raw)]


def config_hash(config: SimConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass(slots=True)
class DrivingLog:
    config: SimConfig
    records: list            # one dict per tick, tick 0 = initial state
    frames: list             # ObservationFrame at render ticks
    result: EpisodeResult
    metrics: MetricsReport
    interactions_any: bool

    @property
    def ticks(self) -> int:
        """Controller update count (the initial record is tick 0)."""
        return len(self.records) - 1

    def write(self, out_dir) -> None:
        from pathlib import Path

        out = Path(out_dir)
        (out / "frames").mkdir(parents=True, exist_ok=True)
        with open(out / "states.jsonl", "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True))
                fh.write("\n")
        for frame in self.frames:
            if frame.path is None:
                save_frame(
                    frame,
                    out / "frames" / f"{frame.tick:05d}.pgm",
                    out / "frames" / f"{frame.tick:05d}.json",
                )
        with open(out / "config.json", "w") as fh:
            json.dump(self.config.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")
        with open(out / "metrics.json", "w") as fh:
            json.dump(self.metrics_payload(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    def metrics_payload(self) -> dict:
        return {
            "ticks": self.result.ticks,
            "timed_out": self.result.timed_out,
            "completed": self.result.completed,
            "vehicle_collision_flags": [bool(f) for f in self.result.vehicle_collision_flags],
            "layout_collision_flags": [bool(f) for f in self.result.layout_collision_flags],
            "interactions_any": self.interactions_any,
            "rates": self.metrics.to_dict(),
        }


def _state_dict(s: VehicleState) -> dict:
    return {"x": s.x, "y": s.y, "phi": s.phi, "v": s.v}


def _agents_snapshot(agents) -> list:
    out = []
    for rec in agents:
        out.append(
            {
                "id": rec.id,
                "x": rec.state.x,
                "y": rec.state.y,
                "phi": rec.state.phi,
                "v": rec.state.v,
                "mode": rec.behavior.mode.value,
                "active": rec.behavior.active,
                "progress": rec.behavior.route_progress,
            }
        )
    return out


def run_episode(config: SimConfig, planner=None, m: MapTopology | None = None,
                frames_dir=None) -> DrivingLog:
    """Run one episode and return its full log.

    SYN mode drives with the privileged expert; CL mode queries `planner`
    (default: the built-in constant-velocity test planner) at render ticks
    and holds the action in between.
    """
    if m is None:
        m = load_map(config.map_path)
    ego_spec = config.ego
    route = plan_route((ego_spec.start_lane, ego_spec.start_s),
                       (ego_spec.goal_lane, ego_spec.goal_s), m)
    x0, y0, h0 = route.point_at(0.0)
    ego = VehicleState(x=x0, y=y0, phi=h0, v=ego_spec.initial_speed,
                       l_f=ego_spec.l_f, l_r=ego_spec.l_r,
                       width=ego_spec.width, length=ego_spec.length)
    rng = np.random.default_rng(config.world.seed)
    agents = spawn_agents(m, route, config.world, rng)
    controller = SceneController(m, agents, dt=config.kinematics.dt)
    ground = GroundModel.load(config.ground_model_path) if config.ground_model_path else None
    expert = ExpertPlanner(route, ego_spec.target_speed) if config.mode == "SYN" else None
    if config.mode == "CL" and planner is None:
        planner = ConstantVelocityPlanner()
    v_max = max(ego_spec.initial_speed, float(route.speed_limits.max()))
    goal_x, goal_y, _ = route.point_at(route.length)
    render_every = config.render_every
    dt = config.kinematics.dt

    records = []
    frames = []
    interactions_any = False
    ego_progress = 0.0
    held = ControlAction(0.0, 0.0)
    completed = False
    timed_out = False
    collided = False
    stall_count = 0

    first = {"tick": 0, "ego": _state_dict(ego), "action": None,
             "command": derive_command(route, 0.0).value,
             "agents": _agents_snapshot(agents),
             "col_vehicle": False, "col_layout": bool(layout_collision(ego, m))}
    records.append(first)

    t = 0
    while t < config.world.t_max:
        if t % render_every == 0:
            agents_now = controller.sync_records()
            frame = render_frame(ego, agents_now, m, config.cameras, ground=ground, tick=t)
            if frames_dir is not None:
                from pathlib import Path

                fdir = Path(frames_dir)
                fdir.mkdir(parents=True, exist_ok=True)
                save_frame(frame, fdir / f"{frame.tick:05d}.pgm", fdir / f"{frame.tick:05d}.json")
            frames.append(frame)
            inter = []
            for rec in agents_now:
                if not rec.behavior.active:
                    continue
                r = interaction_indicator(ego, route, rec, v_max, ego_progress=ego_progress)
                inter.append({"agent": rec.id, "detect": r.detect, "intersect": r.intersect})
                interactions_any = interactions_any or r.interaction
            records[-1]["frame"] = f"frames/{frame.tick:05d}.pgm"
            records[-1]["interactions"] = inter
            if config.mode == "CL":
                held = planner.plan(
                    PlannerInput(ego.copy(), derive_command(route, ego_progress), observations=[frame])
                ).clamped()

        controller.step(ego, ego_progress, t)
        agents_next = controller.sync_records()
        command = derive_command(route, ego_progress)
        if config.mode == "SYN":
            action = expert.plan(
                PlannerInput(ego, command, privileged=Privileged(agents_next, m))
            ).clamped()
        else:
            action = held
        ego = akm_step(ego, action, config.kinematics)
        s_proj, _ = route.project(ego.x, ego.y)
        ego_progress = max(ego_progress, s_proj)
        t += 1

        active = [a for a in agents_next if a.behavior.active]
        col_v = any(obb_collision(ego, a.state) for a in active)
        col_l = layout_collision(ego, m)
        records.append(
            {
                "tick": t,
                "ego": _state_dict(ego),
                "action": {"a": action.a, "delta": action.delta},
                "command": command.value,
                "agents": _agents_snapshot(agents_next),
                "col_vehicle": bool(col_v),
                "col_layout": bool(col_l),
            }
        )

        if col_v:
            collided = True
            break
        if math.hypot(ego.x - goal_x, ego.y - goal_y) <= 3.0:
            completed = True
            break
        if ego.v < config.timeout.stall_speed:
            if active:
                xy = np.array([[a.state.x, a.state.y] for a in active])
                vs = np.array([a.state.v for a in active])
                half = np.array([a.state.length / 2.0 for a in active])
                gap, _ = leader_in_corridor(
                    ego.x, ego.y, ego.phi, xy, vs, half, ego.length / 2.0,
                    max_range=config.timeout.stall_leader_radius,
                )
            else:
                gap = None
            stall_count = stall_count + 1 if gap is None else 0
            if stall_count >= config.timeout.stall_ticks:
                timed_out = True
                break
        else:
            stall_count = 0

    if not completed and not collided and not timed_out:
        timed_out = True

    result = EpisodeResult(
        vehicle_collision_flags=[r["col_vehicle"] for r in records[1:]],
        layout_collision_flags=[r["col_layout"] for r in records[1:]],
        timed_out=timed_out,
        completed=completed,
    )
    metrics = compute_rates([result])
    metrics.interaction_rate = 1.0 if interactions_any else 0.0
    metrics.speed_alteration_histogram = speed_alteration_histogram(records, render_every)
    return DrivingLog(config=config, records=records, frames=frames, result=result,
                      metrics=metrics, interactions_any=interactions_any)


def speed_alteration_histogram(records, render_every: int) -> list[int]:
    """Histogram of trend-switch counts over 6-step render-tick horizons."""
    positions = [
        (rec["ego"]["x"], rec["ego"]["y"])
        for rec in records
        if rec["tick"] % render_every == 0
    ]
    hist = [0] * 5
    for k in range(len(positions) - 6):
        window = positions[k : k + 7]
        offsets = tuple(
            (b[0] - a[0], b[1] - a[1]) for a, b in zip(window, window[1:])
        )
        hist[ego_speed_alteration(PlannedTrajectory(offsets))] += 1
    return hist


def _hash_tree(paths) -> str:
    h = hashlib.sha256()
    for path in sorted(paths):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def log_hash(episode_dir) -> str:
    from pathlib import Path

    root = Path(episode_dir)
    paths = [root / "states.jsonl", root / "metrics.json", root / "config.json"]
    paths.extend(sorted((root / "frames").glob("*")))
    return _hash_tree([p for p in paths if p.exists()])


def generate_dataset(configs, out_dir, planner=None) -> dict:
    """Run every config, write one episode directory each plus a manifest.

    Episodes that fail are recorded in the manifest and do not stop the
    batch. Reruns with identical configs reproduce byte-identical logs;
    the manifest's generated_at field is excluded from all hashes.
    """
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for config in configs:
        episode_dir = out / config.name
        entry = {"name": config.name, "seed": config.world.seed, "config_hash": config_hash(config)}
        try:
            log = run_episode(config, planner=planner)
            episode_dir.mkdir(parents=True, exist_ok=True)
            log.write(episode_dir)
            entry.update(
                status="ok",
                ticks=log.ticks,
                frames=len(log.frames),
                completed=log.result.completed,
                log_hash=log_hash(episode_dir),
            )
        except Exception as e:  # per-episode failure policy: record and continue
            entry.update(status="error", error=f"{type(e).__name__}: {e}")
        entries.append(entry)
    manifest = {
        "episodes": entries,
        "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest


def read_episode_metrics(episode_dir) -> tuple[EpisodeResult, bool, list[int]]:
    """Rebuild an EpisodeResult (plus interaction flag and speed histogram)
    from a stored log directory, recomputing from states.jsonl."""
    from pathlib import Path

    root = Path(episode_dir)
    records = []
    with open(root / "states.jsonl") as fh:
        for line in fh:
            records.append(json.loads(line))
    with open(root / "config.json") as fh:
        cfg = json.load(fh)
    with open(root / "metrics.json") as fh:
        stored = json.load(fh)
    render_every = cfg["controller_hz"] // cfg["render_hz"]
    result = EpisodeResult(
        vehicle_collision_flags=[r["col_vehicle"] for r in records[1:]],
        layout_collision_flags=[r["col_layout"] for r in records[1:]],
        timed_out=bool(stored["timed_out"]),
        completed=bool(stored["completed"]),
    )
    interactions_any = any(
        rec["detect"] and rec["intersect"]
        for r in records
        for rec in r.get("interactions", [])
    )
    hist = speed_alteration_histogram(records, render_every)
    return result, interactions_any, hist


def recompute_metrics(episode_dirs) -> MetricsReport:
    """Aggregate MetricsReport across stored episode directories."""
    results = []
    any_flags = []
    hist = [0] * 5
    for d in episode_dirs:
        result, inter_any, h = read_episode_metrics(d)
        results.append(result)
        any_flags.append(inter_any)
        hist = [a + b for a, b in zip(hist, h)]
    report = compute_rates(results)
    report.interaction_rate = sum(any_flags) / len(any_flags)
    report.speed_alteration_histogram = hist
    return report


# -- bench helpers -----------------------------------------------------------


def bench_controller(n_agents: int = 50, ticks: int = 2000) -> float:
    """Ticks/s of the persistent controller step + ego kinematic update."""
    from . import mapgen
    from .controller import AgentRecord, BehaviorMode, BehaviorState

    spec = mapgen.parallel_two_lane(length=5000.0, speed_limit=12.0)
    m = mapgen.build(spec)
    agents = []
    for k in range(n_agents):
        lane_id = "A" if k % 2 == 0 else "B"
        s = 5.0 + 90.0 * (k // 2)
        lane = m.lanes[lane_id]
        pt = lane.point_at(s)
        route = plan_route((lane_id, s), (lane_id, lane.length), m)
        agents.append(
            AgentRecord(
                id=f"agent-{k:03d}",
                state=VehicleState(x=pt.x, y=pt.y, phi=pt.heading, v=8.0),
                behavior=BehaviorState(mode=BehaviorMode.NORMAL, target_speed=10.0, route=route),
            )
        )
    controller = SceneController(m, agents)
    ego = VehicleState(x=0.0, y=0.0, phi=0.0, v=10.0)
    params = KinematicParams()
    action = ControlAction(0.1, 0.01)
    controller.step(ego, 0.0, 0)  # warm up (JIT compile, allocator)
    t0 = time.perf_counter()
    for t in range(ticks):
        controller.step(ego, t * 1.0, t)
        ego = akm_step(ego, action, params)
    elapsed = time.perf_counter() - t0
    return ticks / elapsed


def bench_render(frames: int = 50) -> float:
    """BEV frames/s on the intersection fixture with a five-camera rig."""
    from . import mapgen
    from .bev import get_raster
    from .controller import AgentRecord, BehaviorMode, BehaviorState

    m = mapgen.build(mapgen.four_way_intersection())
    get_raster(m)  # build the cache outside the timed loop
    cams = [CameraConfig(id=f"cam{i}", yaw=i * 1.2566370614359172) for i in range(5)]
    agents = []
    for k, (lid, s) in enumerate([("in_w", 20.0), ("in_e", 30.0), ("out_n", 10.0), ("in_n", 40.0)]):
        pt = m.lanes[lid].point_at(s)
        route = plan_route((lid, s), (lid, m.lanes[lid].length), m)
        agents.append(
            AgentRecord(
                id=f"a{k}",
                state=VehicleState(x=pt.x, y=pt.y, phi=pt.heading, v=5.0),
                behavior=BehaviorState(mode=BehaviorMode.NORMAL, target_speed=8.0, route=route),
            )
        )
    ego = VehicleState(x=1.75, y=-30.0, phi=1.5707963267948966, v=8.0)
    t0 = time.perf_counter()
    for i in range(frames):
        render_frame(ego, agents, m, cams, tick=i)
    elapsed = time.perf_counter() - t0
    return frames / elapsed

"""Acceptance suite: one test per release criterion, pinned tolerances.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS/FAIL line
per criterion.
"""

import json
import math
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

from drivesim import mapgen
from drivesim.controller import (
    AgentRecord,
    BehaviorMode,
    BehaviorState,
    SceneController,
    WorldConfig,
)
from drivesim.engine import (
    EgoSpec,
    SimConfig,
    bench_controller,
    bench_render,
    generate_dataset,
    run_episode,
)
from drivesim.ground import GroundModel, height_loss, ransac_ground, PointCloud
from drivesim.illumination import ImageGrid, estimate_light
from drivesim.kinematics import (
    ControlAction,
    ImuSample,
    KinematicParams,
    VehicleState,
    akm_step,
    bicycle_step,
    estimate_akm_params,
)
from drivesim.maps import plan_route
from drivesim.metrics import (
    EpisodeResult,
    compute_rates,
    interaction_indicator,
)


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}", file=sys.stderr)
        raise
    print(f"[PASS] {name}")


@pytest.fixture(scope="module")
def cross_map_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("accept") / "cross.json"
    mapgen.save(mapgen.four_way_intersection(), path)
    return str(path)


@pytest.fixture(scope="module")
def straight_map_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("accept") / "straight.json"
    mapgen.save(mapgen.single_lane(length=300.0, speed_limit=12.0), path)
    return str(path)


def test_akm_reduces_to_bicycle_model():
    with criterion("AKM reduction: akm(u1=0,u2=1) == bicycle within 1e-12 over 1e4 states, <1s"):
        rng = np.random.default_rng(101)
        start = time.perf_counter()
        for _ in range(10_000):
            s = VehicleState(
                x=rng.uniform(-200, 200), y=rng.uniform(-200, 200),
                phi=rng.uniform(-math.pi, math.pi), v=rng.uniform(0, 30),
                l_f=rng.uniform(1.0, 2.5), l_r=rng.uniform(1.0, 2.5),
            )
            act = ControlAction(rng.uniform(-8, 8), rng.uniform(-0.6, 0.6))
            a = akm_step(s, act, KinematicParams(0.1, 0.0, 1.0))
            b = bicycle_step(s, act, 0.1)
            assert abs(a.x - b.x) <= 1e-12
            assert abs(a.y - b.y) <= 1e-12
            assert abs(a.phi - b.phi) <= 1e-12
            assert abs(a.v - b.v) <= 1e-12
        assert time.perf_counter() - start < 1.0


def _synthesize_imu(u1, u2, n_pairs, seed):
    rng = np.random.default_rng(seed)
    params = KinematicParams(dt=0.1, u1=u1, u2=u2)
    state = VehicleState(v=9.0)
    samples = [ImuSample(0, state.x, state.y, state.phi, state.v)]
    for i in range(n_pairs):
        a = 2.0 * math.sin(0.13 * i) + rng.uniform(-0.4, 0.4)
        delta = 0.3 * math.sin(0.06 * i + 0.5)
        if state.v < 2.0:
            a = abs(a) + 0.5
        elif state.v > 16.0:
            a = -abs(a) - 0.5
        state = akm_step(state, ControlAction(a, delta), params)
        samples.append(ImuSample(i + 1, state.x, state.y, state.phi, state.v))
    return samples


def test_akm_calibration_recovery():
    with criterion("AKM calibration: 3x3 truth grid recovered within 1e-2 from 1e4 noiseless pairs, <10s each"):
        for i, u1_true in enumerate((0.15, 0.5, 0.85)):
            for j, u2_true in enumerate((0.25, 1.0, 1.75)):
                start = time.perf_counter()
                logs = [_synthesize_imu(u1_true, u2_true, 10_000, seed=17 + i * 3 + j)]
                params = estimate_akm_params(logs, 1.5, 1.5, 0.1)
                elapsed = time.perf_counter() - start
                assert abs(params.u1 - u1_true) < 1e-2, (u1_true, u2_true, params)
                assert abs(params.u2 - u2_true) < 1e-2, (u1_true, u2_true, params)
                assert elapsed < 10.0


def test_ground_model_plane_fit_and_loss():
    with criterion("Ground model: plane fit RMSE < 0.05 m in < 60 s; exact loss asymmetry; gradcheck < 1e-4"):
        # exact asymmetric-loss values
        assert height_loss(3.0, 1.0, 1.0) == 4.0
        assert height_loss(1.0, 3.0, 1.0) == 1.5
        assert height_loss(3.0, 1.0, 1.0) > height_loss(1.0, 3.0, 1.0)

        # gradient vs central differences
        rng = np.random.default_rng(7)
        model = GroundModel(seed=11)
        xy = rng.uniform(-20, 20, size=(96, 2))
        z = 0.1 * xy[:, 0] + 0.2 * xy[:, 1] + rng.normal(0, 0.3, 96)
        model.x_mean = xy.mean(axis=0)
        model.x_scale = xy.std(axis=0)
        _, grads = model.loss_and_grads(xy, z)
        params = model._params()
        checked = 0
        h = 1e-6
        while checked < 100:
            pi = int(rng.integers(len(params)))
            flat = int(rng.integers(params[pi].size))
            orig = params[pi].flat[flat]
            params[pi].flat[flat] = orig + h
            up = model.loss(xy, z)
            params[pi].flat[flat] = orig - h
            down = model.loss(xy, z)
            params[pi].flat[flat] = orig
            numeric = (up - down) / (2 * h)
            analytic = grads[pi].flat[flat]
            if abs(numeric) < 1e-8 and abs(analytic) < 1e-8:
                continue
            assert abs(numeric - analytic) / max(abs(numeric), abs(analytic)) < 1e-4
            checked += 1

        # plane fit at full training settings
        start = time.perf_counter()
        xy = rng.uniform(-50, 50, size=(3000, 2))
        z = 0.1 * xy[:, 0] + 0.2 * xy[:, 1] + 3.0
        fit = GroundModel(seed=1).fit(xy, z, rng=np.random.default_rng(2))
        gx, gy = np.meshgrid(np.linspace(-48, 48, 30), np.linspace(-48, 48, 30))
        pred = fit.predict(gx.ravel(), gy.ravel())
        true = 0.1 * gx.ravel() + 0.2 * gy.ravel() + 3.0
        rmse = float(np.sqrt(np.mean((pred - true) ** 2)))
        elapsed = time.perf_counter() - start
        assert rmse < 0.05, rmse
        assert elapsed < 60.0, elapsed


def test_ransac_vertical_normal_deterministic():
    with criterion("RANSAC: 90/10 cloud -> normal within 1 deg of vertical, seed-deterministic"):
        rng = np.random.default_rng(3)
        xy = rng.uniform(-50, 50, size=(900, 2))
        plane = np.column_stack((xy, rng.normal(0, 0.01, 900)))
        out_xy = rng.uniform(-50, 50, size=(100, 2))
        outliers = np.column_stack((out_xy, rng.uniform(1, 3, 100)))
        cloud = PointCloud(np.vstack((plane, outliers)))
        p1, in1 = ransac_ground(cloud, iterations=200, inlier_threshold=0.05,
                                rng=np.random.default_rng(42))
        p2, in2 = ransac_ground(cloud, iterations=200, inlier_threshold=0.05,
                                rng=np.random.default_rng(42))
        assert p1 == p2 and np.array_equal(in1, in2)
        tilt = math.degrees(math.acos(min(p1[2], 1.0)))
        assert tilt < 1.0


def test_light_estimation_contract():
    with criterion("Light estimation: constant image -> (0,0,-1) exact; 1000 random -> unit norm, z<0"):
        flat = estimate_light(ImageGrid(8, 8, np.full((8, 8), 0.3)))
        assert flat.direction == (0.0, 0.0, -1.0)
        rng = np.random.default_rng(5)
        for _ in range(1000):
            h, w = int(rng.integers(3, 16)), int(rng.integers(3, 16))
            est = estimate_light(
                ImageGrid(w, h, rng.random((h, w))),
                blur_sigma=float(rng.uniform(0.0, 2.5)),
            )
            norm = math.sqrt(sum(c * c for c in est.direction))
            assert abs(norm - 1.0) <= 1e-9
            assert est.direction[2] < 0.0


def _naive_rates(episodes):
    n = len(episodes)
    rc = vcr = lcr = 0.0
    for ep in episodes:
        t = len(ep.vehicle_collision_flags)
        cv = sum(1 for f in ep.vehicle_collision_flags if f)
        cl = sum(1 for f in ep.layout_collision_flags if f)
        if t:
            vcr += cv / t
            lcr += cl / t
        if cv == 0 and not ep.timed_out:
            rc += 1
    return rc / n, vcr / n, lcr / n


def test_metrics_arithmetic():
    with criterion("Metrics arithmetic: oracle equality on 1000 random sets; RC fixture = 0.5; RC ignores layout"):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            eps = [
                EpisodeResult(
                    list(rng.random(t) < 0.25),
                    list(rng.random(t) < 0.25),
                    timed_out=bool(rng.random() < 0.25),
                )
                for t in rng.integers(1, 25, size=rng.integers(1, 6))
            ]
            rep = compute_rates(eps)
            rc, vcr, lcr = _naive_rates(eps)
            assert rep.rc == rc and rep.vcr == vcr and rep.lcr == lcr
        clean = EpisodeResult([False] * 10, [False] * 10)
        crash = EpisodeResult([False] * 9 + [True], [False] * 10)
        late = EpisodeResult([False] * 10, [False] * 10, timed_out=True)
        assert compute_rates([clean, crash, late, clean]).rc == 0.5
        layout_only = EpisodeResult([False] * 10, [True] * 10)
        assert compute_rates([layout_only]).rc == 1.0


def test_interaction_semantics(intersection_map):
    with criterion("Interaction semantics: out-of-range / non-crossing / crossing -> F/F/T; conjunction holds"):
        m = intersection_map
        ego_route = plan_route(("in_s", 0.0), ("out_n", 40.0), m)
        x, y, h = ego_route.point_at(60.0)
        ego = VehicleState(x=x, y=y, phi=h, v=8.0)

        def agent_on(start, goal, progress):
            route = plan_route(start, goal, m)
            ax, ay, ah = route.point_at(progress)
            return AgentRecord(
                id="a",
                state=VehicleState(x=ax, y=ay, phi=ah, v=5.0),
                behavior=BehaviorState(BehaviorMode.NORMAL, 8.0, route, route_progress=progress),
            )

        records = [
            interaction_indicator(ego, ego_route, agent_on(("in_s", 0.0), ("out_n", 40.0), 10.0), 10.0, ego_progress=60.0),
            interaction_indicator(ego, ego_route, agent_on(("out_e", 3.0), ("out_e", 55.0), 0.0), 10.0, ego_progress=60.0),
            interaction_indicator(ego, ego_route, agent_on(("in_w", 40.0), ("out_e", 40.0), 20.0), 10.0, ego_progress=60.0),
        ]
        assert [r.interaction for r in records] == [False, False, True]
        assert not records[0].detect
        assert records[1].detect and not records[1].intersect
        for r in records:
            assert r.interaction == (r.detect and r.intersect)


def test_interactivity_direction(cross_map_path):
    with criterion("Interactivity: 20 seeded route-based intersection runs -> rate >= 0.8; zero-agent runs -> 0"):
        flags = []
        for seed in range(20):
            cfg = SimConfig(
                name=f"inter-{seed}", mode="SYN", map_path=cross_map_path,
                ego=EgoSpec("in_s", 0.0, "out_n", 50.0, initial_speed=7.0),
                world=WorldConfig(max_agents=3, seed=seed, t_max=250, min_route_length=40.0),
            )
            flags.append(run_episode(cfg).interactions_any)
        rate = sum(flags) / len(flags)
        assert rate >= 0.8, rate

        empty_flags = []
        for seed in range(5):
            cfg = SimConfig(
                name=f"empty-{seed}", mode="SYN", map_path=cross_map_path,
                ego=EgoSpec("in_s", 0.0, "out_n", 50.0, initial_speed=7.0),
                world=WorldConfig(max_agents=0, seed=seed, t_max=250),
            )
            empty_flags.append(run_episode(cfg).interactions_any)
        assert sum(empty_flags) == 0


def test_bidirectionality_witness(straight_map_path):
    with criterion("Bidirectionality: blocking agent alters ego speeds; ego presence alters agent speeds"):
        # agent -> ego influence via the full engine
        base = SimConfig(
            name="free", mode="SYN", map_path=straight_map_path,
            ego=EgoSpec("L0", 10.0, "L0", 250.0, initial_speed=8.0),
            world=WorldConfig(max_agents=0, seed=5, t_max=300),
        )
        blocked = SimConfig(
            name="blocked", mode="SYN", map_path=straight_map_path,
            ego=EgoSpec("L0", 10.0, "L0", 250.0, initial_speed=8.0),
            world=WorldConfig(max_agents=1, seed=5, t_max=300, min_route_length=50.0),
        )
        v_free = [r["ego"]["v"] for r in run_episode(base).records]
        v_blocked = [r["ego"]["v"] for r in run_episode(blocked).records]
        n = min(len(v_free), len(v_blocked))
        assert any(abs(a - b) > 1e-9 for a, b in zip(v_free[:n], v_blocked[:n]))

        # ego -> agent influence via the controller
        m = mapgen.build(mapgen.single_lane(length=400.0, speed_limit=12.0))
        lane = m.lanes["L0"]
        route = plan_route(("L0", 0.0), ("L0", 400.0), m)
        pt = lane.point_at(0.0)

        def agent():
            return AgentRecord(
                id="a0",
                state=VehicleState(x=pt.x, y=pt.y, phi=pt.heading, v=8.0),
                behavior=BehaviorState(BehaviorMode.NORMAL, 10.0, route),
            )

        block_pt = lane.point_at(60.0)
        ego_block = VehicleState(x=block_pt.x, y=block_pt.y, phi=block_pt.heading, v=0.0)
        ego_away = VehicleState(x=0.0, y=500.0, phi=0.0, v=0.0)
        seq = {}
        for label, ego in (("block", ego_block), ("away", ego_away)):
            ctl = SceneController(m, [agent()])
            vs = []
            for t in range(150):
                ctl.step(ego, 0.0, t)
                vs.append(float(ctl.v[0]))
            seq[label] = vs
        assert any(abs(a - b) > 1e-9 for a, b in zip(seq["block"], seq["away"]))


def test_workflow_determinism(tmp_path, straight_map_path):
    with criterion("Workflow determinism: generate twice on 3 configs -> byte-identical logs, equal hashes"):
        configs = [
            SimConfig(
                name=f"det-{k}", mode="SYN", map_path=straight_map_path,
                ego=EgoSpec("L0", 10.0, "L0", 250.0, initial_speed=8.0),
                world=WorldConfig(max_agents=2, seed=k, t_max=200, min_route_length=50.0),
            )
            for k in range(3)
        ]
        m1 = generate_dataset(configs, tmp_path / "g1")
        m2 = generate_dataset(configs, tmp_path / "g2")
        h1 = [e["log_hash"] for e in m1["episodes"]]
        h2 = [e["log_hash"] for e in m2["episodes"]]
        assert h1 == h2
        for k in range(3):
            for rel in ("states.jsonl", "metrics.json", "config.json"):
                a = (tmp_path / "g1" / f"det-{k}" / rel).read_bytes()
                b = (tmp_path / "g2" / f"det-{k}" / rel).read_bytes()
                assert a == b
            frames1 = sorted((tmp_path / "g1" / f"det-{k}" / "frames").iterdir())
            frames2 = sorted((tmp_path / "g2" / f"det-{k}" / "frames").iterdir())
            assert [f.name for f in frames1] == [f.name for f in frames2]
            for fa, fb in zip(frames1, frames2):
                assert fa.read_bytes() == fb.read_bytes()


def test_timing_contract(straight_map_path):
    with criterion("Timing contract: T controller ticks at 10 Hz and ceil(T/5) observation frames at 2 Hz"):
        cfg = SimConfig(
            name="timing", mode="SYN", map_path=straight_map_path,
            ego=EgoSpec("L0", 10.0, "L0", 299.0, initial_speed=8.0),
            world=WorldConfig(max_agents=0, seed=0, t_max=137),
        )
        log = run_episode(cfg)
        t = log.ticks
        assert t == 137
        assert [r["tick"] for r in log.records] == list(range(t + 1))
        assert len(log.frames) == math.ceil(t / 5)
        assert [f.tick for f in log.frames] == [5 * k for k in range(len(log.frames))]


def test_throughput():
    with criterion("Throughput: controller+kinematics >= 10,000 ticks/s (50 agents); BEV render >= 100 frames/s"):
        ticks_rate = max(bench_controller(50, 4000) for _ in range(3))
        render_rate = max(bench_render(60) for _ in range(3))
        assert ticks_rate >= 10_000, ticks_rate
        assert render_rate >= 100, render_rate


def test_expert_closed_course(cross_map_path, straight_map_path):
    with criterion("Expert closed course: straight/left/right complete, 0 collisions, arrival within 3 m"):
        courses = [
            ("straight", straight_map_path, ("L0", 10.0), ("L0", 250.0)),
            ("left", cross_map_path, ("in_s", 0.0), ("out_w", 50.0)),
            ("right", cross_map_path, ("in_s", 0.0), ("out_e", 50.0)),
        ]
        for name, map_path, start, goal in courses:
            cfg = SimConfig(
                name=name, mode="SYN", map_path=map_path,
                ego=EgoSpec(start[0], start[1], goal[0], goal[1], initial_speed=6.0),
                world=WorldConfig(max_agents=0, seed=0, t_max=800),
            )
            log = run_episode(cfg)
            assert log.result.completed, name
            assert not any(log.result.vehicle_collision_flags), name
            assert not any(log.result.layout_collision_flags), name
            route = plan_route(start, goal, mapgen.build(json.loads(open(map_path).read())))
            gx, gy, _ = route.point_at(route.length)
            last = log.records[-1]["ego"]
            assert math.hypot(last["x"] - gx, last["y"] - gy) <= 3.0, name

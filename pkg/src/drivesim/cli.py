"""Command-line entry point.

Subcommands: generate (SYN batches), evaluate (CL episode server),
estimate-akm, fit-ground, estimate-light, metrics, bench. Batch tool: all
configuration comes from files and flags, errors are machine-readable JSON
on stderr, exit codes are 0 ok / 2 config / 3 runtime / 4 protocol.
"""

import argparse
import glob
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_PROTOCOL = 4


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _apply_seed(configs, seed):
    if seed is None:
        return
    for config in configs:
        config.world.seed = seed


def cmd_generate(args) -> int:
    from .engine import ConfigError, generate_dataset, load_configs

    try:
        configs = load_configs(args.config)
        _apply_seed(configs, args.seed)
    except (OSError, ValueError, ConfigError) as e:
        return _fail(EXIT_CONFIG, "config", str(e))
    try:
        manifest = generate_dataset(configs, args.out)
    except OSError as e:
        return _fail(EXIT_RUNTIME, "io", str(e))
    _emit({"episodes": [{k: e.get(k) for k in ("name", "status", "log_hash")} for e in manifest["episodes"]]})
    failed = [e for e in manifest["episodes"] if e["status"] != "ok"]
    return EXIT_OK if not failed else EXIT_RUNTIME


def cmd_evaluate(args) -> int:
    from .engine import ConfigError, load_configs
    from .protocol import PlannerDisconnect, ProtocolError, serve_episodes

    try:
        configs = load_configs(args.config)
        _apply_seed(configs, args.seed)
        for config in configs:
            config.mode = "CL"
        host, _, port = args.listen.rpartition(":")
        port = int(port)
    except (OSError, ValueError, ConfigError) as e:
        return _fail(EXIT_CONFIG, "config", str(e))
    try:
        manifest = serve_episodes(configs, args.out, host=host or "127.0.0.1", port=port)
    except (ProtocolError, PlannerDisconnect) as e:
        return _fail(EXIT_PROTOCOL, "protocol", str(e))
    except OSError as e:
        return _fail(EXIT_RUNTIME, "io", str(e))
    _emit({"episodes": [{k: e.get(k) for k in ("name", "status", "completed")} for e in manifest["episodes"]]})
    return EXIT_OK


def cmd_estimate_akm(args) -> int:
    from .kinematics import InsufficientDataError, akm_objective, estimate_akm_params, load_imu_csv
    from .kinematics import _calibration_arrays

    paths = sorted(glob.glob(args.imu))
    if not paths:
        return _fail(EXIT_CONFIG, "config", f"no IMU logs match {args.imu!r}")
    try:
        logs = [load_imu_csv(p) for p in paths]
        params = estimate_akm_params(logs, args.lf, args.lr, args.dt)
    except (OSError, ValueError, KeyError) as e:
        kind = EXIT_RUNTIME if isinstance(e, InsufficientDataError) else EXIT_CONFIG
        return _fail(kind, "estimation", str(e))
    pairs = _calibration_arrays(logs, args.lf, args.dt)
    residual = akm_objective(pairs, params.u1, params.u2, args.dt)
    _emit({"u1": params.u1, "u2": params.u2, "residual": residual, "frame_pairs": len(pairs)})
    return EXIT_OK


def cmd_fit_ground(args) -> int:
    from .ground import NoGroundFoundError, fit_ground, load_clouds_csv

    paths = sorted(glob.glob(args.clouds))
    if not paths:
        return _fail(EXIT_CONFIG, "config", f"no cloud files match {args.clouds!r}")
    try:
        clouds = load_clouds_csv(paths)
        model = fit_ground(clouds, epochs=args.epochs, rng=np.random.default_rng(args.seed or 0))
    except NoGroundFoundError as e:
        return _fail(EXIT_RUNTIME, "no-ground-found", str(e))
    except (OSError, ValueError, KeyError) as e:
        return _fail(EXIT_CONFIG, "config", str(e))
    model.save(args.out)
    _emit({"model": str(args.out), "final_loss": model.epoch_losses[-1], "clouds": len(clouds)})
    return EXIT_OK


def cmd_estimate_light(args) -> int:
    from .illumination import estimate_light, load_pgm

    try:
        img = load_pgm(args.image)
    except (OSError, ValueError) as e:
        return _fail(EXIT_CONFIG, "config", str(e))
    est = estimate_light(img, blur_sigma=args.sigma)
    _emit({"l": list(est.direction), "azimuth": est.azimuth})
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .engine import recompute_metrics

    root = Path(args.logs)
    dirs = sorted(d for d in root.iterdir() if (d / "states.jsonl").exists()) if root.is_dir() else []
    if not dirs:
        return _fail(EXIT_CONFIG, "config", f"no episode logs under {args.logs!r}")
    try:
        report = recompute_metrics(dirs)
    except (OSError, ValueError, KeyError) as e:
        return _fail(EXIT_RUNTIME, "metrics", str(e))
    _emit(report.to_dict())
    return EXIT_OK


def cmd_bench(args) -> int:
    from .engine import bench_controller, bench_render

    ticks_per_s = bench_controller(n_agents=args.agents, ticks=args.ticks)
    frames_per_s = bench_render(frames=args.frames)
    _emit({
        "controller_ticks_per_s": round(ticks_per_s, 1),
        "render_frames_per_s": round(frames_per_s, 1),
        "agents": args.agents,
    })
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drivesim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="run SYN episodes in batch and write logs + manifest")
    p.add_argument("--config", required=True, help="episode config JSON (single or batch)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None, help="override every episode's world seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="serve CL episodes to an external planner")
    p.add_argument("--config", required=True)
    p.add_argument("--listen", default="127.0.0.1:7788", help="host:port to bind")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("estimate-akm", help="fit the adaptive-model weights from IMU logs")
    p.add_argument("--imu", required=True, help="glob of IMU CSV logs (tick,x,y,phi,v)")
    p.add_argument("--lf", type=float, default=1.5)
    p.add_argument("--lr", type=float, default=1.5)
    p.add_argument("--dt", type=float, default=0.1)
    p.set_defaults(func=cmd_estimate_akm)

    p = sub.add_parser("fit-ground", help="RANSAC + MLP ground-height fit from point clouds")
    p.add_argument("--clouds", required=True, help="glob of CSV clouds (frame,x,y,z)")
    p.add_argument("--out", required=True, help="output model JSON path")
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_fit_ground)

    p = sub.add_parser("estimate-light", help="light direction from a PGM image")
    p.add_argument("--image", required=True)
    p.add_argument("--sigma", type=float, default=2.0)
    p.set_defaults(func=cmd_estimate_light)

    p = sub.add_parser("metrics", help="recompute the metrics report from stored logs")
    p.add_argument("--logs", required=True, help="dataset directory holding episode subdirs")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench", help="throughput check: controller ticks/s and BEV frames/s")
    p.add_argument("--agents", type=int, default=50)
    p.add_argument("--ticks", type=int, default=5000)
    p.add_argument("--frames", type=int, default=60)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point, ``parkour``.

Exit status is 0 on success, 2 on a configuration error, 3 when corrupt data
was detected and 4 when a run aborted in degraded mode.
"""

__all__ = ["main"]

import argparse
import csv
import dataclasses
import logging
import sys
import zipfile
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from parkourpy.commands import Stage
from parkourpy.config import RunConfig
from parkourpy.errors import ConfigurationError, DataCorruptionError, DegradedError
from parkourpy.learning.checkpoint import load_checkpoint
from parkourpy.learning.runner import PpoRunner
from parkourpy.logger import configure_run_logging
from parkourpy.neural.policy import OraclePolicy, RecurrentPolicy, StudentPolicy, ValueNetwork
from parkourpy.neural.snapshot import load_snapshot
from parkourpy.orchestration import distill
from parkourpy.orchestration.deploy import DeploymentScheduler, VisionCutoff, VisionPipeline, VisionSource
from parkourpy.orchestration.evaluate import (
    Agent,
    FallingAgent,
    PolicyAgent,
    TeleportAgent,
    evaluate,
    format_table,
    policy_from_snapshot,
    write_results_csv,
)
from parkourpy.orchestration.trajectory import read_trajectory
from parkourpy.perception import CameraExtrinsics, render_depth
from parkourpy.simwrapper import ParkourSim
from parkourpy.terrain import ObstacleKind, TrackLayout, build_track, dump_png, read_hfield, write_hfield
from parkourpy.timers.timer import Timer

logger = logging.getLogger("parkourpy.cli")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIGURATION = 2
EXIT_CORRUPTION = 3
EXIT_DEGRADED = 4

BASELINES = ("teleport", "falling")


def _with_stage(config: RunConfig, stage: Stage) -> RunConfig:
    return dataclasses.replace(config, commands=dataclasses.replace(config.commands, stage=stage.value))


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig.from_dict({})
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


# ===========================
# terrain
# ===========================
def _terrain_layout(config: RunConfig, name: str) -> TrackLayout:
    if name == "training":
        return config.terrain.training_layout()
    if name == "plane":
        return config.terrain.plane_layout()
    try:
        kind = ObstacleKind(name)
    except ValueError:
        raise ConfigurationError(f"unknown layout {name!r}") from None
    return TrackLayout.evaluation_track(kind, num_treads=config.terrain.num_treads, **config.terrain.geometry())


def cmd_terrain(args: argparse.Namespace, config: RunConfig) -> int:
    if args.action == "gen":
        t = config.terrain
        track = build_track(
            _terrain_layout(config, args.layout),
            config.seed,
            t.cell_size,
            t.trench_depth,
            t.noise_amplitude,
            t.noise_octaves,
            t.noise_wavelength,
        )
        write_hfield(args.out, track.field)
        logger.info("wrote %s, %d x %d cells", args.out, track.field.length, track.field.width)
        if args.png:
            dump_png(args.png, track.field)
    else:
        if not args.hfield:
            raise ConfigurationError("terrain dump needs --hfield")
        dump_png(args.png or Path(args.hfield).with_suffix(".png"), read_hfield(args.hfield))
    return EXIT_OK


# ===========================
# train
# ===========================
def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    stage = Stage(args.stage)
    config = _with_stage(config, stage)
    out = Path(args.out or config.train.checkpoint_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    policy = OraclePolicy(config.policy, rng)
    value_net = ValueNetwork(config.policy, rng)

    sim = ParkourSim(config, num_envs=args.envs)
    sim.initialize()
    try:
        runner = PpoRunner(
            sim, policy, value_net, config.ppo, config.seed, out / config.train.metrics_file, stage.value
        )
        if args.resume:
            runner.restore(args.resume)
        elif getattr(args, "from_checkpoint", None):
            runner.restore(args.from_checkpoint, optimizer=False)
        elif stage is Stage.PARKOUR:
            logger.warning("parkour training without --from starts from random weights")
        runner.learn(
            args.iterations or config.train.iterations,
            progress=not args.quiet,
            checkpoint_every=config.train.checkpoint_every,
            checkpoint_dir=out,
        )
        final = runner.save(out / f"{stage.value}_final.zip")
    finally:
        sim.finalize()
    logger.info("final checkpoint %s", final)
    return EXIT_OK


# ===========================
# distill
# ===========================
def cmd_distill(args: argparse.Namespace, config: RunConfig) -> int:
    if args.teacher:
        distill.install_teacher(config, args.teacher)
    checkpoint_dir = Path(args.out) if args.out else None
    if args.role == "trainer":
        report = distill.trainer_loop(config, max_idle=args.max_idle, checkpoint_dir=checkpoint_dir)
    elif args.role == "collector":
        collector = distill.collector_loop(config, args.id, max_files=args.files)
        print(f"collector {collector.collector_id}: {collector.files} files, {collector.records} records")
        return EXIT_OK
    elif args.role == "single":
        report = distill.run_single(config, args.files or 1, checkpoint_dir)
    else:
        report = distill.run_distributed(config, max_idle=args.max_idle, checkpoint_dir=checkpoint_dir)
    print(
        f"updates {report.updates}, transitions {report.transitions}, "
        f"rejected files {report.files_rejected}, published version {report.published_version}, "
        f"{report.transitions_per_second:.1f} transitions/s"
    )
    return EXIT_OK


# ===========================
# eval
# ===========================
def _load_policy(path: Path, config: RunConfig) -> RecurrentPolicy:
    snapshot = load_checkpoint(path).policy if zipfile.is_zipfile(path) else load_snapshot(path)
    return policy_from_snapshot(snapshot, config.policy)


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> int:
    if not args.snapshot and not args.baseline:
        raise ConfigurationError("eval needs at least one --snapshot or --baseline")
    if args.layout == "all":
        kinds = list(ObstacleKind)
    else:
        try:
            kinds = [ObstacleKind(name) for name in args.layout.split(",")]
        except ValueError as err:
            raise ConfigurationError(f"--layout: {err}") from None

    agents: Dict[str, Agent] = {}
    for name in args.baseline or []:
        agents[name] = TeleportAgent() if name == "teleport" else FallingAgent()
    for path in args.snapshot or []:
        agents[Path(path).stem] = PolicyAgent(_load_policy(Path(path), config), config)

    results = {
        name: evaluate(agent, config, args.episodes, kinds, args.subtracks, progress=not args.quiet)
        for name, agent in agents.items()
    }
    print(format_table(results))
    if args.csv:
        write_results_csv(args.csv, results)
    return EXIT_OK


# ===========================
# deploy
# ===========================
def cmd_deploy(args: argparse.Namespace, config: RunConfig) -> int:
    policy = _load_policy(Path(args.snapshot), config)
    if not isinstance(policy, StudentPolicy):
        raise ConfigurationError(f"deploy needs a depth student, {args.snapshot} holds an oracle")
    sim = ParkourSim(config, num_envs=1)
    sim.initialize()
    try:
        vision: VisionSource = VisionPipeline(sim.track.field, config.perception, config.seed, sim.dr.camera(0))
        if args.vision_cutoff is not None:
            vision = VisionCutoff(vision, args.vision_cutoff)
        scheduler = DeploymentScheduler(
            policy,
            vision,
            control_hz=1.0 / sim.get_time_step(),
            vision_hz=config.perception.vision_hz,
            stall_timeout=args.stall_timeout,
            abort_on_degraded=args.abort_on_degraded,
        )
        ticks = scheduler.run(sim, args.seconds)
    finally:
        sim.finalize()
    degraded = sum(tick.degraded for tick in ticks)
    summary = scheduler.summary()
    print(
        f"actor ticks {summary['actor_ticks']:.0f}, vision ticks {summary['vision_ticks']:.0f}, "
        f"degraded ticks {degraded}"
    )
    return EXIT_OK


# ===========================
# replay
# ===========================
def cmd_replay(args: argparse.Namespace, config: RunConfig) -> int:
    trajectory = read_trajectory(args.trajectory)
    h = trajectory.header
    out = Path(args.out) if args.out else Path(args.trajectory).with_suffix(".csv")
    records = trajectory.records
    obs_cols = [f"obs_{i}" for i in range(h.obs_width)]
    act_cols = [f"teacher_action_{i}" for i in range(h.action_width)]
    with out.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["collector", "policy_version", "env", "t", "episode", "step", "done", *obs_cols, *act_cols])
        for index, record in enumerate(records):
            env, t = divmod(index, h.sequence_length)
            writer.writerow(
                [
                    h.collector_id,
                    h.policy_version,
                    env,
                    t,
                    int(record["episode"]),
                    int(record["step"]),
                    int(record["done"]),
                    *(f"{v:.6g}" for v in record["obs"]),
                    *(f"{v:.6g}" for v in record["teacher_action"]),
                ]
            )
    logger.info("wrote %d records of %s to %s", h.record_count, args.trajectory, out)
    return EXIT_OK


# ===========================
# bench
# ===========================
def cmd_bench(args: argparse.Namespace, config: RunConfig) -> int:
    timer = Timer("bench", "Elapsed time for {name}.{fn_name}: {seconds:0.4f} seconds")
    if args.target == "raycast":
        scene = ParkourSim(config, num_envs=1)
        scene.initialize()
        field, pose = scene.track.field, scene.pose(0)
        scene.finalize()
        p = config.perception
        timer.start("raycast")
        for _ in range(args.repeat):
            render_depth(field, CameraExtrinsics(), pose, tuple(p.render_resolution), p.near_clip, p.far_clip)  # type: ignore[arg-type]
        seconds = timer.stop("raycast", args.repeat)
        print(f"raycast: {args.repeat / seconds:.2f} frames/s at {p.render_resolution[0]}x{p.render_resolution[1]}")
    else:
        sim = ParkourSim(config, num_envs=args.envs)
        sim.initialize()
        action = np.zeros((sim.num_envs, sim.joints.lower.size))
        timer.start("step")
        for _ in range(args.repeat):
            sim.step(action)
        seconds = timer.stop("step", args.repeat * sim.num_envs)
        sim.finalize()
        print(f"step: {args.repeat * sim.num_envs / seconds:.1f} env-steps/s with {sim.num_envs} environments")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parkour", description="Humanoid parkour training and distillation")
    parser.add_argument("-c", "--config", help="TOML run configuration")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--log-level", default="INFO", help="package log level, default INFO")
    parser.add_argument("--log-file", help="append log records to this file")
    parser.add_argument("-q", "--quiet", action="store_true", help="no progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    terrain = sub.add_parser("terrain", help="generate or render heightfields")
    terrain.add_argument("action", choices=["gen", "dump"])
    terrain.add_argument("--layout", default="training", help="training, plane or an obstacle kind")
    terrain.add_argument("--out", default="terrain.hfield", help="heightfield file written by gen")
    terrain.add_argument("--hfield", help="heightfield file read by dump")
    terrain.add_argument("--png", help="grayscale image of the heights")
    terrain.set_defaults(func=cmd_terrain)

    train = sub.add_parser("train", help="train the oracle with PPO")
    train.add_argument("stage", choices=[s.value for s in Stage])
    train.add_argument("--from", dest="from_checkpoint", help="checkpoint whose weights start the stage")
    train.add_argument("--resume", help="checkpoint to continue, optimizer included")
    train.add_argument("--iterations", type=int, help="override train.iterations")
    train.add_argument("--envs", type=int, help="override ppo.num_envs")
    train.add_argument("--out", help="checkpoint directory, default train.checkpoint_dir")
    train.set_defaults(func=cmd_train)

    distill = sub.add_parser("distill", help="distill the oracle into the depth student")
    distill.add_argument("role", choices=["trainer", "collector", "single", "run"])
    distill.add_argument("--id", type=int, default=0, help="collector id")
    distill.add_argument("--files", type=int, help="trajectory files to write before stopping")
    distill.add_argument("--teacher", help="oracle checkpoint or snapshot to install in the exchange")
    distill.add_argument("--max-idle", type=float, default=0.0, help="trainer stops after this many idle seconds")
    distill.add_argument("--out", help="directory of the final student checkpoint")
    distill.set_defaults(func=cmd_distill)

    ev = sub.add_parser("eval", help="success rate and distance per terrain")
    ev.add_argument("--snapshot", action="append", help="policy snapshot or checkpoint; repeatable")
    ev.add_argument("--baseline", action="append", choices=BASELINES, help="scripted agent; repeatable")
    ev.add_argument("--layout", default="all", help="comma-separated obstacle kinds or 'all'")
    ev.add_argument("--episodes", type=int, default=10)
    ev.add_argument("--subtracks", type=int, default=3)
    ev.add_argument("--csv", help="write one row per policy and terrain")
    ev.set_defaults(func=cmd_eval)

    replay = sub.add_parser("replay", help="dump a trajectory file as CSV")
    replay.add_argument("--trajectory", required=True)
    replay.add_argument("--out", help="CSV path, default next to the trajectory")
    replay.set_defaults(func=cmd_replay)

    deploy = sub.add_parser("deploy", help="run a student at deployment rates on one environment")
    deploy.add_argument("--snapshot", required=True, help="student snapshot or checkpoint")
    deploy.add_argument("--seconds", type=float, default=10.0, help="simulated seconds")
    deploy.add_argument("--stall-timeout", type=float, default=0.5, help="vision silence before degraded mode")
    deploy.add_argument("--vision-cutoff", type=float, help="camera delivers nothing after this many seconds")
    deploy.add_argument("--abort-on-degraded", action="store_true", help="exit with status 4 on a vision stall")
    deploy.set_defaults(func=cmd_deploy)

    bench = sub.add_parser("bench", help="performance microbenchmarks")
    bench.add_argument("target", choices=["raycast", "step"])
    bench.add_argument("--repeat", type=int, default=10)
    bench.add_argument("--envs", type=int, default=64)
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configure_run_logging(args.log_level.upper(), Path(args.log_file) if args.log_file else None)
        config = _load_config(args)
        return int(args.func(args, config))
    except ConfigurationError as err:
        logger.error("configuration error: %s", err)
        return EXIT_CONFIGURATION
    except DataCorruptionError as err:
        logger.error("corrupt data: %s", err)
        return EXIT_CORRUPTION
    except DegradedError as err:
        logger.error("degraded abort: %s", err)
        return EXIT_DEGRADED
    except OSError as err:
        logger.error("%s", err)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

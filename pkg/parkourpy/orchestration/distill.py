"""Trainer and collectors of the DAgger distillation, communicating through files.

Exchange directory layout::

    <exchange>/oracle.pkp                  teacher snapshot
    <exchange>/policy/policy_<v>.pkp       student snapshots, newest in LATEST
    <exchange>/trajectories/*.pktraj       labelled trajectories awaiting the trainer
    <exchange>/trajectories/consumed/      trajectories already trained on
    <exchange>/trajectories/rejected/      corrupt trajectories
    <exchange>/STOP                        asks collectors to finish

Every file appears through an atomic rename, and the trainer consumes a
trajectory by renaming it into ``consumed/``, which doubles as the ledger of
transitions consumed across restarts.
"""

__all__ = [
    "Collector",
    "CollectorReport",
    "ExchangeLayout",
    "Trainer",
    "TrainerReport",
    "collector_loop",
    "install_teacher",
    "load_teacher",
    "run_distributed",
    "run_single",
    "trainer_loop",
]

import dataclasses
import errno
import logging
import multiprocessing as mp
import os
import re
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from parkourpy.config import RunConfig
from parkourpy.errors import ConfigurationError, DataCorruptionError
from parkourpy.learning.checkpoint import load_checkpoint, save_checkpoint
from parkourpy.learning.dagger import DistillStats, StudentTrajectory, dagger_label, distill_update
from parkourpy.logger import configure_run_logging
from parkourpy.neural.layers import no_grad
from parkourpy.neural.optim import Adam
from parkourpy.neural.policy import Observation, OraclePolicy, StudentPolicy
from parkourpy.neural.snapshot import Snapshot, load_snapshot, snapshot_bytes
from parkourpy.orchestration.deploy import VisionPipeline
from parkourpy.orchestration.exchange import SnapshotExchange
from parkourpy.orchestration.trajectory import read_trajectory, read_trajectory_header, write_trajectory
from parkourpy.simwrapper import ParkourSim
from parkourpy.timers.timer import Timer
from parkourpy.utils import atomic_write_bytes, iter_temp_files

logger = logging.getLogger(__name__)

TRAJECTORY_SUFFIX = ".pktraj"
_NAME = re.compile(r"traj_c(\d+)_(\d+)\.pktraj$")


@dataclass(frozen=True)
class ExchangeLayout:
    root: Path
    teacher_name: str = "oracle.pkp"

    @classmethod
    def from_config(cls, config: RunConfig) -> "ExchangeLayout":
        return cls(config.exchange_dir, config.distill.teacher_snapshot)

    @property
    def teacher(self) -> Path:
        return self.root / self.teacher_name

    @property
    def policy(self) -> Path:
        return self.root / "policy"

    @property
    def trajectories(self) -> Path:
        return self.root / "trajectories"

    @property
    def consumed(self) -> Path:
        return self.trajectories / "consumed"

    @property
    def rejected(self) -> Path:
        return self.trajectories / "rejected"

    @property
    def stop_file(self) -> Path:
        return self.root / "STOP"

    def ensure(self) -> "ExchangeLayout":
        for directory in (self.policy, self.consumed, self.rejected):
            directory.mkdir(parents=True, exist_ok=True)
        return self

    def pending(self) -> List[Path]:
        return sorted(self.trajectories.glob(f"traj_*{TRAJECTORY_SUFFIX}"))

    def stop_requested(self) -> bool:
        return self.stop_file.exists()

    def next_sequence(self, collector_id: int) -> int:
        """First unused file number of a collector, across pending and processed files."""
        last = -1
        for directory in (self.trajectories, self.consumed, self.rejected):
            for path in directory.glob(f"traj_c{collector_id:03d}_*{TRAJECTORY_SUFFIX}"):
                match = _NAME.search(path.name)
                if match:
                    last = max(last, int(match.group(2)))
        return last + 1


def install_teacher(config: RunConfig, source: Union[str, Path]) -> Path:
    """Copy the oracle weights of a checkpoint archive or snapshot into the exchange."""
    source = Path(source)
    if zipfile.is_zipfile(source):
        snapshot = load_checkpoint(source).policy
    else:
        snapshot = load_snapshot(source)
    layout = ExchangeLayout.from_config(config)
    layout.root.mkdir(parents=True, exist_ok=True)
    return atomic_write_bytes(layout.teacher, snapshot_bytes(snapshot.params, snapshot.version))


def load_teacher(config: RunConfig) -> OraclePolicy:
    """The frozen oracle of the exchange.

    Raises
    ------
    ConfigurationError
        If the exchange holds no teacher snapshot.
    """
    path = ExchangeLayout.from_config(config).teacher
    if not path.exists():
        raise ConfigurationError(f"teacher snapshot {path} not found")
    oracle = OraclePolicy(config.policy)
    load_snapshot(path).load_into(oracle)
    return oracle


def _check_depth_shape(config: RunConfig) -> None:
    if tuple(config.policy.depth_shape) != tuple(config.perception.policy_resolution):
        raise ConfigurationError(
            f"policy.depth_shape {config.policy.depth_shape} differs from "
            f"perception.policy_resolution {config.perception.policy_resolution}"
        )


def _collector_seed(seed: int, collector_id: int) -> int:
    return int(np.random.SeedSequence([seed, collector_id]).generate_state(1)[0] >> 1)


@dataclass
class TrainerReport:
    updates: int = 0
    transitions: int = 0
    files_consumed: int = 0
    files_rejected: int = 0
    published_version: int = -1
    elapsed: float = 0.0
    last: Optional[DistillStats] = None

    @property
    def transitions_per_second(self) -> float:
        return self.transitions / self.elapsed if self.elapsed > 0 else 0.0


class Trainer:
    """Consumes trajectory files and trains the student on their labels.

    On start the transition counter is rebuilt from ``consumed/`` and the
    student resumes from the newest published snapshot, so a restarted
    trainer neither double-counts nor forgets.
    """

    def __init__(
        self,
        config: RunConfig,
        oracle: Optional[OraclePolicy] = None,
        student: Optional[StudentPolicy] = None,
        timing: bool = False,
    ) -> None:
        _check_depth_shape(config)
        self.config = config
        self.layout = ExchangeLayout.from_config(config).ensure()
        self.exchange = SnapshotExchange(self.layout.policy)
        self.report = TrainerReport()
        self.report.transitions = sum(
            read_trajectory_header(p).record_count for p in self.layout.consumed.glob(f"*{TRAJECTORY_SUFFIX}")
        )
        self.report.files_consumed = sum(1 for _ in self.layout.consumed.glob(f"*{TRAJECTORY_SUFFIX}"))
        rng = np.random.default_rng(config.seed)
        if student is None:
            student = StudentPolicy(config.policy, rng)
            latest = self.exchange.latest_version()
            if latest is not None:
                self.exchange.wait_latest(1, 0.0).load_into(student)
                self.report.published_version = latest
                logger.info("resuming the student from published version %d", latest)
            elif config.distill.init_from_teacher:
                oracle = oracle or load_teacher(config)
                student = StudentPolicy.from_oracle(oracle, rng)
        self.student = student
        self.optimizer = Adam(student.parameters(), lr=config.distill.lr)
        if self.exchange.latest_version() is None:
            self.report.published_version = self.exchange.publish(student, 0)
        self._since_publish = 0
        self.timing = timing
        self.timer = Timer("trainer", "Elapsed time for {name}.{fn_name}: {seconds:0.4f} seconds")

    def poll_once(self) -> int:
        """Train on every pending file; returns the number of files handled."""
        handled = 0
        for path in self.layout.pending():
            handled += 1
            try:
                trajectory = read_trajectory(path)
                batch = trajectory.to_batch(self.config.policy)
            except DataCorruptionError as err:
                logger.warning("quarantining %s: %s", path.name, err)
                os.replace(path, self.layout.rejected / path.name)
                self.report.files_rejected += 1
                continue
            os.replace(path, self.layout.consumed / path.name)
            self.report.files_consumed += 1
            self.report.transitions += trajectory.header.record_count
            if batch.transitions == 0:
                logger.warning("%s holds no labelled steps", path.name)
                continue
            self.timer.start("distill_update")
            self.report.last = distill_update(
                self.student,
                batch,
                self.optimizer,
                train_estimator=self.config.distill.train_estimator,
                max_grad_norm=self.config.distill.max_grad_norm,
            )
            self.timer.stop("distill_update", trajectory.header.record_count)
            self.report.updates += 1
            self._since_publish += 1
            if self._since_publish >= self.config.distill.publish_every:
                self.publish()
            if self.limit_reached():
                break
        return handled

    def publish(self) -> int:
        self.report.published_version = self.exchange.publish(self.student)
        self._since_publish = 0
        return self.report.published_version

    def limit_reached(self) -> bool:
        limit = self.config.distill.max_updates
        return bool(limit) and self.report.updates >= limit

    def finish(self, checkpoint_dir: Optional[Path] = None) -> TrainerReport:
        if self._since_publish:
            self.publish()
        if checkpoint_dir is not None:
            checkpoint_dir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(
                checkpoint_dir / f"student_{self.report.updates:06d}.zip",
                self.student,
                None,
                self.optimizer,
                self.report.updates,
                "distill",
            )
        if self.timing and self.report.updates:
            logger.info("distillation throughput: %.1f transitions/s", self.timer.rate("distill_update"))
        return self.report


def trainer_loop(
    config: RunConfig,
    oracle: Optional[OraclePolicy] = None,
    max_idle: float = 0.0,
    checkpoint_dir: Optional[Path] = None,
) -> TrainerReport:
    """Consume trajectories until a limit is hit.

    The loop ends after ``distill.max_updates`` updates, after
    ``orchestration.run_seconds`` or after ``max_idle`` seconds without a
    new file, whichever comes first; zero disables a limit. An idle trainer
    sleeps ``orchestration.poll_interval`` between scans.
    """
    trainer = Trainer(config, oracle)
    orch = config.orchestration
    start = time.monotonic()
    last_file = start
    while not trainer.limit_reached():
        now = time.monotonic()
        if orch.run_seconds and now - start >= orch.run_seconds:
            break
        if trainer.poll_once():
            last_file = time.monotonic()
            continue
        if max_idle and now - last_file >= max_idle:
            logger.info("no new trajectories for %.1f s, stopping", now - last_file)
            break
        time.sleep(orch.poll_interval)
    trainer.report.elapsed = time.monotonic() - start
    return trainer.finish(checkpoint_dir)


@dataclass
class CollectorReport:
    collector_id: int
    files: int = 0
    records: int = 0
    versions: List[int] = field(default_factory=list)


class Collector:
    """Rolls out the newest student, labels the steps with the oracle and writes files.

    Stale policies are used until a newer snapshot becomes readable.
    """

    def __init__(self, config: RunConfig, collector_id: int, oracle: Optional[OraclePolicy] = None) -> None:
        _check_depth_shape(config)
        self.collector_id = collector_id
        self.config = config
        self.layout = ExchangeLayout.from_config(config).ensure()
        self.exchange = SnapshotExchange(self.layout.policy)
        self.oracle = oracle or load_teacher(config)
        seed = _collector_seed(config.seed, collector_id)
        self.student = StudentPolicy(config.policy, np.random.default_rng(seed))
        orch = config.orchestration
        self._adopt(self.exchange.wait_latest(orch.retry_attempts, orch.retry_backoff))

        self.sim = ParkourSim(
            dataclasses.replace(config, seed=seed),
            num_envs=config.distill.num_envs,
            logger_level=logging.WARNING,
        )
        self.sim.initialize()
        self.vision = [
            VisionPipeline(self.sim.track.field, config.perception, seed + k, self.sim.dr.camera(k))
            for k in range(self.sim.num_envs)
        ]
        control_hz = 1.0 / self.sim.params.control_dt
        self.vision_every = max(1, int(round(control_hz / config.perception.vision_hz)))
        self.episode = np.zeros(self.sim.num_envs, dtype=np.int64)
        self.sequence = self.layout.next_sequence(collector_id)
        self.report = CollectorReport(collector_id)
        self._ticks = 0
        self._depth: Optional[np.ndarray] = None  # type: ignore[type-arg]

    def _adopt(self, snapshot: Snapshot) -> None:
        snapshot.load_into(self.student)
        self.version = snapshot.version
        logger.debug("collector %d now runs policy version %d", self.collector_id, snapshot.version)

    def refresh_policy(self) -> None:
        try:
            snapshot = self.exchange.read_latest()
        except (DataCorruptionError, OSError) as err:
            logger.warning("collector %d keeps version %d: %s", self.collector_id, self.version, err)
            return
        if snapshot is not None:
            self._adopt(snapshot)

    def rollout(self, steps: int) -> StudentTrajectory:
        sim = self.sim
        n = sim.num_envs
        hidden = self.student.initial_hidden(n)
        buffers = {
            name: []
            for name in ("proprio", "last_action", "command", "depth", "velocity", "scandots", "resets", "dones", "episode", "step")
        }  # type: ignore[var-annotated]
        for t in range(steps):
            if self._depth is None or self._ticks % self.vision_every == 0:
                now = sim.get_current_time()
                self._depth = np.stack([v.frame(sim.pose(k), now).pixels for k, v in enumerate(self.vision)])
            base = sim.observation
            resets = base.resets[0].copy()
            resets |= t == 0
            obs = Observation(
                base.proprio,
                base.last_action,
                base.command,
                resets[None],
                scandots=base.scandots,
                depth=self._depth[None],
                velocity=base.velocity,
            )
            with no_grad():
                out = self.student.forward(obs, hidden)
            hidden = out.hidden
            buffers["proprio"].append(base.proprio[0])
            buffers["last_action"].append(base.last_action[0])
            buffers["command"].append(base.command[0])
            buffers["depth"].append(self._depth)
            buffers["velocity"].append(base.velocity[0])  # type: ignore[index]
            buffers["scandots"].append(base.scandots[0])  # type: ignore[index]
            buffers["resets"].append(resets)
            buffers["step"].append(sim.stats.steps.copy())
            buffers["episode"].append(self.episode.copy())
            _, _, dones = sim.step(out.mean[0])
            buffers["dones"].append(dones)
            self.episode += dones
            self._ticks += 1
        arrays = {name: np.stack(values) for name, values in buffers.items()}
        return StudentTrajectory(collector_id=self.collector_id, **arrays)

    def collect_file(self) -> Path:
        """Roll out, label and write one trajectory file.

        Raises
        ------
        OSError
            On a full disk, after removing the temporary files it left.
        """
        self.refresh_policy()
        trajectory = self.rollout(self.config.distill.steps_per_file)
        batch = dagger_label(self.oracle, trajectory)
        path = self.layout.trajectories / f"traj_c{self.collector_id:03d}_{self.sequence:06d}{TRAJECTORY_SUFFIX}"
        try:
            header = write_trajectory(path, batch, self.version)
        except OSError as err:
            if err.errno == errno.ENOSPC:
                for tmp in iter_temp_files(self.layout.trajectories):
                    tmp.unlink(missing_ok=True)
                logger.error("collector %d halted: %s", self.collector_id, err)
            raise
        self.sequence += 1
        self.report.files += 1
        self.report.records += header.record_count
        self.report.versions.append(self.version)
        return path

    def close(self) -> None:
        self.sim.finalize()


def collector_loop(
    config: RunConfig,
    collector_id: int,
    max_files: Optional[int] = None,
    oracle: Optional[OraclePolicy] = None,
) -> CollectorReport:
    """Write trajectory files until ``max_files``, the run time or a stop request."""
    collector = Collector(config, collector_id, oracle)
    orch = config.orchestration
    start = time.monotonic()
    try:
        while not collector.layout.stop_requested():
            if max_files is not None and collector.report.files >= max_files:
                break
            if orch.run_seconds and time.monotonic() - start >= orch.run_seconds:
                break
            collector.collect_file()
    finally:
        collector.close()
    logger.info(
        "collector %d wrote %d files, %d records", collector_id, collector.report.files, collector.report.records
    )
    return collector.report


def run_single(config: RunConfig, files: int, checkpoint_dir: Optional[Path] = None) -> TrainerReport:
    """Collector and trainer alternating in one process."""
    oracle = load_teacher(config)
    trainer = Trainer(config, oracle)
    collector = Collector(config, 0, oracle)
    start = time.monotonic()
    try:
        for _ in range(files):
            collector.collect_file()
            trainer.poll_once()
            if trainer.limit_reached():
                break
    finally:
        collector.close()
    trainer.report.elapsed = time.monotonic() - start
    return trainer.finish(checkpoint_dir)


def _collector_process(config: RunConfig, collector_id: int, log_level: int) -> CollectorReport:
    log_file = Path(config.orchestration.log_file) if config.orchestration.log_file else None
    configure_run_logging(log_level, log_file)
    return collector_loop(config, collector_id)


def run_distributed(
    config: RunConfig, max_idle: float = 0.0, checkpoint_dir: Optional[Path] = None
) -> TrainerReport:
    """One trainer in this process and ``orchestration.collectors`` collector processes.

    The trainer publishes the first student version before any collector
    starts and asks the collectors to stop, through the STOP file, once it
    is done.
    """
    layout = ExchangeLayout.from_config(config).ensure()
    layout.stop_file.unlink(missing_ok=True)
    oracle = load_teacher(config)
    Trainer(config, oracle)
    count = config.orchestration.collectors
    level = logging.getLogger("parkourpy").getEffectiveLevel()
    ctx = mp.get_context("spawn")
    with ctx.Pool(processes=count) as pool:
        pending = pool.starmap_async(_collector_process, [(config, k, level) for k in range(count)])
        try:
            report = trainer_loop(config, oracle, max_idle=max_idle, checkpoint_dir=checkpoint_dir)
        finally:
            atomic_write_bytes(layout.stop_file, b"stop\n")
        collectors = pending.get()
    for c in collectors:
        logger.info("collector %d: %d files on versions %s", c.collector_id, c.files, sorted(set(c.versions)))
    return report

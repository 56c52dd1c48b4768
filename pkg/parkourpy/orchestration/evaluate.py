"""Evaluation on connected tracks of increasing difficulty.

Every obstacle kind gets its own track of three sub-tracks whose difficulty
rises from the easy to the hard end of the testing range. An episode
succeeds when the robot reaches the end of the track; its distance is the
furthest forward progress, capped at the track length.
"""

__all__ = [
    "Agent",
    "FallingAgent",
    "PolicyAgent",
    "TeleportAgent",
    "TerrainResult",
    "evaluate",
    "format_table",
    "policy_from_snapshot",
    "write_results_csv",
]

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Protocol, Sequence, Union

import numpy as np
from numpy.typing import NDArray
from tqdm import tqdm

from parkourpy.config import RunConfig
from parkourpy.dynamics import LatencyBuffer
from parkourpy.neural.layers import no_grad
from parkourpy.neural.policy import OraclePolicy, PolicyDims, RecurrentPolicy, StudentPolicy
from parkourpy.neural.snapshot import Snapshot
from parkourpy.orchestration.deploy import VisionPipeline
from parkourpy.simwrapper import ParkourSim
from parkourpy.terrain import ObstacleKind, TrackLayout, build_track

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

SUCCESS_HEADER = "Success Rate (%)"
DISTANCE_HEADER = "Average Distance (m)"


class Agent(Protocol):
    def reset(self, sim: ParkourSim) -> None:
        ...

    def act(self, sim: ParkourSim) -> FloatArray:
        ...


class PolicyAgent:
    """Deterministic policy actions; students see rendered depth at the vision rate.

    Each environment reads its embedding back through its own randomized
    depth latency, as the deployment scheduler does.
    """

    def __init__(self, policy: RecurrentPolicy, config: RunConfig, vision_every: Optional[int] = None) -> None:
        self.policy = policy
        self.config = config
        control_hz = 1.0 / config.dynamics.params().control_dt
        self.vision_every = vision_every or max(1, int(round(control_hz / config.perception.vision_hz)))
        self.student = isinstance(policy, StudentPolicy)

    def reset(self, sim: ParkourSim) -> None:
        self.hidden = self.policy.initial_hidden(sim.num_envs)
        self.ticks = 0
        self.embedding: Optional[FloatArray] = None
        if self.student:
            self.vision = [
                VisionPipeline(sim.track.field, self.config.perception, self.config.seed + k, sim.dr.camera(k))
                for k in range(sim.num_envs)
            ]
            self.latency = [LatencyBuffer[FloatArray](float(lat)) for lat in sim.dr.depth_latency]

    def act(self, sim: ParkourSim) -> FloatArray:
        obs = sim.observation
        with no_grad():
            if self.student:
                now = sim.get_current_time()
                if self.ticks % self.vision_every == 0:
                    depth = np.stack([v.frame(sim.pose(k), now).pixels for k, v in enumerate(self.vision)])
                    fresh = self.policy.encoder.forward(depth[None])  # type: ignore[attr-defined]
                    for k, buffer in enumerate(self.latency):
                        buffer.push(now, fresh[:, k])
                self.embedding = np.stack([buffer.read(now) for buffer in self.latency], axis=1)
            out = self.policy.forward(obs, self.hidden, embedding=self.embedding if self.student else None)
        self.hidden = out.hidden
        self.ticks += 1
        return out.mean[0]  # type: ignore[no-any-return]


class TeleportAgent:
    """Scripted agent gliding along the track axis at a fixed speed.

    The base is carried at standing height over the highest ground within
    ``lookahead`` of its position, so it clears gaps and steps.
    """

    def __init__(self, speed: float = 1.0, lookahead: float = 0.7) -> None:
        self.speed = speed
        self.lookahead = lookahead

    def reset(self, sim: ParkourSim) -> None:
        pos = sim.get_value("base_position")
        self.lane = pos[:, 1].copy()
        self.standing = pos[:, 2] - sim.terrain_height(pos[:, 0], pos[:, 1])

    def act(self, sim: ParkourSim) -> FloatArray:
        pos = sim.get_value("base_position")
        x = pos[:, 0] + self.speed * sim.get_time_step()
        window = x[:, None] + np.linspace(-self.lookahead, self.lookahead, 29)[None, :]
        ground = sim.terrain_height(window, np.broadcast_to(self.lane[:, None], window.shape)).max(axis=1)
        pos[:, 0] = x
        pos[:, 1] = self.lane
        pos[:, 2] = ground + self.standing
        sim.set_value("base_position", np.ascontiguousarray(pos))
        return np.zeros((sim.num_envs, sim.joints.lower.size))


class FallingAgent:
    """Drops the base to the ground on the first step."""

    def reset(self, sim: ParkourSim) -> None:
        pass

    def act(self, sim: ParkourSim) -> FloatArray:
        pos = sim.get_value("base_position")
        pos[:, 2] = sim.terrain_height(pos[:, 0], pos[:, 1]) + 0.05
        sim.set_value("base_position", np.ascontiguousarray(pos))
        return np.zeros((sim.num_envs, sim.joints.lower.size))


@dataclass(frozen=True)
class TerrainResult:
    terrain: str
    episodes: int
    success_rate: float
    average_distance: float

    def row(self, policy: str) -> Dict[str, object]:
        return {
            "policy": policy,
            "terrain": self.terrain,
            "episodes": self.episodes,
            "success_rate": round(self.success_rate, 6),
            "average_distance": round(self.average_distance, 6),
        }


def run_episodes(sim: ParkourSim, agent: Agent) -> Dict[str, FloatArray]:
    """One episode per environment; outcomes are frozen at each episode's end."""
    agent.reset(sim)
    n = sim.num_envs
    finished = np.zeros(n, dtype=bool)
    distance = np.zeros(n)
    success = np.zeros(n, dtype=bool)
    while not finished.all():
        sim.set_value("action", np.ascontiguousarray(agent.act(sim), dtype=np.float64))
        sim.update()
        newly = sim.done & ~finished
        distance[newly] = sim.stats.distance[newly]
        success[newly] = sim.stats.success[newly]
        finished |= newly
    return {"distance": distance, "success": success}


def evaluate(
    agent: Agent,
    config: RunConfig,
    episodes: int = 10,
    kinds: Optional[Sequence[ObstacleKind]] = None,
    subtracks: int = 3,
    progress: bool = False,
) -> List[TerrainResult]:
    """Success rate and average distance per terrain.

    Parameters
    ----------
    agent : Agent
        Action source.
    config : RunConfig
        Run configuration; its seed fixes randomization and terrain noise.
    episodes : int, optional
        Episodes per terrain, run as parallel environments.
    kinds : sequence of ObstacleKind, optional
        Terrains to evaluate, default all ten.
    subtracks : int, optional
        Connected sub-tracks per track, default 3.
    """
    kinds = tuple(kinds or ObstacleKind)
    geometry = config.terrain.geometry()
    results = []
    for kind in tqdm(kinds, desc="eval", disable=not progress):
        layout = TrackLayout.evaluation_track(
            kind, subtracks, num_treads=config.terrain.num_treads, **geometry
        )
        track = build_track(
            layout,
            config.seed,
            config.terrain.cell_size,
            config.terrain.trench_depth,
            config.terrain.noise_amplitude,
            config.terrain.noise_octaves,
            config.terrain.noise_wavelength,
        )
        sim = ParkourSim(config, num_envs=episodes, track=track, auto_reset=False)
        sim.initialize()
        try:
            outcome = run_episodes(sim, agent)
        finally:
            sim.finalize()
        result = TerrainResult(
            kind.value,
            episodes,
            100.0 * float(np.mean(outcome["success"])),
            float(np.mean(np.minimum(outcome["distance"], layout.track_length))),
        )
        logger.info(
            "%s: success %.1f%%, distance %.2f m", kind.value, result.success_rate, result.average_distance
        )
        results.append(result)
    return results


def write_results_csv(path: Union[str, Path], results: Mapping[str, Sequence[TerrainResult]]) -> Path:
    """One row per (policy, terrain)."""
    path = Path(path)
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(
            f, fieldnames=["policy", "terrain", "episodes", "success_rate", "average_distance"]
        )
        writer.writeheader()
        for policy, rows in results.items():
            for result in rows:
                writer.writerow(result.row(policy))
    return path


def format_table(results: Mapping[str, Sequence[TerrainResult]]) -> str:
    """Policies as rows; for every terrain a success and a distance column."""
    if not results:
        return ""
    terrains = [r.terrain for r in next(iter(results.values()))]
    name_width = max(len("Policy"), *(len(name) for name in results))
    widths = [max(len(t), len(SUCCESS_HEADER), len(DISTANCE_HEADER)) for t in terrains]
    top = " " * name_width + "".join(f" | {t:^{2 * w + 3}}" for t, w in zip(terrains, widths))
    sub = f"{'Policy':<{name_width}}" + "".join(
        f" | {SUCCESS_HEADER:>{w}} | {DISTANCE_HEADER:>{w}}" for w in widths
    )
    lines = [top, sub, "-" * len(sub)]
    for name, rows in results.items():
        by_terrain = {r.terrain: r for r in rows}
        cells = []
        for t, w in zip(terrains, widths):
            r = by_terrain.get(t)
            success = "-" if r is None else f"{r.success_rate:.1f}"
            distance = "-" if r is None or math.isnan(r.average_distance) else f"{r.average_distance:.2f}"
            cells.append(f" | {success:>{w}} | {distance:>{w}}")
        lines.append(f"{name:<{name_width}}" + "".join(cells))
    return "\n".join(lines)


def policy_from_snapshot(snapshot: Snapshot, dims: PolicyDims) -> RecurrentPolicy:
    """Oracle or student, told apart by the encoder parameters."""
    student = any(name.startswith("encoder.conv0.") for name in snapshot.params)
    policy: RecurrentPolicy = StudentPolicy(dims) if student else OraclePolicy(dims)
    snapshot.load_into(policy)
    return policy

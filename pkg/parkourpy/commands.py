"""Locomotion commands, auto-command heading control and the terrain curriculum."""

__all__ = [
    "PARKOUR_RANGES",
    "PLANE_RANGES",
    "Command",
    "CommandRanges",
    "CurriculumState",
    "Stage",
    "assign_environments",
    "auto_command",
    "curriculum_update",
    "sample_command",
    "sample_commands",
]

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from parkourpy.dynamics import EpisodeStats
from parkourpy.errors import DomainError
from parkourpy.terrain import TrackLayout
from parkourpy.utils import env_rng, wrap_to_pi

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

SPAWN_STREAM = 1


class Stage(Enum):
    PLANE = "plane"
    PARKOUR = "parkour"


class Command(NamedTuple):
    vx: float
    vy: float
    yaw_rate: float


@dataclass(frozen=True)
class CommandRanges:
    vx: Tuple[float, float] = (-0.8, 2.0)
    vy: Tuple[float, float] = (-0.8, 0.8)
    yaw_rate: Tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self) -> None:
        for name in ("vx", "vy", "yaw_rate"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise DomainError(f"{name} range [{lo}, {hi}] is empty")

    def contains(self, cmd: Command) -> bool:
        return (
            self.vx[0] <= cmd.vx <= self.vx[1]
            and self.vy[0] <= cmd.vy <= self.vy[1]
            and self.yaw_rate[0] <= cmd.yaw_rate <= self.yaw_rate[1]
        )


PLANE_RANGES = CommandRanges()
PARKOUR_RANGES = replace(PLANE_RANGES, vx=(0.0, 2.0))


def _ranges_for(stage: Stage, ranges: Optional[CommandRanges]) -> CommandRanges:
    if ranges is not None:
        if stage is Stage.PARKOUR:
            return replace(ranges, vx=(max(ranges.vx[0], 0.0), max(ranges.vx[1], 0.0)))
        return ranges
    return PARKOUR_RANGES if stage is Stage.PARKOUR else PLANE_RANGES


def sample_command(
    seed: int, stage: Stage = Stage.PLANE, ranges: Optional[CommandRanges] = None
) -> Command:
    """Uniform command; the parkour stage only moves forward along the track."""
    return Command(*sample_commands(np.random.default_rng(seed), 1, stage, ranges)[0])


def sample_commands(
    rng: np.random.Generator,
    num: int,
    stage: Stage = Stage.PLANE,
    ranges: Optional[CommandRanges] = None,
) -> FloatArray:
    """``num`` commands as rows (vx, vy, yaw_rate)."""
    r = _ranges_for(stage, ranges)
    lows = np.array([r.vx[0], r.vy[0], r.yaw_rate[0]])
    highs = np.array([r.vx[1], r.vy[1], r.yaw_rate[1]])
    return rng.uniform(lows, highs, size=(num, 3))


def auto_command(
    theta_goal: ArrayLike,
    theta: ArrayLike,
    base_cmd: ArrayLike,
    alpha_yaw: float = 1.0,
    yaw_limit: Tuple[float, float] = PLANE_RANGES.yaw_rate,
) -> FloatArray:
    """Turn toward the track: yaw rate proportional to the heading error.

    Forward speed drops to zero while the heading error is at least pi/2.
    Works on single commands (shape (3,)) or batches (N, 3).
    """
    cmd = np.array(base_cmd, dtype=np.float64)
    error = np.asarray(wrap_to_pi(np.asarray(theta_goal) - np.asarray(theta)))
    out = np.atleast_2d(cmd).copy()
    err = np.broadcast_to(error, out.shape[:1])
    out[:, 2] = np.clip(alpha_yaw * err, *yaw_limit)
    out[:, 0] = np.where(np.abs(err) >= math.pi / 2, 0.0, out[:, 0])
    return out.reshape(cmd.shape)


@dataclass
class CurriculumState:
    """Difficulty row and obstacle column of every environment."""

    row: IntArray
    col: IntArray
    rows: int
    promote_fraction: float = 0.75
    demote_fraction: float = 0.5

    def __post_init__(self) -> None:
        self.row = np.asarray(self.row, dtype=np.int64)
        self.col = np.asarray(self.col, dtype=np.int64)
        if self.row.shape != self.col.shape:
            raise DomainError("row and col must have one entry per environment")
        if np.any((self.row < 0) | (self.row >= self.rows)):
            raise DomainError(f"rows must lie in [0, {self.rows})")

    def __len__(self) -> int:
        return int(self.row.shape[0])

    def copy(self) -> "CurriculumState":
        return replace(self, row=self.row.copy(), col=self.col.copy())


def curriculum_update(
    state: CurriculumState,
    stats: EpisodeStats,
    subtrack_length: float,
    forward_command: Optional[ArrayLike] = None,
    envs: Optional[ArrayLike] = None,
    resample_at_max: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> CurriculumState:
    """Promote or demote finished episodes by how far they got.

    A successful episode that covered at least ``promote_fraction`` of the
    sub-track moves one row harder; a fall short of ``demote_fraction``
    moves one row easier. Episodes whose forward command was not positive
    are left alone. With ``resample_at_max`` a promotion past the last row
    lands on a uniformly random row instead of staying there.

    Parameters
    ----------
    envs : array_like of int, optional
        Environments whose episode ended, default all.
    """
    out = state.copy()
    idx = np.arange(len(state)) if envs is None else np.asarray(envs, dtype=np.int64)
    if idx.size == 0:
        return out
    distance = stats.distance[idx]
    eligible = np.ones(idx.size, dtype=bool)
    if forward_command is not None:
        eligible = np.asarray(forward_command, dtype=np.float64)[idx] > 0
    promote = eligible & stats.success[idx] & (distance >= state.promote_fraction * subtrack_length)
    demote = eligible & stats.fall[idx] & (distance < state.demote_fraction * subtrack_length)
    rows = state.row[idx] + promote.astype(np.int64) - demote.astype(np.int64)
    capped = rows >= state.rows
    if resample_at_max and capped.any():
        rng = rng or np.random.default_rng()
        rows[capped] = rng.integers(0, state.rows, size=int(capped.sum()))
    out.row[idx] = np.clip(rows, 0, state.rows - 1)
    if promote.any() or demote.any():
        logger.debug("curriculum: %d promoted, %d demoted", int(promote.sum()), int(demote.sum()))
    return out


def assign_environments(
    num_envs: int, layout: TrackLayout, seed: int
) -> Tuple[CurriculumState, FloatArray]:
    """Spread environments over columns at row 0 with uniform initial yaw.

    Returns the curriculum state and the initial yaws, uniform in (-pi, pi].
    """
    col = np.arange(num_envs) % layout.cols
    u = np.array([env_rng(seed, k, SPAWN_STREAM).random() for k in range(num_envs)])
    yaw = math.pi - 2.0 * math.pi * u
    state = CurriculumState(np.zeros(num_envs, dtype=np.int64), col, layout.rows)
    return state, yaw

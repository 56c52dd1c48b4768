"""Reward terms, the virtual-obstacle penetration penalty and the footstep reward.

Every term is computed per environment (arrays of shape (N,)) and combined
by :func:`total_reward` into a :class:`RewardBreakdown`.
"""

__all__ = [
    "TERM_NAMES",
    "BodyPointMesh",
    "RewardBreakdown",
    "RewardLog",
    "RewardWeights",
    "compute_reward_terms",
    "feet_away",
    "footstep_reward",
    "penetration_depths",
    "penetration_penalty",
    "projected_gravity",
    "regularization_rewards",
    "safety_posture_rewards",
    "total_reward",
    "touchdown_events",
    "tracking_rewards",
]

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from types import TracebackType
from typing import Dict, Mapping, Optional, Sequence, TextIO, Tuple, Type, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from parkourpy.dynamics import (
    ARM_JOINTS,
    HIP_YAW,
    DynamicsParams,
    JointConfig,
    RobotState,
    link_bounds,
    rotation_matrices,
)
from parkourpy.errors import InputError
from parkourpy.terrain import SteppingTargets, VirtualObstacle

FloatArray = NDArray[np.float64]
Number = Union[float, FloatArray]

TORSO = 10
TRACKING_SIGMA = 0.25
FEET_AWAY_LIMIT = 0.4
FOOTSTEP_FLOOR = math.exp(-10.0)

TERM_NAMES: Tuple[str, ...] = (
    "lin_vel",
    "ang_vel",
    "orientation",
    "energy",
    "dof_vel",
    "dof_acc",
    "weighted_torques",
    "contact_forces",
    "collision",
    "action_rate",
    "arm_dof",
    "waist_dof",
    "hip_yaw_dof",
    "feet_away",
    "penetration",
    "footstep",
)


@dataclass(frozen=True)
class RewardWeights:
    lin_vel: float = 1.0
    ang_vel: float = 1.5
    orientation: float = -2.0
    energy: float = -2.5e-7
    dof_vel: float = -1e-4
    dof_acc: float = -2e-6
    weighted_torques: float = -1e-7
    contact_forces: float = -3e-4
    collision: float = -10.0
    action_rate: float = -6e-3
    arm_dof: float = -0.3
    waist_dof: float = -0.1
    hip_yaw_dof: float = -0.1
    feet_away: float = 0.4
    penetration: float = -5e-3
    footstep: float = 6.0

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)

    def without(self, *names: str) -> "RewardWeights":
        """Copy with the given terms switched off."""
        unknown = set(names) - {f.name for f in fields(self)}
        if unknown:
            raise InputError(f"unknown reward terms {sorted(unknown)}")
        return RewardWeights(**{k: (0.0 if k in names else v) for k, v in self.as_dict().items()})


@dataclass(frozen=True)
class RewardBreakdown:
    terms: Mapping[str, FloatArray]
    weights: Mapping[str, float]
    total: FloatArray

    def weighted(self, name: str) -> FloatArray:
        return self.weights[name] * self.terms[name]

    def means(self) -> Dict[str, float]:
        """Batch-mean of every raw term plus the total, for logging."""
        out = {name: float(np.mean(value)) for name, value in self.terms.items()}
        out["total"] = float(np.mean(self.total))
        return out


def projected_gravity(rpy: ArrayLike) -> FloatArray:
    """World gravity direction (0, 0, -1) expressed in the base frame, (N, 3)."""
    rot = rotation_matrices(rpy)
    return np.einsum("nji,j->ni", rot, np.array([0.0, 0.0, -1.0]))


def _body_velocity(state: RobotState) -> FloatArray:
    c = np.cos(state.base_rpy[:, 2])
    s = np.sin(state.base_rpy[:, 2])
    vx, vy = state.base_linvel[:, 0], state.base_linvel[:, 1]
    return np.column_stack([c * vx + s * vy, -s * vx + c * vy])


def tracking_rewards(state: RobotState, cmd: ArrayLike) -> Tuple[FloatArray, FloatArray]:
    """Velocity tracking in the heading frame.

    ``cmd`` rows are (vx, vy, yaw_rate). Returns
    ``exp(-|v_xy - cmd_xy| / 0.25)`` and ``exp(-|yaw_rate - cmd_yaw| / 0.25)``.
    """
    cmd = np.asarray(cmd, dtype=np.float64).reshape(-1, 3)
    lin_err = np.linalg.norm(_body_velocity(state) - cmd[:, :2], axis=1)
    ang_err = np.abs(state.base_angvel[:, 2] - cmd[:, 2])
    return np.exp(-lin_err / TRACKING_SIGMA), np.exp(-ang_err / TRACKING_SIGMA)


def regularization_rewards(
    state: RobotState,
    prev_state: RobotState,
    action: ArrayLike,
    prev_action: ArrayLike,
    cfg: JointConfig,
    dt: float = 0.02,
    contact_threshold: float = 400.0,
) -> Dict[str, FloatArray]:
    """Smoothness, effort, contact and collision penalties (unweighted)."""
    g = projected_gravity(state.base_rpy)
    qdd = (state.qd - prev_state.qd) / dt
    force = state.contact_force
    over = np.where(force >= contact_threshold, force - contact_threshold, 0.0)
    return {
        "orientation": g[:, 0] ** 2 + g[:, 1] ** 2,
        "energy": np.sum((state.tau * state.qd) ** 2, axis=1),
        "dof_vel": np.sum(state.qd**2, axis=1),
        "dof_acc": np.sum(qdd**2, axis=1),
        "weighted_torques": np.sum((state.tau / cfg.kp) ** 2, axis=1),
        "contact_forces": np.sum(over, axis=1),
        "collision": np.sum(state.collision_force > 0.1, axis=1).astype(np.float64),
        "action_rate": np.sum((np.asarray(prev_action) - np.asarray(action)) ** 2, axis=1),
    }


def feet_away(state: RobotState, limit: float = FEET_AWAY_LIMIT) -> FloatArray:
    gap = np.linalg.norm(state.foot_pos[:, 0] - state.foot_pos[:, 1], axis=1)
    return np.minimum(gap, limit)


def safety_posture_rewards(state: RobotState) -> Dict[str, FloatArray]:
    q = state.q
    return {
        "arm_dof": np.sum(q[:, ARM_JOINTS] ** 2, axis=1),
        "waist_dof": q[:, TORSO] ** 2,
        "hip_yaw_dof": np.sum(q[:, HIP_YAW] ** 2, axis=1),
        "feet_away": feet_away(state),
    }


class BodyPointMesh:
    """Points bound to the body links, with their world velocities.

    Built from the link bounding boxes as a 2x2x2 corner lattice per link;
    velocities are finite differences against the previous state.
    """

    def __init__(self, points: ArrayLike, velocities: ArrayLike) -> None:
        self.points = np.asarray(points, dtype=np.float64)
        self.velocities = np.asarray(velocities, dtype=np.float64)
        if self.points.ndim != 3 or self.points.shape[-1] != 3:
            raise InputError(f"points must have shape (N, P, 3), got {self.points.shape}")
        if self.velocities.shape != self.points.shape:
            raise InputError("velocities must match the point array")

    @staticmethod
    def lattice(bounds: FloatArray) -> FloatArray:
        """Box corners, (N, links * 8, 3), from (N, links, 2, 3) lower/upper bounds."""
        corners = np.array(
            [[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.intp
        )
        lo = bounds[:, :, None, 0, :]
        hi = bounds[:, :, None, 1, :]
        points = np.where(corners[None, None] == 0, lo, hi)
        return points.reshape(bounds.shape[0], -1, 3)

    @classmethod
    def from_states(
        cls,
        state: RobotState,
        prev_state: RobotState,
        dt: float,
        params: Optional[DynamicsParams] = None,
    ) -> "BodyPointMesh":
        now = cls.lattice(link_bounds(state, params))
        before = cls.lattice(link_bounds(prev_state, params))
        return cls(now, (now - before) / dt)

    @property
    def points_per_link(self) -> int:
        return 8


def penetration_depths(mesh: BodyPointMesh, obstacles: Sequence[VirtualObstacle]) -> FloatArray:
    """Deepest penetration of each point over all boxes containing it, (N, P)."""
    depth = np.zeros(mesh.points.shape[:2])
    for box in obstacles:
        depth = np.maximum(depth, box.penetration_depth(mesh.points))
    return depth


def penetration_penalty(
    mesh: BodyPointMesh, obstacles: Sequence[VirtualObstacle], alpha: float = -5e-3
) -> FloatArray:
    """``alpha * sum_p d(p) * |v(p)|`` per environment."""
    speed = np.linalg.norm(mesh.velocities, axis=-1)
    return alpha * np.sum(penetration_depths(mesh, obstacles) * speed, axis=1)


def footstep_reward(
    touchdown_x: float,
    targets: SteppingTargets,
    alpha: float = 6.0,
    floor: float = FOOTSTEP_FLOOR,
) -> float:
    """``alpha * -ln |d_x|`` for the nearest target, 0 without targets."""
    if not targets:
        return 0.0
    miss = abs(touchdown_x - targets.nearest(touchdown_x))
    return alpha * -math.log(max(miss, floor))


def touchdown_events(contact: ArrayLike, prev_contact: ArrayLike) -> NDArray[np.bool_]:
    """Feet that just made contact."""
    return np.asarray(contact, dtype=bool) & ~np.asarray(prev_contact, dtype=bool)


def total_reward(
    terms: Mapping[str, Number],
    weights: Optional[RewardWeights] = None,
    extra: Optional[Mapping[str, Tuple[float, Number]]] = None,
) -> RewardBreakdown:
    """Weighted sum of named terms.

    Missing standard terms count as zero. ``extra`` maps additional term
    names to ``(weight, value)`` pairs, for instance an alternative gait
    reward being compared against the default stack.
    """
    weights_map = (weights or RewardWeights()).as_dict()
    extra = dict(extra or {})
    clash = set(extra) & set(weights_map)
    if clash:
        raise InputError(f"extra terms shadow standard terms {sorted(clash)}")
    unknown = set(terms) - set(weights_map)
    if unknown:
        raise InputError(f"unknown reward terms {sorted(unknown)}")
    sizes = [np.size(v) for v in terms.values()] + [np.size(v) for _, v in extra.values()]
    n = max(sizes, default=1)
    out_terms: Dict[str, FloatArray] = {}
    total = np.zeros(n)
    for name in TERM_NAMES:
        value = np.broadcast_to(np.asarray(terms.get(name, 0.0), dtype=np.float64), (n,))
        out_terms[name] = value
        total = total + weights_map[name] * value
    for name, (weight, raw) in extra.items():
        value = np.broadcast_to(np.asarray(raw, dtype=np.float64), (n,))
        out_terms[name] = value
        weights_map[name] = weight
        total = total + weight * value
    return RewardBreakdown(out_terms, weights_map, total)


def compute_reward_terms(
    state: RobotState,
    prev_state: RobotState,
    action: ArrayLike,
    prev_action: ArrayLike,
    command: ArrayLike,
    joints: JointConfig,
    obstacles: Sequence[Sequence[VirtualObstacle]],
    targets: Sequence[SteppingTargets],
    dt: float = 0.02,
    contact_threshold: float = 400.0,
    params: Optional[DynamicsParams] = None,
) -> Dict[str, FloatArray]:
    """All unweighted terms of one control step.

    ``obstacles`` and ``targets`` hold the virtual obstacles and stepping
    targets of each environment's current cell.
    """
    lin, ang = tracking_rewards(state, command)
    terms: Dict[str, FloatArray] = {"lin_vel": lin, "ang_vel": ang}
    terms.update(regularization_rewards(state, prev_state, action, prev_action, joints, dt, contact_threshold))
    terms.update(safety_posture_rewards(state))

    n = state.num_envs
    penetration = np.zeros(n)
    if any(obstacles):
        mesh = BodyPointMesh.from_states(state, prev_state, dt, params)
        speed = np.linalg.norm(mesh.velocities, axis=-1)
        for i, boxes in enumerate(obstacles):
            if boxes:
                depth = np.zeros(mesh.points.shape[1])
                for box in boxes:
                    depth = np.maximum(depth, box.penetration_depth(mesh.points[i]))
                penetration[i] = np.sum(depth * speed[i])
    terms["penetration"] = penetration

    footstep = np.zeros(n)
    events = touchdown_events(state.foot_contact, prev_state.foot_contact)
    for i, foot in zip(*np.nonzero(events)):
        footstep[i] += footstep_reward(float(state.foot_pos[i, foot, 0]), targets[i], alpha=1.0)
    terms["footstep"] = footstep
    return terms


class RewardLog:
    """CSV of per-term batch means: one ``step,term,value`` row per term."""

    def __init__(self, path: Union[str, Path]) -> None:
        self.path = Path(path)
        new = not self.path.exists()
        self._file: TextIO = self.path.open("a", newline="")
        self._writer = csv.writer(self._file)
        if new:
            self._writer.writerow(["step", "term", "value"])

    def write(self, step: int, breakdown: RewardBreakdown) -> None:
        for name, value in breakdown.means().items():
            self._writer.writerow([step, name, repr(value)])

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> "RewardLog":
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc: Optional[BaseException],
        tb: Optional[TracebackType],
    ) -> None:
        self.close()

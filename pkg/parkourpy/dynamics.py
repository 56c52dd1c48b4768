"""Surrogate humanoid dynamics over a heightfield.

This is a kinematic stand-in for a rigid-body engine, not a physics model.
Joints are PD actuated with torque limits and integrated semi-implicitly.
The base is carried by whichever leg reaches highest above the terrain, is
pushed horizontally by stance feet sweeping backwards, and tips about the
support feet. All functions operate on batches: arrays carry the
environment index in their leading axis.
"""

__all__ = [
    "DR_RANGES",
    "DEFAULT_POSE",
    "JOINT_NAMES",
    "LINK_NAMES",
    "NUM_JOINTS",
    "DomainRandomization",
    "DynamicsParams",
    "EpisodeStats",
    "JointConfig",
    "LatencyBuffer",
    "RobotState",
    "TimedSample",
    "apply_latency",
    "check_termination",
    "clip_action_for_safety",
    "initial_state",
    "joint_power",
    "leg_kinematics",
    "link_bounds",
    "pd_torque",
    "proprioception",
    "rotation_matrices",
    "sample_domain_randomization",
    "step",
]

import logging
from collections import deque
from dataclasses import dataclass, field, fields
from typing import Deque, Generic, Mapping, Optional, Sequence, Tuple, TypeVar

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.transform import Rotation

from parkourpy.errors import InputError
from parkourpy.perception import BasePose, CameraExtrinsics
from parkourpy.terrain import HeightField, height_at
from parkourpy.utils import env_rng

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]

JOINT_NAMES: Tuple[str, ...] = (
    "left_hip_yaw",
    "left_hip_roll",
    "left_hip_pitch",
    "left_knee",
    "left_ankle",
    "right_hip_yaw",
    "right_hip_roll",
    "right_hip_pitch",
    "right_knee",
    "right_ankle",
    "torso",
    "left_shoulder_pitch",
    "left_shoulder_roll",
    "left_shoulder_yaw",
    "left_elbow",
    "right_shoulder_pitch",
    "right_shoulder_roll",
    "right_shoulder_yaw",
    "right_elbow",
)
NUM_JOINTS = len(JOINT_NAMES)

HIP_YAW = np.array([0, 5])
HIP_ROLL = np.array([1, 6])
HIP_PITCH = np.array([2, 7])
KNEE = np.array([3, 8])
ANKLE = np.array([4, 9])
LEG_JOINTS = np.arange(10)
ARM_JOINTS = np.arange(11, 19)
SIDES = np.array([1.0, -1.0])  # left, right

# kp, kd, torque limit (Nm), reflected inertia (kg m^2), lower, upper (rad)
_JOINT_TABLE: Mapping[str, Tuple[float, float, float, float, float, float]] = {
    "hip_yaw": (60.0, 1.5, 200.0, 0.1, -0.43, 0.43),
    "hip_roll": (220.0, 4.0, 200.0, 0.1, -0.43, 0.43),
    "hip_pitch": (220.0, 4.0, 200.0, 0.1, -1.57, 1.57),
    "knee": (320.0, 4.0, 300.0, 0.1, -0.26, 2.05),
    "ankle": (40.0, 2.0, 40.0, 0.03, -0.87, 0.52),
    "torso": (200.0, 3.0, 200.0, 0.3, -2.35, 2.35),
    "shoulder_pitch": (30.0, 1.0, 40.0, 0.03, -2.87, 2.87),
    "shoulder_roll": (30.0, 1.0, 40.0, 0.03, -1.5, 1.5),
    "shoulder_yaw": (20.0, 0.5, 18.0, 0.02, -1.3, 1.3),
    "elbow": (20.0, 0.5, 18.0, 0.02, -1.25, 2.61),
}

DEFAULT_POSE = np.zeros(NUM_JOINTS)
DEFAULT_POSE[HIP_PITCH] = -0.4
DEFAULT_POSE[KNEE] = 0.8
DEFAULT_POSE[ANKLE] = -0.4
DEFAULT_POSE.flags.writeable = False

# (low, high) uniform sampling ranges
DR_RANGES: Mapping[str, Tuple[float, float]] = {
    "added_mass": (-1.0, 5.0),
    "com_x": (-0.1, 0.1),
    "com_y": (-0.15, 0.15),
    "com_z": (-0.2, 0.2),
    "friction": (-0.2, 2.0),
    "motor_strength": (0.8, 1.2),
    "proprio_latency": (0.005, 0.045),
    "depth_latency": (0.06, 0.12),
    "camera_fov": (86.0, 90.0),
    "camera_x": (0.1, 0.12),
    "camera_y": (-0.02, -0.015),
    "camera_z": (0.64, 0.7),
    "camera_roll": (-0.1, 0.1),
    "camera_pitch": (0.77, 0.99),
    "camera_yaw": (-0.1, 0.1),
}


def _group(name: str) -> str:
    for prefix in ("left_", "right_"):
        if name.startswith(prefix):
            return name[len(prefix) :]
    return name


@dataclass(frozen=True)
class JointConfig:
    names: Tuple[str, ...]
    kp: FloatArray
    kd: FloatArray
    torque_limit: FloatArray
    inertia: FloatArray
    lower: FloatArray
    upper: FloatArray

    def __post_init__(self) -> None:
        n = len(self.names)
        for f in fields(self)[1:]:
            value = np.asarray(getattr(self, f.name), dtype=np.float64)
            if value.shape != (n,):
                raise InputError(f"{f.name} must have {n} entries, got shape {value.shape}")
            object.__setattr__(self, f.name, value)
        if np.any(self.kp <= 0) or np.any(self.inertia <= 0) or np.any(self.lower >= self.upper):
            raise InputError("joint gains, inertias and limits must be positive and ordered")

    @classmethod
    def h1(cls) -> "JointConfig":
        """The 19 actuated joints of the humanoid, with per-group gains."""
        rows = np.array([_JOINT_TABLE[_group(name)] for name in JOINT_NAMES])
        return cls(JOINT_NAMES, *rows.T)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class DynamicsParams:
    """Constants of the surrogate law."""

    sim_dt: float = 0.005
    decimation: int = 4
    action_scale: float = 0.25
    gravity: float = 9.81
    k_contact: float = 5000.0
    contact_threshold: float = 0.01
    step_tolerance: float = 0.05
    thigh_length: float = 0.4
    shank_length: float = 0.4
    foot_height: float = 0.05
    hip_offset: float = 0.1
    k_velocity: float = 8.0
    k_attitude: float = 20.0
    d_attitude: float = 6.0
    k_tip: float = 10.0
    hip_reaction: float = 0.02
    max_lift_speed: float = 2.0
    nominal_mass: float = 47.0
    com_bias_gain: float = 1.0
    fall_attitude: float = 1.0
    fall_clearance: float = 0.3
    floor_height: float = 0.0

    @property
    def control_dt(self) -> float:
        return self.sim_dt * self.decimation


@dataclass
class DomainRandomization:
    """Per-environment physical and sensor perturbations, one row per env."""

    added_mass: FloatArray
    com_offset: FloatArray
    friction: FloatArray
    motor_strength: FloatArray
    proprio_latency: FloatArray
    depth_latency: FloatArray
    camera_fov: FloatArray
    camera_position: FloatArray
    camera_rpy: FloatArray

    def __len__(self) -> int:
        return int(self.added_mass.shape[0])

    @classmethod
    def nominal(cls, num_envs: int = 1) -> "DomainRandomization":
        cam = CameraExtrinsics()
        return cls(
            added_mass=np.zeros(num_envs),
            com_offset=np.zeros((num_envs, 3)),
            friction=np.ones(num_envs),
            motor_strength=np.ones(num_envs),
            proprio_latency=np.zeros(num_envs),
            depth_latency=np.zeros(num_envs),
            camera_fov=np.full(num_envs, cam.fov),
            camera_position=np.tile(cam.position, (num_envs, 1)),
            camera_rpy=np.tile(cam.orientation, (num_envs, 1)),
        )

    def camera(self, index: int) -> CameraExtrinsics:
        return CameraExtrinsics(
            tuple(self.camera_position[index]),  # type: ignore[arg-type]
            tuple(self.camera_rpy[index]),  # type: ignore[arg-type]
            float(self.camera_fov[index]),
        )

    def take(self, index: ArrayLike) -> "DomainRandomization":
        idx = np.asarray(index)
        return DomainRandomization(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    def assign(self, index: ArrayLike, other: "DomainRandomization") -> None:
        idx = np.asarray(index)
        for f in fields(self):
            getattr(self, f.name)[idx] = getattr(other, f.name)

    def within(self, ranges: Mapping[str, Tuple[float, float]] = DR_RANGES) -> bool:
        flat = _dr_columns(self)
        return all(
            bool(np.all((flat[key] >= lo) & (flat[key] <= hi))) for key, (lo, hi) in ranges.items()
        )


def _dr_columns(dr: DomainRandomization) -> Mapping[str, FloatArray]:
    return {
        "added_mass": dr.added_mass,
        "com_x": dr.com_offset[:, 0],
        "com_y": dr.com_offset[:, 1],
        "com_z": dr.com_offset[:, 2],
        "friction": dr.friction,
        "motor_strength": dr.motor_strength,
        "proprio_latency": dr.proprio_latency,
        "depth_latency": dr.depth_latency,
        "camera_fov": dr.camera_fov,
        "camera_x": dr.camera_position[:, 0],
        "camera_y": dr.camera_position[:, 1],
        "camera_z": dr.camera_position[:, 2],
        "camera_roll": dr.camera_rpy[:, 0],
        "camera_pitch": dr.camera_rpy[:, 1],
        "camera_yaw": dr.camera_rpy[:, 2],
    }


def sample_domain_randomization(
    seed: int,
    num_envs: int = 1,
    first_index: int = 0,
    ranges: Mapping[str, Tuple[float, float]] = DR_RANGES,
) -> DomainRandomization:
    """Uniform draws within every range; env ``k`` uses stream ``(seed, first_index + k)``."""
    keys = list(DR_RANGES)
    lows = np.array([ranges[k][0] for k in keys])
    highs = np.array([ranges[k][1] for k in keys])
    draws = np.stack(
        [env_rng(seed, first_index + k).uniform(lows, highs) for k in range(num_envs)]
    ).reshape(num_envs, len(keys))
    col = {k: draws[:, i] for i, k in enumerate(keys)}
    return DomainRandomization(
        added_mass=col["added_mass"],
        com_offset=np.stack([col["com_x"], col["com_y"], col["com_z"]], axis=1),
        friction=col["friction"],
        motor_strength=col["motor_strength"],
        proprio_latency=col["proprio_latency"],
        depth_latency=col["depth_latency"],
        camera_fov=col["camera_fov"],
        camera_position=np.stack([col["camera_x"], col["camera_y"], col["camera_z"]], axis=1),
        camera_rpy=np.stack([col["camera_roll"], col["camera_pitch"], col["camera_yaw"]], axis=1),
    )


def pd_torque(
    q_target: ArrayLike,
    q: ArrayLike,
    qd: ArrayLike,
    cfg: JointConfig,
    motor_strength: ArrayLike = 1.0,
) -> FloatArray:
    """Clamped PD torque, ``motor_strength * (kp * (q_target - q) - kd * qd)``."""
    raw = np.asarray(motor_strength) * (
        cfg.kp * (np.asarray(q_target) - np.asarray(q)) - cfg.kd * np.asarray(qd)
    )
    return np.clip(raw, -cfg.torque_limit, cfg.torque_limit)


def clip_action_for_safety(
    q_target: ArrayLike, q: ArrayLike, qd: ArrayLike, cfg: JointConfig
) -> FloatArray:
    """Limit targets so the nominal PD law stays within the torque limits."""
    q = np.asarray(q)
    qd = np.asarray(qd)
    lo = (cfg.kd * qd - cfg.torque_limit) / cfg.kp + q
    hi = (cfg.kd * qd + cfg.torque_limit) / cfg.kp + q
    return np.clip(q_target, lo, hi)


@dataclass
class RobotState:
    """Batched robot state.

    Shapes, for ``N`` environments: base vectors (N, 3), joints (N, 19),
    feet (N, 2, ...) ordered left, right, collision forces (N, 3) for left
    knee, right knee and pelvis.
    """

    base_pos: FloatArray
    base_rpy: FloatArray
    base_linvel: FloatArray
    base_angvel: FloatArray
    q: FloatArray
    qd: FloatArray
    foot_pos: FloatArray
    foot_contact: BoolArray
    contact_force: FloatArray
    tau: FloatArray = field(default_factory=lambda: np.zeros((0, NUM_JOINTS)))
    collision_force: FloatArray = field(default_factory=lambda: np.zeros((0, 3)))
    fault: BoolArray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self) -> None:
        n = self.base_pos.shape[0]
        if self.tau.shape[0] != n:
            self.tau = np.zeros((n, NUM_JOINTS))
        if self.collision_force.shape[0] != n:
            self.collision_force = np.zeros((n, 3))
        if self.fault.shape[0] != n:
            self.fault = np.zeros(n, dtype=bool)

    @property
    def num_envs(self) -> int:
        return int(self.base_pos.shape[0])

    def copy(self) -> "RobotState":
        return RobotState(**{f.name: np.array(getattr(self, f.name), copy=True) for f in fields(self)})

    def take(self, index: ArrayLike) -> "RobotState":
        idx = np.atleast_1d(np.asarray(index))
        return RobotState(**{f.name: np.array(getattr(self, f.name)[idx]) for f in fields(self)})

    def assign(self, index: ArrayLike, other: "RobotState") -> None:
        idx = np.asarray(index)
        for f in fields(self):
            getattr(self, f.name)[idx] = getattr(other, f.name)

    def pose(self, index: int = 0) -> BasePose:
        return BasePose(
            tuple(float(v) for v in self.base_pos[index]),  # type: ignore[arg-type]
            tuple(float(v) for v in self.base_rpy[index]),  # type: ignore[arg-type]
        )

    def is_finite(self) -> BoolArray:
        ok = np.ones(self.num_envs, dtype=bool)
        for f in fields(self):
            value = getattr(self, f.name)
            if value.dtype.kind == "f":
                ok &= np.all(np.isfinite(value.reshape(self.num_envs, -1)), axis=1)
        return ok


def rotation_matrices(rpy: ArrayLike) -> FloatArray:
    """Body-to-world rotations (N, 3, 3) from roll/pitch/yaw rows, yaw applied last."""
    rpy = np.asarray(rpy, dtype=np.float64).reshape(-1, 3)
    return Rotation.from_euler("ZYX", rpy[:, ::-1]).as_matrix().reshape(-1, 3, 3)  # type: ignore[no-any-return]


def leg_kinematics(q: FloatArray, params: DynamicsParams) -> Tuple[FloatArray, FloatArray]:
    """Body-frame foot and knee positions, each (N, 2, 3), from the leg joints.

    Each leg is a planar thigh/shank chain in hip pitch and knee, rolled
    about the body x axis by the hip roll angle.
    """
    q = np.asarray(q).reshape(-1, NUM_JOINTS)
    pitch = q[:, HIP_PITCH]
    shank_angle = pitch + q[:, KNEE]
    roll = q[:, HIP_ROLL]
    knee_x = -params.thigh_length * np.sin(pitch)
    knee_z = -params.thigh_length * np.cos(pitch)
    foot_x = knee_x - params.shank_length * np.sin(shank_angle)
    foot_z = knee_z - params.shank_length * np.cos(shank_angle) - params.foot_height
    hip_y = SIDES * params.hip_offset
    cos_r, sin_r = np.cos(roll), np.sin(roll)

    def place(x: FloatArray, z: FloatArray) -> FloatArray:
        out = np.empty(x.shape + (3,))
        out[..., 0] = x
        out[..., 1] = hip_y - z * sin_r
        out[..., 2] = z * cos_r
        return out

    return place(foot_x, foot_z), place(knee_x, knee_z)


def _to_world(rot: FloatArray, vectors: FloatArray) -> FloatArray:
    return np.einsum("nij,nkj->nki", rot, vectors)


def _support_height(
    field: HeightField, base_xy: FloatArray, world_rel: FloatArray
) -> Tuple[FloatArray, FloatArray]:
    """Per-foot terrain height and the base height each foot would carry."""
    fx = base_xy[:, 0, None] + world_rel[..., 0]
    fy = base_xy[:, 1, None] + world_rel[..., 1]
    terrain = height_at(field, fx, fy)
    return terrain, terrain - world_rel[..., 2]


def initial_state(
    field: HeightField,
    xy: ArrayLike,
    yaw: ArrayLike,
    params: Optional[DynamicsParams] = None,
    q: Optional[ArrayLike] = None,
) -> RobotState:
    """Robots standing at rest in the default pose on the terrain."""
    params = params or DynamicsParams()
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    n = xy.shape[0]
    yaw = np.broadcast_to(np.asarray(yaw, dtype=np.float64), (n,))
    joints = np.tile(DEFAULT_POSE, (n, 1)) if q is None else np.array(q, dtype=np.float64).reshape(n, -1)
    rpy = np.zeros((n, 3))
    rpy[:, 2] = yaw
    rot = rotation_matrices(rpy)
    foot_rel, _ = leg_kinematics(joints, params)
    world_rel = _to_world(rot, foot_rel)
    terrain, carried = _support_height(field, xy, world_rel)
    z = carried.max(axis=1)
    base_pos = np.column_stack([xy, z])
    feet = base_pos[:, None, :] + world_rel
    return RobotState(
        base_pos=base_pos,
        base_rpy=rpy,
        base_linvel=np.zeros((n, 3)),
        base_angvel=np.zeros((n, 3)),
        q=joints,
        qd=np.zeros((n, NUM_JOINTS)),
        foot_pos=feet,
        foot_contact=feet[..., 2] - terrain <= params.contact_threshold,
        contact_force=np.zeros((n, 2)),
    )


def _substep(
    state: RobotState,
    target: FloatArray,
    field: HeightField,
    dr: DomainRandomization,
    dt: float,
    params: DynamicsParams,
    joints: JointConfig,
) -> RobotState:
    n = state.num_envs
    rot = rotation_matrices(state.base_rpy)
    rel_before, _ = leg_kinematics(state.q, params)

    tau = pd_torque(target, state.q, state.qd, joints, dr.motor_strength[:, None])
    qd = state.qd + tau / joints.inertia * dt
    q = state.q + qd * dt
    clamped = (q < joints.lower) | (q > joints.upper)
    q = np.clip(q, joints.lower, joints.upper)
    qd = np.where(clamped, 0.0, qd)

    foot_rel, knee_rel = leg_kinematics(q, params)
    foot_rel_vel = (foot_rel - rel_before) / dt
    world_rel = _to_world(rot, foot_rel)
    xy = state.base_pos[:, :2]
    z = state.base_pos[:, 2]

    # vertical: ballistic unless a leg carries the base
    vz = state.base_linvel[:, 2] - params.gravity * dt
    z_pred = z + vz * dt
    terrain, carried = _support_height(field, xy, world_rel)
    sinking = carried - z_pred[:, None]
    supporting = sinking <= params.step_tolerance
    support = np.where(supporting, carried, -np.inf).max(axis=1)
    snapped = z_pred <= support
    new_z = np.where(snapped, support, z_pred)
    vz = np.where(snapped, np.clip((support - z) / dt, 0.0, params.max_lift_speed), vz)

    foot_z = new_z[:, None] + world_rel[..., 2]
    contact = (foot_z - terrain <= params.contact_threshold) & supporting
    contact_force = np.where(contact, params.k_contact * np.maximum(sinking, 0.0), 0.0)

    # horizontal: stance feet sweeping backwards drive the base
    w = contact.astype(np.float64)
    stance = np.maximum(w.sum(axis=1), 1.0)
    grounded = contact.any(axis=1)
    world_vel = _to_world(rot, foot_rel_vel)
    v_leg = -(w[..., None] * world_vel[..., :2]).sum(axis=1) / stance[:, None]
    traction = np.clip(dr.friction, 0.1, 1.0)
    mass_factor = params.nominal_mass / (params.nominal_mass + dr.added_mass)
    gain = params.k_velocity * traction * mass_factor * grounded
    v_xy = state.base_linvel[:, :2] + (gain[:, None] * (v_leg - state.base_linvel[:, :2])) * dt
    yaw_leg = -(w * qd[:, HIP_YAW]).sum(axis=1) / stance
    wz = state.base_angvel[:, 2] + gain * (yaw_leg - state.base_angvel[:, 2]) * dt
    new_xy = xy + v_xy * dt

    # frontal collision: a foot would enter terrain above the step tolerance
    ahead, _ = _support_height(field, new_xy, world_rel)
    blocked = np.any(ahead - foot_z > params.step_tolerance, axis=1)
    new_xy = np.where(blocked[:, None], xy, new_xy)
    v_xy = np.where(blocked[:, None], 0.0, v_xy)

    # attitude: restoring spring toward the COM bias, tipping about the support
    com = dr.com_offset
    bias = np.column_stack([-params.com_bias_gain * com[:, 1], params.com_bias_gain * com[:, 0]])
    com_world = new_xy + _to_world(rot, com[:, None, :])[:, 0, :2]
    feet_xy = new_xy[:, None, :] + world_rel[..., :2]
    center = (w[..., None] * feet_xy).sum(axis=1) / stance[:, None]
    offset_world = np.where(grounded[:, None], com_world - center, 0.0)
    c, s = np.cos(state.base_rpy[:, 2]), np.sin(state.base_rpy[:, 2])
    dx = c * offset_world[:, 0] + s * offset_world[:, 1]
    dy = -s * offset_world[:, 0] + c * offset_world[:, 1]
    hip_tau = (w * tau[:, HIP_PITCH]).sum(axis=1)
    att = state.base_rpy[:, :2]
    omega = state.base_angvel[:, :2]
    acc = -params.k_attitude * (att - bias) - params.d_attitude * omega
    acc[:, 0] -= params.k_tip * dy
    acc[:, 1] += params.k_tip * dx - params.hip_reaction * hip_tau
    omega = omega + acc * dt
    rpy = state.base_rpy.copy()
    rpy[:, :2] = att + omega * dt
    rpy[:, 2] = rpy[:, 2] + wz * dt

    base_pos = np.column_stack([new_xy, new_z])
    feet = base_pos[:, None, :] + world_rel
    knees = base_pos[:, None, :] + _to_world(rot, knee_rel)
    knee_terrain = height_at(field, knees[..., 0], knees[..., 1])
    pelvis_terrain = height_at(field, new_xy[:, 0], new_xy[:, 1])
    collision = np.column_stack(
        [
            params.k_contact * np.maximum(knee_terrain - knees[..., 2], 0.0),
            params.k_contact * np.maximum(pelvis_terrain - new_z, 0.0),
        ]
    )
    return RobotState(
        base_pos=base_pos,
        base_rpy=rpy,
        base_linvel=np.column_stack([v_xy, vz]),
        base_angvel=np.column_stack([omega, wz]),
        q=q,
        qd=qd,
        foot_pos=feet,
        foot_contact=contact,
        contact_force=contact_force,
        tau=tau,
        collision_force=collision.reshape(n, 3),
        fault=state.fault.copy(),
    )


def step(
    state: RobotState,
    action: ArrayLike,
    field: HeightField,
    dr: DomainRandomization,
    dt: Optional[float] = None,
    *,
    params: Optional[DynamicsParams] = None,
    joints: Optional[JointConfig] = None,
) -> RobotState:
    """Advance every environment by one control step.

    The joint target ``default_pose + action * action_scale`` is held for
    ``decimation`` simulation steps of length ``dt``. Rows whose action is
    not finite are flagged as faults and actuated with a zero action.

    Returns
    -------
    RobotState
        A new state; the input is left untouched.
    """
    params = params or DynamicsParams()
    joints = joints or JointConfig.h1()
    dt = params.sim_dt if dt is None else dt
    action = np.array(action, dtype=np.float64).reshape(state.num_envs, NUM_JOINTS)
    bad = ~np.all(np.isfinite(action), axis=1)
    if bad.any():
        logger.warning("non-finite action in %d environment(s), flagging fault", int(bad.sum()))
        action[bad] = 0.0
    target = DEFAULT_POSE + action * params.action_scale
    out = state
    for _ in range(params.decimation):
        out = _substep(out, target, field, dr, dt, params, joints)
    out.fault = state.fault | bad
    return out


def proprioception(state: RobotState) -> FloatArray:
    """Roll, pitch, base angular velocity, joint offsets and velocities, (N, 43)."""
    return np.concatenate(
        [state.base_rpy[:, :2], state.base_angvel, state.q - DEFAULT_POSE, state.qd], axis=1
    )


def joint_power(state: RobotState) -> FloatArray:
    """Absolute mechanical power ``sum |tau * qd|`` per environment."""
    return np.abs(state.tau * state.qd).sum(axis=1)  # type: ignore[no-any-return]


LINK_NAMES: Tuple[str, ...] = (
    "pelvis",
    "torso",
    "left_thigh",
    "right_thigh",
    "left_shank",
    "right_shank",
    "left_foot",
    "right_foot",
)
_LINK_RADIUS = 0.05


def link_bounds(state: RobotState, params: Optional[DynamicsParams] = None) -> FloatArray:
    """World axis-aligned bounding boxes of the body links, (N, 8, 2, 3) lower/upper."""
    params = params or DynamicsParams()
    n = state.num_envs
    rot = rotation_matrices(state.base_rpy)
    foot_rel, knee_rel = leg_kinematics(state.q, params)
    base = state.base_pos[:, None, :]
    hips = np.zeros((n, 2, 3))
    hips[..., 1] = SIDES * params.hip_offset
    hip_w = base + _to_world(rot, hips)
    knee_w = base + _to_world(rot, knee_rel)
    ankle_rel = foot_rel.copy()
    ankle_rel[..., 2] += params.foot_height
    ankle_w = base + _to_world(rot, ankle_rel)
    foot_w = base + _to_world(rot, foot_rel)
    torso_center = base[:, 0] + _to_world(rot, np.tile([0.0, 0.0, 0.35], (n, 1, 1)))[:, 0]

    def box(a: FloatArray, b: FloatArray, pad: FloatArray) -> FloatArray:
        return np.stack([np.minimum(a, b) - pad, np.maximum(a, b) + pad], axis=-2)

    r = np.full(3, _LINK_RADIUS)
    links = [
        box(base[:, 0], base[:, 0], np.array([0.1, 0.15, 0.1])),
        box(torso_center, torso_center, np.array([0.1, 0.15, 0.25])),
        box(hip_w[:, 0], knee_w[:, 0], r),
        box(hip_w[:, 1], knee_w[:, 1], r),
        box(knee_w[:, 0], ankle_w[:, 0], r),
        box(knee_w[:, 1], ankle_w[:, 1], r),
        box(foot_w[:, 0], ankle_w[:, 0], np.array([0.1, 0.04, 0.0])),
        box(foot_w[:, 1], ankle_w[:, 1], np.array([0.1, 0.04, 0.0])),
    ]
    return np.stack(links, axis=1)


@dataclass
class EpisodeStats:
    """Per-environment episode outcome; distance is the furthest progress."""

    distance: FloatArray
    success: BoolArray
    fall: BoolArray
    steps: NDArray[np.int64]

    @classmethod
    def zeros(cls, num_envs: int) -> "EpisodeStats":
        return cls(
            np.zeros(num_envs),
            np.zeros(num_envs, dtype=bool),
            np.zeros(num_envs, dtype=bool),
            np.zeros(num_envs, dtype=np.int64),
        )

    @property
    def done(self) -> BoolArray:
        return self.success | self.fall

    def reset(self, index: ArrayLike) -> None:
        idx = np.asarray(index)
        self.distance[idx] = 0.0
        self.success[idx] = False
        self.fall[idx] = False
        self.steps[idx] = 0


def check_termination(
    state: RobotState,
    field: HeightField,
    stats: EpisodeStats,
    track_start: ArrayLike,
    track_length: ArrayLike,
    params: Optional[DynamicsParams] = None,
) -> EpisodeStats:
    """Update episode outcome after a control step.

    A fall is a fault, an attitude beyond ``fall_attitude``, a base clearance
    below ``fall_clearance`` or a base dropped under ``floor_height`` (into
    a trench). Clearance is taken against the lower of the terrain under the
    base and under the feet, so standing next to a step is not a fall.
    Success means forward progress from ``track_start`` reached
    ``track_length`` without falling.
    """
    params = params or DynamicsParams()
    x, y, z = state.base_pos.T
    under_base = height_at(field, x, y)
    under_feet = height_at(field, state.foot_pos[..., 0], state.foot_pos[..., 1]).min(axis=1)
    clearance = z - np.minimum(under_base, under_feet)
    tilted = np.any(np.abs(state.base_rpy[:, :2]) > params.fall_attitude, axis=1)
    fall = (
        state.fault
        | tilted
        | (clearance < params.fall_clearance)
        | (z < params.floor_height)
        | ~state.is_finite()
    )
    length = np.broadcast_to(np.asarray(track_length, dtype=np.float64), x.shape)
    progress = np.nan_to_num(x - np.asarray(track_start, dtype=np.float64))
    distance = np.clip(np.maximum(stats.distance, progress), 0.0, length)
    success = ~fall & (progress >= length)
    return EpisodeStats(distance, success | (stats.success & ~fall), fall, stats.steps + 1)


T = TypeVar("T")


@dataclass(frozen=True)
class TimedSample(Generic[T]):
    timestamp: float
    value: T


def apply_latency(queue: Sequence[TimedSample[T]], latency: float, now: float) -> T:
    """Newest sample at least ``latency`` old; the oldest one if none is."""
    if not queue:
        raise InputError("latency queue is empty")
    cutoff = now - latency + 1e-9
    for sample in reversed(queue):
        if sample.timestamp <= cutoff:
            return sample.value
    return queue[0].value


class LatencyBuffer(Generic[T]):
    """Bounded timestamped history read back with a fixed delay."""

    def __init__(self, latency: float, maxlen: int = 64) -> None:
        if latency < 0:
            raise InputError(f"latency must be nonnegative, got {latency}")
        self.latency = latency
        self._queue: Deque[TimedSample[T]] = deque(maxlen=maxlen)

    def __len__(self) -> int:
        return len(self._queue)

    def push(self, timestamp: float, value: T) -> None:
        if self._queue and timestamp < self._queue[-1].timestamp:
            raise InputError("samples must be pushed in timestamp order")
        self._queue.append(TimedSample(timestamp, value))

    def read(self, now: float) -> T:
        return apply_latency(list(self._queue), self.latency, now)

    def clear(self) -> None:
        self._queue.clear()

    def newest_timestamp(self) -> Optional[float]:
        return self._queue[-1].timestamp if self._queue else None

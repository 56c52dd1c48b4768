"""Two-rate deployment loop: 10 Hz vision, 50 Hz recurrent actor.

The vision path renders a depth frame, corrupts it with sensor noise,
downsamples it and encodes it to the terrain embedding. The actor reuses the
newest embedding old enough to respect the depth latency. Every action is
passed through the torque safety clip before it reaches the joints.
"""

__all__ = [
    "DeploymentScheduler",
    "DeploymentTick",
    "VisionCutoff",
    "VisionPipeline",
    "VisionSource",
    "arm_override",
]

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Protocol, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from parkourpy.config import PerceptionConfig
from parkourpy.dynamics import ARM_JOINTS, DEFAULT_POSE, JointConfig, LatencyBuffer, clip_action_for_safety
from parkourpy.errors import DegradedError, InputError
from parkourpy.neural.layers import no_grad
from parkourpy.neural.policy import StudentPolicy
from parkourpy.perception import (
    BasePose,
    CameraExtrinsics,
    DepthImage,
    downsample_depth,
    render_depth,
    simulate_depth_noise,
)
from parkourpy.simwrapper import ParkourSim
from parkourpy.terrain import HeightField

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]


class VisionSource(Protocol):
    def frame(self, pose: BasePose, timestamp: float) -> Optional[DepthImage]:
        """Policy-resolution depth frame, or None when the sensor delivered nothing."""
        ...


class VisionPipeline:
    """Render, corrupt and downsample depth frames of one camera.

    Parameters
    ----------
    field : HeightField
        Terrain to render.
    perception : PerceptionConfig
        Resolutions, clip range and noise magnitudes.
    seed : int
        Seed of the noise stream.
    camera : CameraExtrinsics, optional
        Camera mount, default the nominal one.
    """

    def __init__(
        self,
        field: HeightField,
        perception: PerceptionConfig,
        seed: int,
        camera: Optional[CameraExtrinsics] = None,
    ) -> None:
        self.field = field
        self.perception = perception
        self.camera = camera or CameraExtrinsics()
        self.noise = perception.depth_noise()
        self._seeds = np.random.default_rng(seed)

    def frame(self, pose: BasePose, timestamp: float) -> DepthImage:
        p = self.perception
        img = render_depth(
            self.field, self.camera, pose, tuple(p.render_resolution), p.near_clip, p.far_clip  # type: ignore[arg-type]
        )
        img = simulate_depth_noise(img, int(self._seeds.integers(2**31)), self.noise)
        img = downsample_depth(img, tuple(p.policy_resolution))  # type: ignore[arg-type]
        return replace(img, timestamp=timestamp)


def arm_override(
    action: ArrayLike,
    targets: ArrayLike,
    joints: JointConfig,
    action_scale: float,
) -> FloatArray:
    """Replace the arm entries of policy actions by fixed arm joint targets.

    ``targets`` are the 8 arm joint positions in radians; positions outside
    the joint limits are clamped with a warning. Leg and waist entries pass
    through untouched.
    """
    out = np.array(action, dtype=np.float64, copy=True)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (ARM_JOINTS.size,):
        raise InputError(f"arm override needs {ARM_JOINTS.size} targets, got shape {targets.shape}")
    lower, upper = joints.lower[ARM_JOINTS], joints.upper[ARM_JOINTS]
    clamped = np.clip(targets, lower, upper)
    if np.any(clamped != targets):
        names = [joints.names[j] for j, bad in zip(ARM_JOINTS, clamped != targets) if bad]
        logger.warning("arm override beyond joint limits clamped for %s", ", ".join(names))
    out[..., ARM_JOINTS] = (clamped - DEFAULT_POSE[ARM_JOINTS]) / action_scale
    return out


class VisionCutoff:
    """Passes frames of ``source`` through until ``after`` seconds, then nothing.

    Stands in for a camera that stops delivering, to exercise the degraded path.
    """

    def __init__(self, source: VisionSource, after: float) -> None:
        self.source = source
        self.after = after

    def frame(self, pose: BasePose, timestamp: float) -> Optional[DepthImage]:
        if timestamp >= self.after:
            return None
        return self.source.frame(pose, timestamp)


@dataclass
class DeploymentTick:
    time: float
    action: FloatArray
    embedding_version: int
    frame_time: float
    degraded: bool


class DeploymentScheduler:
    """Runs a student policy on environment 0 of a simulator at two rates.

    Parameters
    ----------
    policy : StudentPolicy
        Student with a depth encoder.
    vision : VisionSource
        Frame provider; a None frame counts as a missed vision tick.
    control_hz, vision_hz : float, optional
        Actor and vision rates, default 50 and 10 Hz; the actor rate must be
        a multiple of the vision rate.
    depth_latency : float, optional
        Age an embedding must reach before the actor may use it, default
        the simulator's randomized depth latency.
    stall_timeout : float, optional
        Vision silence after which the last action target is held and the
        degraded flag raised, default 0.5 s.
    arm_targets : array_like, optional
        Fixed arm joint targets applied through :func:`arm_override`. In
        closed loop the overridden arms feed back through proprioception,
        so leg actions match an unmodified run only tick by tick.
    abort_on_degraded : bool, optional
        Raise :class:`DegradedError` instead of holding actions.
    open_loop_arms : bool, optional
        Drive the simulator with the policy's own arm actions and apply
        ``arm_targets`` to the reported action stream only. The observation
        stream then matches a run without override, and so do the leg
        entries of every reported action.
    """

    def __init__(
        self,
        policy: StudentPolicy,
        vision: VisionSource,
        control_hz: float = 50.0,
        vision_hz: float = 10.0,
        depth_latency: Optional[float] = None,
        stall_timeout: float = 0.5,
        arm_targets: Optional[ArrayLike] = None,
        abort_on_degraded: bool = False,
        open_loop_arms: bool = False,
    ) -> None:
        ratio = control_hz / vision_hz
        if vision_hz <= 0 or not math.isclose(ratio, round(ratio)) or round(ratio) < 1:
            raise InputError(f"control rate {control_hz} Hz is not a multiple of vision rate {vision_hz} Hz")
        self.policy = policy
        self.vision = vision
        self.control_dt = 1.0 / control_hz
        self.vision_every = int(round(ratio))
        self.depth_latency = depth_latency
        self.stall_timeout = stall_timeout
        self.arm_targets = None if arm_targets is None else np.asarray(arm_targets, dtype=np.float64)
        self.abort_on_degraded = abort_on_degraded
        self.open_loop_arms = open_loop_arms
        self.actor_ticks = 0
        self.vision_ticks = 0
        self.degraded = False

    def run(self, sim: ParkourSim, duration: float) -> List[DeploymentTick]:
        """Drive ``sim`` for ``duration`` seconds of simulated time.

        Raises
        ------
        DegradedError
            On a vision stall when ``abort_on_degraded`` is set.
        """
        if not math.isclose(self.control_dt, sim.get_time_step()):
            raise InputError(f"simulator steps {sim.get_time_step()} s, scheduler expects {self.control_dt} s")
        latency = float(sim.dr.depth_latency[0]) if self.depth_latency is None else self.depth_latency
        embeddings: LatencyBuffer[Tuple[int, float, FloatArray]] = LatencyBuffer(latency)
        hidden = self.policy.initial_hidden(sim.num_envs)
        last_frame = -math.inf
        version = 0
        raw = np.zeros((sim.num_envs, self.policy.dims.action))
        command = raw
        ticks: List[DeploymentTick] = []
        steps = int(round(duration / self.control_dt))

        for k in range(steps):
            now = k * self.control_dt
            if k % self.vision_every == 0:
                self.vision_ticks += 1
                frame = self.vision.frame(sim.pose(0), now)
                if frame is not None:
                    with no_grad():
                        depth = np.asarray(frame.pixels, dtype=np.float64)[None, None]
                        embedding = self.policy.encoder.forward(depth)  # type: ignore[attr-defined]
                    embeddings.push(now, (version, now, embedding))
                    version += 1
                    last_frame = now
            stalled = len(embeddings) == 0 or now - last_frame > self.stall_timeout
            if stalled and not self.degraded:
                logger.error("vision stalled for %.2f s at t=%.2f, holding the last action", now - last_frame, now)
                if self.abort_on_degraded:
                    raise DegradedError(f"vision path stalled at t={now:.2f} s")
            self.degraded = stalled

            if self.degraded:
                used_version, frame_time = -1, last_frame
            else:
                used_version, frame_time, embedding = embeddings.read(now)
                obs = sim.observation
                with no_grad():
                    out = self.policy.forward(obs, hidden, embedding=np.repeat(embedding, obs.batch, axis=1))
                hidden = out.hidden
                raw = command = out.mean[0]
                if self.arm_targets is not None:
                    command = arm_override(raw, self.arm_targets, sim.joints, sim.params.action_scale)
            # held targets are clipped against the current joint state too
            action = self._safety_clip(sim, command)
            sim.step(self._safety_clip(sim, raw) if self.open_loop_arms else action)
            self.actor_ticks += 1
            ticks.append(DeploymentTick(now, np.array(action[0]), used_version, frame_time, self.degraded))
        return ticks

    @staticmethod
    def _safety_clip(sim: ParkourSim, action: FloatArray) -> FloatArray:
        scale = sim.params.action_scale
        target = DEFAULT_POSE + action * scale
        safe = clip_action_for_safety(target, sim.state.q, sim.state.qd, sim.joints)
        return (safe - DEFAULT_POSE) / scale  # type: ignore[no-any-return]

    def summary(self) -> Dict[str, float]:
        return {
            "actor_ticks": float(self.actor_ticks),
            "vision_ticks": float(self.vision_ticks),
            "degraded": float(self.degraded),
        }

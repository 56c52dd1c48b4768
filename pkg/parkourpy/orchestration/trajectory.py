"""Labelled student trajectory files.

Layout, little-endian::

    b"PKTRAJ1"
    u8  format version
    u32 collector id
    u32 policy version used for the rollout
    u32 record count
    u32 sequence length (steps per environment)
    u16 observation width, u16 depth rows, u16 depth cols, u16 action width
    records

Records are environment-major: the first ``sequence length`` records hold the
consecutive steps of the first environment, and so on. Each record is one
:func:`record_dtype` item: the observation block (proprioception, last
action, command, true base velocity), the depth image as 32-bit floats, the
teacher action (NaN when the step has no label), the done flag and the
episode and step counters.
"""

__all__ = [
    "TRAJECTORY_MAGIC",
    "TrajectoryFile",
    "TrajectoryHeader",
    "pack_records",
    "read_trajectory",
    "read_trajectory_header",
    "record_dtype",
    "write_trajectory",
]

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from numpy.typing import NDArray

from parkourpy.errors import DataCorruptionError, InputError
from parkourpy.learning.dagger import DistillBatch
from parkourpy.neural.policy import Observation, PolicyDims
from parkourpy.utils import atomic_write_bytes

TRAJECTORY_MAGIC = b"PKTRAJ1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<7sBIIII4H")

FloatArray = NDArray[np.float64]


def record_dtype(obs_width: int, depth_shape: Tuple[int, int], action_width: int) -> np.dtype:  # type: ignore[type-arg]
    return np.dtype(
        [
            ("obs", "<f4", (obs_width,)),
            ("depth", "<f4", depth_shape),
            ("teacher_action", "<f4", (action_width,)),
            ("done", "u1"),
            ("episode", "<u4"),
            ("step", "<u4"),
        ]
    )


@dataclass(frozen=True)
class TrajectoryHeader:
    collector_id: int
    policy_version: int
    record_count: int
    sequence_length: int
    obs_width: int
    depth_shape: Tuple[int, int]
    action_width: int

    @property
    def dtype(self) -> np.dtype:  # type: ignore[type-arg]
        return record_dtype(self.obs_width, self.depth_shape, self.action_width)

    @property
    def num_envs(self) -> int:
        return self.record_count // self.sequence_length if self.sequence_length else 0


@dataclass
class TrajectoryFile:
    header: TrajectoryHeader
    records: NDArray[np.void]

    def to_batch(self, dims: PolicyDims) -> DistillBatch:
        """Time-major distillation batch; each environment's sequence starts fresh."""
        h = self.header
        width = dims.proprio + dims.action + dims.command + dims.velocity
        if h.obs_width != width or h.action_width != dims.action:
            raise DataCorruptionError(
                f"trajectory layout ({h.obs_width}, {h.action_width}) does not match the policy ({width}, {dims.action})"
            )
        grid = self.records.reshape(h.num_envs, h.sequence_length).T
        obs = grid["obs"].astype(np.float64)
        cuts = np.cumsum([dims.proprio, dims.action, dims.command])
        proprio, last_action, command, velocity = np.split(obs, cuts, axis=-1)
        steps = grid["step"].astype(np.int64)
        resets = steps == 0
        resets[0] = True
        teacher = grid["teacher_action"].astype(np.float64)
        valid = np.all(np.isfinite(teacher), axis=-1)
        observation = Observation(
            proprio,
            last_action,
            command,
            resets,
            depth=grid["depth"].astype(np.float64),
            velocity=velocity,
        )
        return DistillBatch(
            observation=observation,
            teacher_actions=np.where(valid[..., None], teacher, 0.0),
            valid=valid,
            dones=grid["done"].astype(bool),
            episode=grid["episode"].astype(np.int64),
            step=steps,
            collector_id=h.collector_id,
            skipped=int(valid.size - np.count_nonzero(valid)),
        )


def pack_records(batch: DistillBatch) -> NDArray[np.void]:
    """Environment-major records from a labelled (T, B) batch."""
    obs = batch.observation
    if obs.depth is None or obs.velocity is None:
        raise InputError("trajectory records need depth images and base velocities")
    steps, envs = obs.steps, obs.batch
    block = np.concatenate([obs.proprio, obs.last_action, obs.command, obs.velocity], axis=-1)
    teacher = np.where(batch.valid[..., None], batch.teacher_actions, np.nan)
    records = np.zeros((envs, steps), dtype=record_dtype(block.shape[-1], obs.depth.shape[2:], teacher.shape[-1]))  # type: ignore[arg-type]
    records["obs"] = block.transpose(1, 0, 2)
    records["depth"] = obs.depth.transpose(1, 0, 2, 3)
    records["teacher_action"] = teacher.transpose(1, 0, 2)
    records["done"] = batch.dones.T
    records["episode"] = batch.episode.T
    records["step"] = batch.step.T
    return records.reshape(-1)


def write_trajectory(
    path: Union[str, Path], batch: DistillBatch, policy_version: int
) -> TrajectoryHeader:
    """Write a labelled batch atomically; the file appears complete or not at all."""
    records = pack_records(batch)
    obs = batch.observation
    assert obs.depth is not None
    header = TrajectoryHeader(
        collector_id=batch.collector_id,
        policy_version=policy_version,
        record_count=int(records.size),
        sequence_length=obs.steps,
        obs_width=int(records.dtype["obs"].shape[0]),
        depth_shape=(int(obs.depth.shape[2]), int(obs.depth.shape[3])),
        action_width=int(batch.teacher_actions.shape[-1]),
    )
    payload = (
        _HEADER.pack(
            TRAJECTORY_MAGIC,
            FORMAT_VERSION,
            header.collector_id,
            header.policy_version,
            header.record_count,
            header.sequence_length,
            header.obs_width,
            header.depth_shape[0],
            header.depth_shape[1],
            header.action_width,
        )
        + records.tobytes()
    )
    atomic_write_bytes(path, payload)
    return header


def _parse_header(payload: bytes, path: Union[str, Path]) -> TrajectoryHeader:
    if len(payload) < _HEADER.size:
        raise DataCorruptionError(f"{path}: truncated trajectory header")
    magic, version, collector, policy, count, seq, obs_w, rows, cols, act_w = _HEADER.unpack_from(payload)
    if magic != TRAJECTORY_MAGIC:
        raise DataCorruptionError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataCorruptionError(f"{path}: unsupported trajectory format version {version}")
    if seq == 0 or count % seq:
        raise DataCorruptionError(f"{path}: record count {count} is not a multiple of sequence length {seq}")
    return TrajectoryHeader(collector, policy, count, seq, obs_w, (rows, cols), act_w)


def read_trajectory_header(path: Union[str, Path]) -> TrajectoryHeader:
    with Path(path).open("rb") as f:
        return _parse_header(f.read(_HEADER.size), path)


def read_trajectory(path: Union[str, Path]) -> TrajectoryFile:
    """Read and validate a trajectory file.

    Raises
    ------
    DataCorruptionError
        On a bad magic or version, or a payload that does not hold exactly
        the record count announced by the header.
    """
    payload = Path(path).read_bytes()
    header = _parse_header(payload, path)
    dtype = header.dtype
    body = len(payload) - _HEADER.size
    if body != header.record_count * dtype.itemsize:
        raise DataCorruptionError(
            f"{path}: header announces {header.record_count} records, payload holds {body / dtype.itemsize:g}"
        )
    records = np.frombuffer(payload, dtype=dtype, offset=_HEADER.size)
    return TrajectoryFile(header, records)

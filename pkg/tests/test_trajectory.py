import struct

import numpy as np
import pytest

from parkourpy.errors import DataCorruptionError, InputError
from parkourpy.learning.dagger import DistillBatch
from parkourpy.neural.policy import Observation, PolicyDims
from parkourpy.orchestration.trajectory import (
    TRAJECTORY_MAGIC,
    pack_records,
    read_trajectory,
    read_trajectory_header,
    write_trajectory,
)

DIMS = PolicyDims.tiny()
STEPS, ENVS = 6, 3
DEPTH = (4, 5)


def f32(rng, *shape):
    return rng.normal(size=shape).astype(np.float32).astype(np.float64)


def make_batch(seed=0):
    rng = np.random.default_rng(seed)
    step = np.tile(np.arange(STEPS)[:, None], (1, ENVS))
    step[3:, 0] = np.arange(STEPS - 3)
    dones = np.zeros((STEPS, ENVS), dtype=bool)
    dones[2, 0] = True
    obs = Observation(
        proprio=f32(rng, STEPS, ENVS, DIMS.proprio),
        last_action=f32(rng, STEPS, ENVS, DIMS.action),
        command=f32(rng, STEPS, ENVS, DIMS.command),
        resets=step == 0,
        depth=f32(rng, STEPS, ENVS, *DEPTH),
        velocity=f32(rng, STEPS, ENVS, DIMS.velocity),
    )
    valid = np.ones((STEPS, ENVS), dtype=bool)
    valid[4, 2] = False
    return DistillBatch(
        observation=obs,
        teacher_actions=f32(rng, STEPS, ENVS, DIMS.action),
        valid=valid,
        dones=dones,
        episode=np.where(step < np.arange(STEPS)[:, None], 1, 0),
        step=step,
        collector_id=2,
    )


def test_write_and_read(tmp_path):
    batch = make_batch()
    path = tmp_path / "traj_0002_000000.bin"
    header = write_trajectory(path, batch, policy_version=9)
    assert header.record_count == STEPS * ENVS
    assert header.num_envs == ENVS
    assert read_trajectory_header(path) == header

    loaded = read_trajectory(path)
    assert loaded.header.policy_version == 9
    assert loaded.header.depth_shape == DEPTH
    out = loaded.to_batch(DIMS)
    assert out.collector_id == 2
    assert out.skipped == 1
    assert np.array_equal(out.valid, batch.valid)
    assert np.array_equal(out.observation.proprio, batch.observation.proprio)
    assert np.array_equal(out.observation.velocity, batch.observation.velocity)
    assert np.array_equal(out.observation.depth, batch.observation.depth)
    labelled = batch.valid
    assert np.array_equal(out.teacher_actions[labelled], batch.teacher_actions[labelled])
    assert np.all(out.teacher_actions[~labelled] == 0.0)
    assert np.array_equal(out.dones, batch.dones)
    assert np.array_equal(out.step, batch.step)
    assert np.array_equal(out.episode, batch.episode)


def test_records_are_environment_major():
    batch = make_batch()
    records = pack_records(batch)
    assert records.shape == (STEPS * ENVS,)
    assert records["step"][:STEPS].tolist() == [0, 1, 2, 0, 1, 2]
    assert np.isnan(records["teacher_action"][2 * STEPS + 4]).all()


def test_resets_follow_step_counter(tmp_path):
    path = tmp_path / "t.bin"
    write_trajectory(path, make_batch(), 0)
    resets = read_trajectory(path).to_batch(DIMS).observation.resets
    assert resets[0].all()
    assert resets[3, 0] and not resets[3, 1]


def test_pack_requires_depth_and_velocity():
    batch = make_batch()
    obs = batch.observation
    batch.observation = Observation(obs.proprio, obs.last_action, obs.command, obs.resets)
    with pytest.raises(InputError, match="need depth images"):
        pack_records(batch)


def test_layout_mismatch(tmp_path):
    path = tmp_path / "t.bin"
    write_trajectory(path, make_batch(), 0)
    with pytest.raises(DataCorruptionError, match="does not match the policy"):
        read_trajectory(path).to_batch(PolicyDims.tiny(proprio=40))


@pytest.fixture
def payload(tmp_path):
    path = tmp_path / "t.bin"
    write_trajectory(path, make_batch(), 0)
    return path.read_bytes()


def test_truncated_file(tmp_path, payload):
    path = tmp_path / "cut.bin"
    path.write_bytes(payload[:-10])
    with pytest.raises(DataCorruptionError, match="announces 18 records"):
        read_trajectory(path)
    path.write_bytes(payload[:10])
    with pytest.raises(DataCorruptionError, match="truncated trajectory header"):
        read_trajectory(path)


def test_bad_magic_and_version(tmp_path, payload):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTTRAJ" + payload[len(TRAJECTORY_MAGIC):])
    with pytest.raises(DataCorruptionError, match="bad magic"):
        read_trajectory(path)
    path.write_bytes(payload[:7] + bytes([9]) + payload[8:])
    with pytest.raises(DataCorruptionError, match="format version 9"):
        read_trajectory(path)


def test_record_count_not_multiple(tmp_path, payload):
    path = tmp_path / "bad.bin"
    count_offset = 7 + 1 + 4 + 4
    path.write_bytes(payload[:count_offset] + struct.pack("<I", 17) + payload[count_offset + 4 :])
    with pytest.raises(DataCorruptionError, match="not a multiple of sequence length"):
        read_trajectory(path)

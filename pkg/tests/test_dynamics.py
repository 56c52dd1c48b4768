import logging

import numpy as np
import pytest

from parkourpy.dynamics import (
    DEFAULT_POSE,
    DR_RANGES,
    NUM_JOINTS,
    DomainRandomization,
    EpisodeStats,
    JointConfig,
    LatencyBuffer,
    TimedSample,
    apply_latency,
    check_termination,
    clip_action_for_safety,
    initial_state,
    joint_power,
    link_bounds,
    pd_torque,
    proprioception,
    sample_domain_randomization,
    step,
)
from parkourpy.errors import InputError
from parkourpy.terrain import HeightField

JOINTS = JointConfig.h1()


def one_joint(name, value, fill=0.0):
    out = np.full(NUM_JOINTS, fill)
    out[JOINTS.index(name)] = value
    return out


def test_joint_table():
    knee = JOINTS.index("right_knee")
    assert (JOINTS.kp[knee], JOINTS.kd[knee], JOINTS.torque_limit[knee]) == (320.0, 4.0, 300.0)
    elbow = JOINTS.index("left_elbow")
    assert (JOINTS.kp[elbow], JOINTS.kd[elbow], JOINTS.torque_limit[elbow]) == (20.0, 0.5, 18.0)
    torso = JOINTS.index("torso")
    assert (JOINTS.kp[torso], JOINTS.kd[torso], JOINTS.torque_limit[torso]) == (200.0, 3.0, 200.0)
    assert len(JOINTS.names) == NUM_JOINTS == 19


def test_joint_config_validation():
    with pytest.raises(InputError, match="must have 2 entries"):
        JointConfig(("a", "b"), [1.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0])
    with pytest.raises(InputError, match="positive and ordered"):
        JointConfig(("a",), [1.0], [1.0], [1.0], [1.0], [1.0], [0.0])


def test_pd_torque_examples():
    zero = np.zeros(NUM_JOINTS)
    assert np.all(pd_torque(DEFAULT_POSE, DEFAULT_POSE, zero, JOINTS) == 0.0)
    knee = JOINTS.index("left_knee")
    tau = pd_torque(one_joint("left_knee", 1.0), zero, zero, JOINTS)
    assert tau[knee] == 300.0
    ankle = JOINTS.index("left_ankle")
    tau = pd_torque(one_joint("left_ankle", 0.5), zero, one_joint("left_ankle", 1.0), JOINTS)
    assert tau[ankle] == pytest.approx(18.0)


def test_pd_torque_motor_strength():
    zero = np.zeros(NUM_JOINTS)
    ankle = JOINTS.index("right_ankle")
    tau = pd_torque(one_joint("right_ankle", 0.5), zero, zero, JOINTS, motor_strength=0.8)
    assert tau[ankle] == pytest.approx(16.0)


def test_clip_action_for_safety_examples():
    zero = np.zeros(NUM_JOINTS)
    knee = JOINTS.index("left_knee")
    clipped = clip_action_for_safety(one_joint("left_knee", 2.0), zero, zero, JOINTS)
    assert clipped[knee] == 0.9375
    inside = np.full(NUM_JOINTS, 0.01)
    assert np.array_equal(clip_action_for_safety(inside, zero, zero, JOINTS), inside)


@pytest.mark.slow
def test_clip_action_keeps_torque_within_limits():
    rng = np.random.default_rng(99)
    n = 100_000
    q = rng.uniform(JOINTS.lower, JOINTS.upper, size=(n, NUM_JOINTS))
    qd = rng.uniform(-20.0, 20.0, size=(n, NUM_JOINTS))
    target = rng.uniform(-5.0, 5.0, size=(n, NUM_JOINTS))
    safe = clip_action_for_safety(target, q, qd, JOINTS)
    raw = JOINTS.kp * (safe - q) - JOINTS.kd * qd
    assert np.all(np.abs(raw) <= JOINTS.torque_limit * (1.0 + 1e-12))
    assert np.all(np.abs(pd_torque(safe, q, qd, JOINTS)) <= JOINTS.torque_limit)


def test_domain_randomization_ranges():
    dr = sample_domain_randomization(seed=3, num_envs=10_000)
    assert len(dr) == 10_000
    assert dr.within()
    assert dr.friction.min() >= -0.2 and dr.friction.max() <= 2.0
    assert abs(dr.friction.mean() - 0.9) < 0.05
    assert dr.motor_strength.min() >= 0.8 and dr.motor_strength.max() <= 1.2
    lo, hi = DR_RANGES["camera_pitch"]
    assert np.all((dr.camera_rpy[:, 1] >= lo) & (dr.camera_rpy[:, 1] <= hi))


def test_domain_randomization_deterministic():
    a = sample_domain_randomization(seed=11, num_envs=4)
    b = sample_domain_randomization(seed=11, num_envs=4)
    for name in ("added_mass", "com_offset", "friction", "camera_position", "depth_latency"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    shifted = sample_domain_randomization(seed=11, num_envs=2, first_index=2)
    assert np.array_equal(shifted.friction, a.friction[2:])


def test_domain_randomization_nominal_and_camera():
    dr = DomainRandomization.nominal(3)
    assert len(dr) == 3
    assert not dr.within()
    cam = sample_domain_randomization(seed=1, num_envs=2).camera(1)
    assert 86.0 <= cam.fov <= 90.0
    assert 0.77 <= cam.orientation[1] <= 0.99


def test_zero_action_is_fixed_point(flat_field):
    state = initial_state(flat_field, [[1.0, 1.0]], 0.0)
    start = state.copy()
    dr = DomainRandomization.nominal(1)
    for _ in range(100):
        state = step(state, np.zeros((1, NUM_JOINTS)), flat_field, dr)
    assert np.allclose(state.q, DEFAULT_POSE, atol=1e-6)
    assert np.allclose(state.base_pos, start.base_pos, atol=1e-6)
    assert np.allclose(state.base_rpy, 0.0, atol=1e-6)
    assert state.foot_contact.all()


def test_step_keeps_joint_limits_and_is_deterministic(flat_field, rng):
    dr = sample_domain_randomization(seed=5, num_envs=3)
    actions = rng.normal(scale=20.0, size=(15, 3, NUM_JOINTS))

    def run():
        state = initial_state(flat_field, [[1.0, 1.0], [2.0, 0.8], [3.0, 1.2]], [0.0, 0.3, -0.3])
        for action in actions:
            state = step(state, action, flat_field, dr)
            assert np.all(state.q >= JOINTS.lower) and np.all(state.q <= JOINTS.upper)
            assert np.all(joint_power(state) >= 0.0)
        return state

    a, b = run(), run()
    assert np.array_equal(a.base_pos, b.base_pos)
    assert np.array_equal(a.q, b.q)


def test_step_leaves_input_untouched(flat_field):
    state = initial_state(flat_field, [[1.0, 1.0]], 0.0)
    before = state.copy()
    step(state, np.ones((1, NUM_JOINTS)), flat_field, DomainRandomization.nominal(1))
    assert np.array_equal(state.q, before.q)
    assert np.array_equal(state.base_pos, before.base_pos)


def test_non_finite_action_is_fault(flat_field, caplog):
    state = initial_state(flat_field, [[1.0, 1.0], [2.0, 1.0]], 0.0)
    action = np.zeros((2, NUM_JOINTS))
    action[1, 3] = np.nan
    with caplog.at_level(logging.WARNING):
        out = step(state, action, flat_field, DomainRandomization.nominal(2))
    assert "non-finite action" in caplog.text
    assert out.fault.tolist() == [False, True]
    assert np.all(np.isfinite(out.q))
    stats = check_termination(out, flat_field, EpisodeStats.zeros(2), 0.0, 10.0)
    assert stats.fall.tolist() == [False, True]


def test_falls_into_trench():
    ground = HeightField(np.zeros((81, 41)), 0.05)
    heights = np.zeros((81, 41))
    heights[20:61] = -1.0
    trench = HeightField(heights, 0.05)
    state = initial_state(ground, [[2.0, 1.0]], 0.0)
    stats = EpisodeStats.zeros(1)
    dr = DomainRandomization.nominal(1)
    for _ in range(50):
        state = step(state, np.zeros((1, NUM_JOINTS)), trench, dr)
        stats = check_termination(state, trench, stats, 0.0, 4.0)
        if stats.fall[0]:
            break
    assert stats.fall[0]
    assert not stats.success[0]
    assert state.base_pos[0, 2] < 0.0


def test_termination_examples(flat_field):
    stats = EpisodeStats.zeros(1)
    at_end = initial_state(flat_field, [[5.0, 1.0]], 0.0)
    done = check_termination(at_end, flat_field, stats, 0.0, 4.8)
    assert done.success[0] and not done.fall[0]
    assert done.distance[0] == 4.8

    tilted = initial_state(flat_field, [[1.0, 1.0]], 0.0)
    tilted.base_rpy[0, 1] = 1.5
    out = check_termination(tilted, flat_field, stats, 0.0, 4.8)
    assert out.fall[0] and not out.success[0]

    stopped = initial_state(flat_field, [[9.8, 1.0]], 0.0)
    out = check_termination(stopped, flat_field, stats, 0.0, 14.4)
    assert out.distance[0] == pytest.approx(9.8)
    assert not out.success[0] and not out.fall[0]
    assert out.steps[0] == 1


def test_distance_is_furthest_progress(flat_field):
    stats = EpisodeStats.zeros(1)
    for x in (2.0, 3.0, 2.5):
        stats = check_termination(initial_state(flat_field, [[x, 1.0]], 0.0), flat_field, stats, 1.0, 10.0)
    assert stats.distance[0] == pytest.approx(2.0)
    stats.reset([0])
    assert stats.distance[0] == 0.0 and stats.steps[0] == 0


def test_proprioception_and_links(flat_field):
    state = initial_state(flat_field, [[1.0, 1.0], [2.0, 1.0]], 0.0)
    obs = proprioception(state)
    assert obs.shape == (2, 43)
    assert np.allclose(obs, 0.0)
    bounds = link_bounds(state)
    assert bounds.shape == (2, 8, 2, 3)
    assert np.all(bounds[..., 0, :] <= bounds[..., 1, :])


def test_apply_latency_examples():
    queue = [TimedSample(t, t) for t in (0.0, 0.02, 0.04)]
    assert apply_latency(queue, 0.0, 0.05) == 0.04
    assert apply_latency(queue, 0.02, 0.05) == 0.02
    assert apply_latency(queue, 1.0, 0.05) == 0.0
    with pytest.raises(InputError, match="empty"):
        apply_latency([], 0.0, 0.0)


def test_apply_latency_monotone(rng):
    times = np.cumsum(rng.uniform(0.001, 0.03, size=40))
    queue = [TimedSample(float(t), float(t)) for t in times]
    now = float(times[-1])
    latencies = np.sort(rng.uniform(0.0, 0.5, size=50))
    picked = [apply_latency(queue, float(lat), now) for lat in latencies]
    assert all(a >= b for a, b in zip(picked, picked[1:]))


def test_latency_buffer():
    buffer: LatencyBuffer[str] = LatencyBuffer(0.1, maxlen=3)
    assert buffer.newest_timestamp() is None
    for t, v in ((0.0, "a"), (0.05, "b"), (0.1, "c"), (0.15, "d")):
        buffer.push(t, v)
    assert len(buffer) == 3
    assert buffer.read(0.15) == "b"
    assert buffer.newest_timestamp() == 0.15
    with pytest.raises(InputError, match="timestamp order"):
        buffer.push(0.1, "late")
    buffer.clear()
    assert len(buffer) == 0
    with pytest.raises(InputError, match="nonnegative"):
        LatencyBuffer(-0.1)

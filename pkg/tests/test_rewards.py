import csv
import math

import numpy as np
import pytest

from parkourpy.dynamics import ARM_JOINTS, NUM_JOINTS, JointConfig, initial_state
from parkourpy.errors import InputError
from parkourpy.rewards import (
    TERM_NAMES,
    BodyPointMesh,
    RewardLog,
    RewardWeights,
    compute_reward_terms,
    feet_away,
    footstep_reward,
    penetration_penalty,
    projected_gravity,
    regularization_rewards,
    safety_posture_rewards,
    total_reward,
    touchdown_events,
    tracking_rewards,
)
from parkourpy.terrain import SteppingTargets, VirtualObstacle

JOINTS = JointConfig.h1()


@pytest.fixture
def standing(flat_field):
    return initial_state(flat_field, [[1.0, 1.0]], 0.0)


def random_state(field, rng):
    state = initial_state(field, [[rng.uniform(0.5, 3.5), rng.uniform(0.5, 1.5)]], rng.uniform(-3, 3))
    state.base_rpy[:] = rng.uniform(-0.6, 0.6, size=(1, 3))
    state.base_linvel[:] = rng.normal(size=(1, 3))
    state.base_angvel[:] = rng.normal(size=(1, 3))
    state.q[:] = rng.uniform(JOINTS.lower, JOINTS.upper, size=(1, NUM_JOINTS))
    state.qd[:] = rng.normal(scale=3.0, size=(1, NUM_JOINTS))
    state.tau[:] = rng.uniform(-JOINTS.torque_limit, JOINTS.torque_limit, size=(1, NUM_JOINTS))
    state.contact_force[:] = rng.uniform(0, 800, size=(1, 2))
    state.collision_force[:] = rng.uniform(-0.5, 1.0, size=(1, 3))
    state.foot_pos[:] = rng.uniform(-1, 1, size=(1, 2, 3))
    return state


def test_tracking_examples(standing):
    lin, ang = tracking_rewards(standing, [0.0, 0.0, 0.0])
    assert lin[0] == 1.0 and ang[0] == 1.0
    standing.base_linvel[0, 0] = 0.25
    standing.base_angvel[0, 2] = 0.5
    lin, ang = tracking_rewards(standing, [0.0, 0.0, 0.0])
    assert lin[0] == pytest.approx(math.exp(-1.0), rel=1e-12)
    assert ang[0] == pytest.approx(0.135335, abs=1e-6)


def test_tracking_uses_heading_frame(standing):
    standing.base_rpy[0, 2] = math.pi / 2
    standing.base_linvel[0, :2] = (0.0, 0.8)
    lin, _ = tracking_rewards(standing, [0.8, 0.0, 0.0])
    assert lin[0] == pytest.approx(1.0)


def test_projected_gravity():
    assert np.allclose(projected_gravity([[0.0, 0.0, 1.2]]), [[0.0, 0.0, -1.0]])
    g = projected_gravity([[0.0, math.pi / 2, 0.0]])
    assert g[0, 0] ** 2 + g[0, 1] ** 2 == pytest.approx(1.0)


def test_regularization_examples(standing):
    zero = np.zeros((1, NUM_JOINTS))
    terms = regularization_rewards(standing, standing, zero, zero, JOINTS)
    assert terms["orientation"][0] == 0.0
    assert terms["action_rate"][0] == 0.0
    standing.contact_force[0] = (450.0, 100.0)
    assert regularization_rewards(standing, standing, zero, zero, JOINTS)["contact_forces"][0] == 50.0


def test_safety_posture_examples(standing):
    terms = safety_posture_rewards(standing)
    assert terms["arm_dof"][0] == terms["waist_dof"][0] == terms["hip_yaw_dof"][0] == 0.0
    standing.q[0, JOINTS.index("left_elbow")] = 0.5
    assert safety_posture_rewards(standing)["arm_dof"][0] == 0.25


def test_feet_away(standing):
    standing.foot_pos[0, 0] = (0.0, 0.0, 0.0)
    standing.foot_pos[0, 1] = (0.0, 0.3, 0.0)
    assert feet_away(standing)[0] == pytest.approx(0.3)
    standing.foot_pos[0, 1] = (0.0, 1.0, 0.0)
    assert feet_away(standing)[0] == 0.4
    gaps = np.linspace(0.0, 1.0, 50)
    values = []
    for gap in gaps:
        standing.foot_pos[0, 1] = (0.0, gap, 0.0)
        values.append(feet_away(standing)[0])
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_terms_match_reference(flat_field, rng):
    for _ in range(1000):
        state = random_state(flat_field, rng)
        prev = random_state(flat_field, rng)
        action = rng.normal(size=(1, NUM_JOINTS))
        prev_action = rng.normal(size=(1, NUM_JOINTS))
        cmd = rng.uniform(-1, 1, size=3)
        terms = regularization_rewards(state, prev, action, prev_action, JOINTS)
        terms.update(safety_posture_rewards(state))
        lin, ang = tracking_rewards(state, cmd)

        roll, pitch, yaw = state.base_rpy[0]
        vx, vy, _ = state.base_linvel[0]
        bx = math.cos(yaw) * vx + math.sin(yaw) * vy
        by = -math.sin(yaw) * vx + math.cos(yaw) * vy
        expected = {
            "lin_vel": math.exp(-math.hypot(bx - cmd[0], by - cmd[1]) / 0.25),
            "ang_vel": math.exp(-abs(state.base_angvel[0, 2] - cmd[2]) / 0.25),
            "orientation": math.sin(pitch) ** 2 + (math.sin(roll) * math.cos(pitch)) ** 2,
            "energy": sum((t * v) ** 2 for t, v in zip(state.tau[0], state.qd[0])),
            "dof_vel": sum(v * v for v in state.qd[0]),
            "dof_acc": sum(((a - b) / 0.02) ** 2 for a, b in zip(state.qd[0], prev.qd[0])),
            "weighted_torques": sum((t / k) ** 2 for t, k in zip(state.tau[0], JOINTS.kp)),
            "contact_forces": sum(f - 400.0 for f in state.contact_force[0] if f >= 400.0),
            "collision": float(sum(f > 0.1 for f in state.collision_force[0])),
            "action_rate": sum((a - b) ** 2 for a, b in zip(prev_action[0], action[0])),
            "arm_dof": sum(state.q[0, j] ** 2 for j in ARM_JOINTS),
            "waist_dof": state.q[0, JOINTS.index("torso")] ** 2,
            "hip_yaw_dof": state.q[0, 0] ** 2 + state.q[0, 5] ** 2,
            "feet_away": min(math.dist(state.foot_pos[0, 0], state.foot_pos[0, 1]), 0.4),
        }
        got = dict(terms, lin_vel=lin, ang_vel=ang)
        for name, value in expected.items():
            assert got[name][0] == pytest.approx(value, rel=1e-12, abs=1e-300), name


def test_penetration_examples():
    box = VirtualObstacle((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), axis=2, inward=-1)
    outside = BodyPointMesh([[[2.0, 0.5, 0.5]]], [[[3.0, 0.0, 0.0]]])
    assert penetration_penalty(outside, [box])[0] == 0.0
    mesh = BodyPointMesh([[[0.5, 0.5, 0.9]]], [[[0.0, 2.0, 0.0]]])
    assert penetration_penalty(mesh, [box])[0] == pytest.approx(-1e-3)
    faster = BodyPointMesh(mesh.points, 2 * mesh.velocities)
    assert penetration_penalty(faster, [box])[0] == pytest.approx(2 * penetration_penalty(mesh, [box])[0])


def test_penetration_nonpositive(rng):
    boxes = [
        VirtualObstacle((0.0, 0.0, 0.0), (1.0, 1.0, 0.5), axis=2, inward=-1),
        VirtualObstacle((0.5, 0.0, 0.0), (0.6, 1.0, 1.0), axis=0, inward=1),
    ]
    mesh = BodyPointMesh(rng.uniform(-0.2, 1.2, size=(5, 40, 3)), rng.normal(size=(5, 40, 3)))
    assert np.all(penetration_penalty(mesh, boxes) <= 0.0)


def test_body_point_mesh():
    bounds = np.array([[[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]]])
    points = BodyPointMesh.lattice(bounds)
    assert points.shape == (1, 8, 3)
    assert {tuple(p) for p in points[0]} == {(x, y, z) for x in (0, 1) for y in (0, 2) for z in (0, 3)}
    with pytest.raises(InputError, match="shape"):
        BodyPointMesh(np.zeros((4, 3)), np.zeros((4, 3)))
    with pytest.raises(InputError, match="velocities"):
        BodyPointMesh(np.zeros((1, 4, 3)), np.zeros((1, 3, 3)))


def test_footstep_examples():
    targets = SteppingTargets((0.0, 3.0))
    assert footstep_reward(1.0, targets) == pytest.approx(0.0, abs=1e-12)
    assert footstep_reward(math.exp(-1.0), targets) == pytest.approx(6.0)
    assert footstep_reward(0.0, targets) == pytest.approx(60.0)
    assert footstep_reward(1.0, SteppingTargets()) == 0.0
    misses = np.linspace(0.0, 1.4, 30)
    values = [footstep_reward(m, targets) for m in misses]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert max(values) <= 60.0 + 1e-9


def test_touchdown_events():
    events = touchdown_events([[True, True]], [[False, True]])
    assert events.tolist() == [[True, False]]


def test_total_reward_examples():
    assert total_reward({"lin_vel": 1.0}).total[0] == 1.0
    assert total_reward({"ang_vel": 1.0}).total[0] == 1.5
    breakdown = total_reward({"lin_vel": 1.0}, extra={"gait": (0.5, 2.0)})
    assert breakdown.total[0] == 2.0
    assert breakdown.weighted("gait")[0] == 1.0
    with pytest.raises(InputError, match="unknown reward terms"):
        total_reward({"speed": 1.0})
    with pytest.raises(InputError, match="shadow"):
        total_reward({}, extra={"lin_vel": (1.0, 1.0)})


def test_breakdown_sums_to_total(rng):
    weights = RewardWeights()
    terms = {name: rng.normal(size=1000) for name in TERM_NAMES}
    breakdown = total_reward(terms, weights)
    expected = np.zeros(1000)
    for name in TERM_NAMES:
        expected = expected + breakdown.weighted(name)
    assert np.array_equal(breakdown.total, expected)


def test_weights_defaults_and_without():
    weights = RewardWeights()
    assert weights.collision == -10.0
    assert weights.energy == -2.5e-7
    assert weights.penetration == -5e-3 and weights.footstep == 6.0
    off = weights.without("footstep", "penetration")
    assert off.footstep == 0.0 and off.penetration == 0.0 and off.lin_vel == 1.0
    with pytest.raises(InputError, match="unknown"):
        weights.without("nope")


def test_idle_robot_reward(standing):
    zero = np.zeros((1, NUM_JOINTS))
    terms = compute_reward_terms(standing, standing, zero, zero, zero[:, :3], JOINTS, [[]], [SteppingTargets()])
    breakdown = total_reward(terms)
    expected = 1.0 + 1.5 + 0.4 * terms["feet_away"][0]
    assert breakdown.total[0] == pytest.approx(expected)
    assert terms["penetration"][0] == 0.0 and terms["footstep"][0] == 0.0


def test_compute_terms_penetration_and_footstep(standing):
    prev = standing.copy()
    moved = standing.copy()
    moved.base_pos[0, 0] += 0.02
    moved.foot_contact[0] = (True, False)
    prev.foot_contact[0] = (False, False)
    moved.foot_pos[0, 0, 0] = 1.5
    zero = np.zeros((1, NUM_JOINTS))
    box = VirtualObstacle((-10.0, -10.0, -10.0), (10.0, 10.0, 10.0), axis=2, inward=-1)
    terms = compute_reward_terms(
        moved, prev, zero, zero, zero[:, :3], JOINTS, [[box]], [SteppingTargets((1.5,))]
    )
    mesh = BodyPointMesh.from_states(moved, prev, 0.02)
    assert np.allclose(np.linalg.norm(mesh.velocities, axis=-1), 1.0)
    assert terms["penetration"][0] == pytest.approx(penetration_penalty(mesh, [box], alpha=1.0)[0])
    assert terms["footstep"][0] == pytest.approx(10.0)


def test_reward_log(tmp_path):
    path = tmp_path / "rewards.csv"
    breakdown = total_reward({"lin_vel": 1.0, "ang_vel": 0.5})
    with RewardLog(path) as log:
        log.write(3, breakdown)
    with RewardLog(path) as log:
        log.write(4, breakdown)
    with path.open() as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["step", "term", "value"]
    assert ["3", "lin_vel", "1.0"] in rows
    assert ["4", "total", repr(1.0 + 1.5 * 0.5)] in rows
    assert len(rows) == 1 + 2 * (len(TERM_NAMES) + 1)

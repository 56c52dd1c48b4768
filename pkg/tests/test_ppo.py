import logging
import math

import numpy as np
import pytest

from parkourpy.errors import InputError
from parkourpy.learning.ppo import PpoConfig, RolloutBuffer, clipped_surrogate, compute_gae, ppo_update
from parkourpy.learning.runner import PpoRunner
from parkourpy.neural.layers import no_grad
from parkourpy.neural.optim import Adam
from parkourpy.neural.policy import Observation, OraclePolicy, PolicyDims, ValueNetwork


def brute_force_gae(rewards, values, dones, gamma, lam):
    steps = len(rewards)
    out = np.zeros(steps)
    for t in range(steps):
        coef = 1.0
        for k in range(t, steps):
            live = 0.0 if dones[k] else 1.0
            delta = rewards[k] + gamma * values[k + 1] * live - values[k]
            out[t] += coef * delta
            if dones[k]:
                break
            coef *= gamma * lam
    return out


def zero_observation(dims, steps, envs, resets=True):
    return Observation(
        proprio=np.zeros((steps, envs, dims.proprio)),
        last_action=np.zeros((steps, envs, dims.action)),
        command=np.zeros((steps, envs, dims.command)),
        resets=np.full((steps, envs), resets),
        scandots=np.zeros((steps, envs, dims.scandots)),
        velocity=np.zeros((steps, envs, dims.velocity)),
    )


def test_gae_worked_example():
    advantages, returns = compute_gae([1.0, 1.0], [0.0, 0.0, 0.0], [False, False], 0.99, 0.95)
    assert advantages[0] == pytest.approx(1.9405, rel=1e-12)
    assert advantages[1] == 1.0
    assert np.array_equal(returns, advantages)


def test_gae_matches_brute_force(rng):
    for _ in range(100):
        rewards = rng.normal(size=10)
        values = rng.normal(size=11)
        dones = rng.uniform(size=10) < 0.2
        advantages, returns = compute_gae(rewards, values, dones, 0.99, 0.95)
        expected = brute_force_gae(rewards, values, dones, 0.99, 0.95)
        assert np.allclose(advantages, expected, rtol=0, atol=1e-10)
        assert np.allclose(returns, expected + values[:-1], rtol=0, atol=1e-10)


def test_gae_lambda_one_is_monte_carlo(rng):
    rewards = rng.normal(size=8)
    advantages, _ = compute_gae(rewards, np.zeros(9), np.zeros(8, dtype=bool), gamma=0.9, lam=1.0)
    discounted = [sum(0.9**k * r for k, r in enumerate(rewards[t:])) for t in range(8)]
    assert np.allclose(advantages, discounted, rtol=0, atol=1e-12)


def test_gae_batched_matches_columns(rng):
    rewards = rng.normal(size=(6, 3))
    values = rng.normal(size=(7, 3))
    dones = rng.uniform(size=(6, 3)) < 0.3
    advantages, _ = compute_gae(rewards, values, dones)
    for k in range(3):
        column, _ = compute_gae(rewards[:, k], values[:, k], dones[:, k])
        assert np.array_equal(advantages[:, k], column)


def test_gae_shape_error():
    with pytest.raises(InputError, match="one more step"):
        compute_gae(np.zeros(3), np.zeros(3), np.zeros(3, dtype=bool))


def test_surrogate_with_zero_advantages():
    logp = np.array([-1.0, -0.5, -2.0])
    loss, grad, ratio = clipped_surrogate(logp, logp - 0.3, np.zeros(3), 0.2)
    assert loss == 0.0
    assert np.all(grad == 0.0)
    assert np.allclose(ratio, math.exp(0.3))


def test_surrogate_clip_gradient_matches_finite_difference():
    old = np.zeros(2)
    logp = np.array([math.log(1.5), 0.0])
    advantages = np.array([1.0, 2.0])
    _, grad, ratio = clipped_surrogate(logp, old, advantages, 0.2)
    assert ratio[0] == pytest.approx(1.5)
    assert grad[0] == 0.0
    eps = 1e-6
    for k in range(2):
        up, down = logp.copy(), logp.copy()
        up[k] += eps
        down[k] -= eps
        high = clipped_surrogate(up, old, advantages, 0.2)[0]
        low = clipped_surrogate(down, old, advantages, 0.2)[0]
        numeric = (high - low) / (2 * eps)
        assert grad[k] == pytest.approx(numeric, rel=1e-6, abs=1e-9)


def test_rollout_buffer_checks(tiny_dims):
    step = (np.zeros((2, tiny_dims.action)), np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2, dtype=bool))
    with pytest.raises(InputError, match="positive sizes"):
        RolloutBuffer(0, 2, tiny_dims)
    buffer = RolloutBuffer(1, 2, tiny_dims)
    obs = zero_observation(tiny_dims, 1, 2)
    missing = Observation(obs.proprio, obs.last_action, obs.command, obs.resets)
    with pytest.raises(InputError, match="scandots and the true base velocity"):
        buffer.add(missing, *step)
    buffer.add(obs, *step)
    assert buffer.full
    with pytest.raises(InputError, match="is full"):
        buffer.add(obs, *step)


class BanditEnv:
    """One-step episodes rewarding actions near 0.5."""

    def __init__(self, dims, num_envs):
        self.dims = dims
        self.num_envs = num_envs

    def reset(self):
        return zero_observation(self.dims, 1, self.num_envs)

    def step(self, actions):
        rewards = -((actions[:, 0] - 0.5) ** 2)
        return self.reset(), rewards, np.ones(self.num_envs, dtype=bool)

    def metrics(self):
        return {}


def bandit_runner(seed, **overrides):
    dims = PolicyDims.tiny(action=1)
    settings = {"num_envs": 16, "steps_per_batch": 8, "epochs": 2, "minibatches": 2}
    cfg = PpoConfig(**{**settings, **overrides})
    policy = OraclePolicy(dims, np.random.default_rng(seed))
    value_net = ValueNetwork(dims, np.random.default_rng(seed + 1))
    return PpoRunner(BanditEnv(dims, cfg.num_envs), policy, value_net, cfg, seed=seed)


def mean_action(runner):
    obs = zero_observation(runner.policy.dims, 1, 1)
    with no_grad():
        out = runner.policy.forward(obs, runner.policy.initial_hidden(1))
    return float(out.mean[0, 0, 0])


def test_first_ratio_is_one():
    runner = bandit_runner(0)
    runner.collect()
    stats = runner.update()
    assert not stats.aborted
    assert stats.minibatch_updates == 4
    assert np.allclose(stats.first_ratio, 1.0, rtol=0, atol=1e-10)


def test_update_requires_full_buffer(policies):
    value_net = ValueNetwork(policies.dims, np.random.default_rng(0))
    buffer = RolloutBuffer(2, 2, policies.dims)
    optimizer = Adam(policies.oracle.parameters() + value_net.parameters())
    with pytest.raises(InputError, match="holds 0 of 2 steps"):
        ppo_update(policies.oracle, value_net, buffer, PpoConfig(), optimizer)


def test_std_floor_after_update():
    runner = bandit_runner(1, min_std=0.2)
    runner.policy.log_std.data[:] = math.log(0.05)
    runner.collect()
    runner.update()
    assert np.all(runner.policy.std >= 0.2 - 1e-12)


def test_non_finite_loss_aborts_and_restores(caplog):
    runner = bandit_runner(2)
    runner.collect()
    runner.buffer.rewards[3, 1] = np.nan
    before = runner.policy.state_dict()
    value_before = runner.value_net.state_dict()
    optimizer_before = runner.optimizer.state_dict()
    with caplog.at_level(logging.ERROR):
        stats = runner.update()
    assert stats.aborted
    assert "update aborted" in caplog.text
    for name, value in runner.policy.state_dict().items():
        assert np.array_equal(value, before[name])
    for name, value in runner.value_net.state_dict().items():
        assert np.array_equal(value, value_before[name])
    assert runner.optimizer.t == int(optimizer_before["t"][0])


def test_hidden_state_does_not_leak_across_resets(policies):
    dims = policies.dims
    rng = np.random.default_rng(5)
    obs = zero_observation(dims, 8, 2, resets=False)
    obs.proprio[:] = rng.normal(size=obs.proprio.shape)
    obs.scandots[:] = rng.normal(size=obs.scandots.shape)
    obs.resets[4] = True
    hidden = policies.oracle.initial_hidden(2)
    with no_grad():
        a = policies.oracle.forward(obs, hidden).mean
        obs.proprio[:4] += rng.normal(size=obs.proprio[:4].shape)
        obs.last_action[:4] = 1.0
        b = policies.oracle.forward(obs, hidden).mean
    assert not np.allclose(a[:4], b[:4])
    assert np.allclose(a[4:], b[4:], rtol=0, atol=1e-12)


@pytest.mark.slow
def test_bandit_converges():
    runner = bandit_runner(7, lr=3e-4, num_envs=64, steps_per_batch=24, epochs=5, minibatches=4)
    runner.learn(200, progress=False)
    assert mean_action(runner) == pytest.approx(0.5, abs=0.05)

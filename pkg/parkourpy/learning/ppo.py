"""Proximal policy optimization for the recurrent oracle policy.

Rollouts are stored time-major, ``(steps, num_envs, ...)``. Minibatches split
the environments, never the time axis, so every minibatch replays complete
24-step sequences from the hidden states stored at the start of the batch.
"""

__all__ = [
    "PpoConfig",
    "PpoStats",
    "RolloutBuffer",
    "clipped_surrogate",
    "compute_gae",
    "ppo_update",
]

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from parkourpy.errors import InputError
from parkourpy.neural.layers import Module
from parkourpy.neural.optim import Adam, clip_grad_norm, grads_finite
from parkourpy.neural.policy import (
    Observation,
    PolicyDims,
    RecurrentPolicy,
    ValueNetwork,
    gaussian_entropy,
    gaussian_log_prob,
)

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]


@dataclass(frozen=True)
class PpoConfig:
    clip: float = 0.2
    gae_lambda: float = 0.95
    lr: float = 3e-5
    gamma: float = 0.99
    min_std: float = 0.2
    epochs: int = 5
    minibatches: int = 4
    steps_per_batch: int = 24
    num_envs: int = 64
    entropy_coef: float = 0.005
    value_coef: float = 1.0
    estimator_coef: float = 1.0
    max_grad_norm: float = 1.0


@dataclass
class PpoStats:
    surrogate_loss: float = 0.0
    value_loss: float = 0.0
    estimator_loss: float = 0.0
    entropy: float = 0.0
    approx_kl: float = 0.0
    clip_fraction: float = 0.0
    grad_norm: float = 0.0
    minibatch_updates: int = 0
    aborted: bool = False
    first_ratio: FloatArray = field(default_factory=lambda: np.ones(0))

    def as_dict(self) -> Dict[str, float]:
        return {
            "surrogate_loss": self.surrogate_loss,
            "value_loss": self.value_loss,
            "estimator_loss": self.estimator_loss,
            "entropy": self.entropy,
            "approx_kl": self.approx_kl,
            "clip_fraction": self.clip_fraction,
            "grad_norm": self.grad_norm,
        }


class RolloutBuffer:
    """Fixed-size time-major storage of one PPO batch.

    ``hidden`` holds the recurrent states in force before the first stored
    step (keys ``actor``, ``estimator`` and ``value``) and ``last_value`` the
    bootstrap value of the state following the last step.
    """

    def __init__(self, steps: int, num_envs: int, dims: PolicyDims) -> None:
        if steps < 1 or num_envs < 1:
            raise InputError(f"rollout buffer needs positive sizes, got {steps}x{num_envs}")
        self.steps = steps
        self.num_envs = num_envs
        self.dims = dims
        shape = (steps, num_envs)
        self.proprio = np.zeros((*shape, dims.proprio))
        self.last_action = np.zeros((*shape, dims.action))
        self.command = np.zeros((*shape, dims.command))
        self.scandots = np.zeros((*shape, dims.scandots))
        self.velocity = np.zeros((*shape, dims.velocity))
        self.resets = np.zeros(shape, dtype=bool)
        self.actions = np.zeros((*shape, dims.action))
        self.log_probs = np.zeros(shape)
        self.rewards = np.zeros(shape)
        self.dones = np.zeros(shape, dtype=bool)
        self.values = np.zeros(shape)
        self.last_value = np.zeros(num_envs)
        self.hidden: Dict[str, FloatArray] = {}
        self.step = 0

    @property
    def full(self) -> bool:
        return self.step == self.steps

    def clear(self) -> None:
        self.step = 0

    def add(
        self,
        obs: Observation,
        actions: FloatArray,
        log_probs: FloatArray,
        values: FloatArray,
        rewards: FloatArray,
        dones: BoolArray,
    ) -> None:
        """Store one step; ``obs`` is a single-step (T = 1) observation."""
        if self.full:
            raise InputError("rollout buffer is full")
        if obs.scandots is None or obs.velocity is None:
            raise InputError("rollouts need scandots and the true base velocity")
        t = self.step
        self.proprio[t] = obs.proprio[0]
        self.last_action[t] = obs.last_action[0]
        self.command[t] = obs.command[0]
        self.scandots[t] = obs.scandots[0]
        self.velocity[t] = obs.velocity[0]
        self.resets[t] = obs.resets[0]
        self.actions[t] = actions
        self.log_probs[t] = log_probs
        self.values[t] = values
        self.rewards[t] = rewards
        self.dones[t] = dones
        self.step += 1

    def observation(self) -> Observation:
        return Observation(
            self.proprio,
            self.last_action,
            self.command,
            self.resets,
            scandots=self.scandots,
            velocity=self.velocity,
        )


def compute_gae(
    rewards: FloatArray,
    values: FloatArray,
    dones: BoolArray,
    gamma: float = 0.99,
    lam: float = 0.95,
) -> Tuple[FloatArray, FloatArray]:
    """Generalized advantage estimates and value targets.

    Parameters
    ----------
    rewards : ndarray
        Rewards, shape (T,) or (T, N).
    values : ndarray
        Value estimates with the bootstrap value of the post-batch state
        appended, shape (T + 1,) or (T + 1, N).
    dones : ndarray
        Episode-end flags; a done step does not bootstrap.
    gamma, lam : float
        Discount factor and GAE lambda.

    Returns
    -------
    (ndarray, ndarray)
        Raw (unnormalized) advantages and returns ``advantages + values[:-1]``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if values.shape[0] != rewards.shape[0] + 1 or values.shape[1:] != rewards.shape[1:]:
        raise InputError(
            f"values must have one more step than rewards: {values.shape} vs {rewards.shape}"
        )
    advantages = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    for t in reversed(range(rewards.shape[0])):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * live - values[t]
        running = delta + gamma * lam * live * running
        advantages[t] = running
    return advantages, advantages + values[:-1]


def clipped_surrogate(
    log_prob: FloatArray, old_log_prob: FloatArray, advantages: FloatArray, clip: float
) -> Tuple[float, FloatArray, FloatArray]:
    """Negated clipped surrogate, its gradient w.r.t. ``log_prob`` and the ratios."""
    ratio = np.exp(log_prob - old_log_prob)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages
    loss = -float(np.mean(np.minimum(unclipped, clipped)))
    grad = np.where(unclipped <= clipped, -advantages * ratio, 0.0) / advantages.size
    return loss, grad, ratio


def _snapshot(modules: List[Module], optimizer: Adam) -> Tuple[list, Dict[str, FloatArray]]:  # type: ignore[type-arg]
    return [m.state_dict() for m in modules], optimizer.state_dict()


def ppo_update(
    policy: RecurrentPolicy,
    value_net: ValueNetwork,
    buffer: RolloutBuffer,
    cfg: PpoConfig,
    optimizer: Adam,
    rng: Optional[np.random.Generator] = None,
) -> PpoStats:
    """Run ``cfg.epochs`` passes of ``cfg.minibatches`` updates over a full buffer.

    A non-finite loss or gradient restores the parameters and optimizer
    moments held before the update and returns stats with ``aborted`` set.
    """
    if not buffer.full:
        raise InputError(f"rollout buffer holds {buffer.step} of {buffer.steps} steps")
    rng = rng or np.random.default_rng()
    values = np.concatenate([buffer.values, buffer.last_value[None]], axis=0)
    advantages, returns = compute_gae(buffer.rewards, values, buffer.dones, cfg.gamma, cfg.gae_lambda)
    advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    modules: List[Module] = [policy, value_net]
    saved = _snapshot(modules, optimizer)
    params = policy.parameters() + value_net.parameters()
    obs = buffer.observation()
    stats = PpoStats()
    count = 0
    splits = max(1, min(cfg.minibatches, buffer.num_envs))

    for epoch in range(cfg.epochs):
        for k, envs in enumerate(np.array_split(rng.permutation(buffer.num_envs), splits)):
            policy.clear_tape()
            value_net.clear_tape()
            optimizer.zero_grad()
            mb = obs.slice_envs(envs)
            hidden = {
                "actor": buffer.hidden["actor"][envs],
                "estimator": buffer.hidden["estimator"][envs],
            }
            out = policy.forward(mb, hidden)
            log_std = policy.log_std.data
            actions = buffer.actions[:, envs]
            log_prob = gaussian_log_prob(actions, out.mean, log_std)
            surrogate, g_logp, ratio = clipped_surrogate(
                log_prob, buffer.log_probs[:, envs], advantages[:, envs], cfg.clip
            )
            if epoch == 0 and k == 0:
                stats.first_ratio = ratio.copy()

            inv_var = np.exp(-2.0 * log_std)
            diff = actions - out.mean
            grad_mean = g_logp[..., None] * diff * inv_var
            policy.log_std.grad += np.sum(
                g_logp[..., None] * (diff * diff * inv_var - 1.0), axis=(0, 1)
            ) - cfg.entropy_coef

            samples = g_logp.size
            assert mb.velocity is not None
            v_err = out.velocity - mb.velocity
            estimator_loss = float(np.sum(v_err * v_err)) / samples
            policy.backward(grad_mean, cfg.estimator_coef * 2.0 * v_err / samples)

            predicted, _ = value_net.forward(mb, buffer.hidden["value"][envs])
            r_err = predicted - returns[:, envs]
            value_loss = float(np.mean(r_err * r_err))
            value_net.backward(cfg.value_coef * 2.0 * r_err / samples)

            entropy = gaussian_entropy(log_std)
            loss = (
                surrogate
                + cfg.value_coef * value_loss
                + cfg.estimator_coef * estimator_loss
                - cfg.entropy_coef * entropy
            )
            if not np.isfinite(loss) or not grads_finite(params):
                for module, state in zip(modules, saved[0]):
                    module.load_state_dict(state)
                optimizer.load_state_dict(saved[1])
                policy.clear_tape()
                value_net.clear_tape()
                logger.error(
                    "non-finite PPO loss at epoch %d minibatch %d; update aborted", epoch, k
                )
                return PpoStats(aborted=True, first_ratio=stats.first_ratio)

            stats.grad_norm += clip_grad_norm(params, cfg.max_grad_norm)
            optimizer.step()
            policy.clamp_std(cfg.min_std)

            log_ratio = np.log(ratio)
            stats.surrogate_loss += surrogate
            stats.value_loss += value_loss
            stats.estimator_loss += estimator_loss
            stats.entropy += entropy
            stats.approx_kl += float(np.mean((ratio - 1.0) - log_ratio))
            stats.clip_fraction += float(np.mean(np.abs(ratio - 1.0) > cfg.clip))
            count += 1

    for name in ("surrogate_loss", "value_loss", "estimator_loss", "entropy", "approx_kl", "clip_fraction", "grad_norm"):
        setattr(stats, name, getattr(stats, name) / count)
    stats.minibatch_updates = count
    return stats

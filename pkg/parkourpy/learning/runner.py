"""On-policy training loop: rollout collection, PPO updates, metrics and checkpoints."""

__all__ = ["PpoRunner", "VecEnv"]

import csv
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from tqdm import tqdm

from parkourpy.commands import CurriculumState
from parkourpy.learning.checkpoint import load_checkpoint, save_checkpoint
from parkourpy.learning.ppo import PpoConfig, PpoStats, RolloutBuffer, ppo_update
from parkourpy.neural.layers import no_grad
from parkourpy.neural.optim import Adam
from parkourpy.neural.policy import Observation, RecurrentPolicy, ValueNetwork, gaussian_log_prob

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

METRIC_COLUMNS = (
    "iteration",
    "mean_reward",
    "episode_length",
    "success_rate",
    "curriculum_row",
    "surrogate_loss",
    "value_loss",
    "estimator_loss",
    "entropy",
    "approx_kl",
    "clip_fraction",
    "grad_norm",
)


class VecEnv(Protocol):
    num_envs: int

    def reset(self) -> Observation:
        ...

    def step(self, actions: FloatArray) -> Tuple[Observation, FloatArray, NDArray[np.bool_]]:
        ...

    def metrics(self) -> Dict[str, float]:
        ...


class PpoRunner:
    """Drives PPO on a vectorized environment.

    Parameters
    ----------
    env : VecEnv
        Environments yielding single-step observations with scandots and the
        true base velocity.
    policy : RecurrentPolicy
        Actor trained by PPO, usually an ``OraclePolicy``.
    value_net : ValueNetwork
        Critic.
    cfg : PpoConfig
        Hyperparameters.
    seed : int, optional
        Seed for action sampling and minibatch permutations.
    metrics_path : str or Path, optional
        CSV file receiving one row per iteration.
    stage : str, optional
        Training stage recorded in checkpoints.
    """

    def __init__(
        self,
        env: VecEnv,
        policy: RecurrentPolicy,
        value_net: ValueNetwork,
        cfg: PpoConfig,
        seed: int = 0,
        metrics_path: Union[str, Path, None] = None,
        stage: str = "plane",
    ) -> None:
        self.env = env
        self.policy = policy
        self.value_net = value_net
        self.cfg = cfg
        self.stage = stage
        self.rng = np.random.default_rng(seed)
        self.optimizer = Adam(policy.parameters() + value_net.parameters(), lr=cfg.lr)
        self.buffer = RolloutBuffer(cfg.steps_per_batch, env.num_envs, policy.dims)
        self.metrics_path = Path(metrics_path) if metrics_path else None
        self.iteration = 0
        self._obs: Optional[Observation] = None
        self._hidden = policy.initial_hidden(env.num_envs)
        self._value_hidden = value_net.initial_hidden(env.num_envs)

    def collect(self) -> float:
        """Fill the rollout buffer; returns the mean reward per step."""
        if self._obs is None:
            self._obs = self.env.reset()
        buffer = self.buffer
        buffer.clear()
        buffer.hidden = {
            "actor": self._hidden["actor"].copy(),
            "estimator": self._hidden["estimator"].copy(),
            "value": self._value_hidden.copy(),
        }
        obs = self._obs
        std = self.policy.std
        with no_grad():
            while not buffer.full:
                out = self.policy.forward(obs, self._hidden)
                values, value_hidden = self.value_net.forward(obs, self._value_hidden)
                actions = out.mean[0] + std * self.rng.standard_normal(out.mean[0].shape)
                log_probs = gaussian_log_prob(actions[None], out.mean, self.policy.log_std.data)[0]
                next_obs, rewards, dones = self.env.step(actions)
                buffer.add(obs, actions, log_probs, values[0], rewards, dones)
                self._hidden = out.hidden
                self._value_hidden = value_hidden
                obs = next_obs
            bootstrap, _ = self.value_net.forward(obs, self._value_hidden)
        buffer.last_value = bootstrap[0].copy()
        self._obs = obs
        return float(buffer.rewards.mean())

    def update(self) -> PpoStats:
        return ppo_update(self.policy, self.value_net, self.buffer, self.cfg, self.optimizer, self.rng)

    def learn(
        self,
        iterations: int,
        progress: bool = True,
        checkpoint_every: int = 0,
        checkpoint_dir: Union[str, Path, None] = None,
    ) -> List[Dict[str, float]]:
        """Alternate collection and updates for ``iterations`` iterations.

        Returns the metrics row of every iteration; rows are also appended to
        ``metrics_path`` when set.
        """
        rows: List[Dict[str, float]] = []
        writer = None
        handle = None
        if self.metrics_path is not None:
            new_file = not self.metrics_path.exists()
            self.metrics_path.parent.mkdir(parents=True, exist_ok=True)
            handle = self.metrics_path.open("a", newline="")
            writer = csv.DictWriter(handle, fieldnames=self._columns(), extrasaction="ignore", restval="")
            if new_file:
                writer.writeheader()
        try:
            for _ in tqdm(range(iterations), desc=f"train {self.stage}", disable=not progress):
                mean_reward = self.collect()
                stats = self.update()
                self.iteration += 1
                row = {"iteration": float(self.iteration), "mean_reward": mean_reward}
                row.update(self.env.metrics())
                row.update(stats.as_dict())
                rows.append(row)
                if writer is not None and handle is not None:
                    writer.writerow(row)
                    handle.flush()
                if stats.aborted:
                    logger.warning("iteration %d: update aborted, parameters unchanged", self.iteration)
                logger.info(
                    "iteration %d: reward %.4f, episode length %s, value loss %.4f",
                    self.iteration,
                    mean_reward,
                    _fmt(row.get("episode_length", math.nan)),
                    stats.value_loss,
                )
                if checkpoint_every and checkpoint_dir and self.iteration % checkpoint_every == 0:
                    self.save(Path(checkpoint_dir) / f"{self.stage}_{self.iteration:06d}.zip")
        finally:
            if handle is not None:
                handle.close()
        return rows

    def save(self, path: Union[str, Path]) -> Path:
        curriculum: Optional[CurriculumState] = getattr(self.env, "curriculum", None)
        return save_checkpoint(
            path,
            self.policy,
            self.value_net,
            self.optimizer,
            self.iteration,
            self.stage,
            curriculum if isinstance(curriculum, CurriculumState) else None,
        )

    def restore(self, path: Union[str, Path], optimizer: bool = True) -> int:
        """Load network weights (and optimizer moments) from a checkpoint.

        A stage handoff, e.g. plane to parkour, passes ``optimizer=False``
        and keeps the iteration counter at zero.
        """
        checkpoint = load_checkpoint(path)
        checkpoint.policy.load_into(self.policy)
        if checkpoint.value is not None:
            checkpoint.value.load_into(self.value_net)
        if optimizer and checkpoint.optimizer:
            self.optimizer.load_state_dict(checkpoint.optimizer)
            self.iteration = checkpoint.iteration
        logger.info(
            "restored %s checkpoint from iteration %d", checkpoint.stage or "unknown", checkpoint.iteration
        )
        return checkpoint.iteration

    def _columns(self) -> List[str]:
        columns = list(METRIC_COLUMNS)
        extra = getattr(self.env, "metric_names", None)
        if extra:
            columns += [name for name in extra if name not in columns]
        return columns


def _fmt(value: float) -> str:
    return "n/a" if math.isnan(value) else f"{value:.1f}"

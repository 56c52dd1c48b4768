"""DAgger labelling and the L1 distillation step for the depth student."""

__all__ = [
    "DistillBatch",
    "DistillStats",
    "StudentTrajectory",
    "dagger_label",
    "distill_update",
    "l1_action_loss",
]

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from parkourpy.errors import InputError
from parkourpy.neural.layers import no_grad
from parkourpy.neural.optim import Adam, clip_grad_norm
from parkourpy.neural.policy import Observation, OraclePolicy, RecurrentPolicy

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]
IntArray = NDArray[np.int64]


@dataclass
class StudentTrajectory:
    """Time-major student rollout, (T, B, ...).

    ``scandots`` is the oracle's view of each raw simulator state; a row of
    NaN marks a step whose raw state was not retained.
    """

    proprio: FloatArray
    last_action: FloatArray
    command: FloatArray
    depth: FloatArray
    velocity: FloatArray
    scandots: FloatArray
    resets: BoolArray
    dones: BoolArray
    episode: IntArray
    step: IntArray
    collector_id: int = 0


@dataclass
class DistillBatch:
    observation: Observation
    teacher_actions: FloatArray
    valid: BoolArray
    dones: BoolArray
    episode: IntArray
    step: IntArray
    collector_id: int = 0
    skipped: int = 0

    @property
    def transitions(self) -> int:
        return int(np.count_nonzero(self.valid))


@dataclass
class DistillStats:
    l1_loss: float
    estimator_loss: float
    grad_norm: float


def dagger_label(oracle: OraclePolicy, trajectory: StudentTrajectory) -> DistillBatch:
    """Label a student trajectory with the oracle's deterministic actions.

    The oracle's hidden state is replayed along the whole trajectory from the
    episode starts marked in ``resets``. Steps without a raw state get no
    label; they still advance the oracle's recurrence with blank scandots.
    """
    valid = np.all(np.isfinite(trajectory.scandots), axis=-1)
    skipped = int(valid.size - np.count_nonzero(valid))
    if skipped:
        logger.warning(
            "collector %d: %d steps have no raw state and were skipped",
            trajectory.collector_id,
            skipped,
        )
    scandots = np.where(valid[..., None], trajectory.scandots, 0.0)
    obs = Observation(
        trajectory.proprio,
        trajectory.last_action,
        trajectory.command,
        trajectory.resets,
        scandots=scandots,
        depth=trajectory.depth,
        velocity=trajectory.velocity,
    )
    with no_grad():
        out = oracle.forward(obs, oracle.initial_hidden(obs.batch))
    return DistillBatch(
        observation=obs,
        teacher_actions=out.mean.copy(),
        valid=valid,
        dones=trajectory.dones,
        episode=trajectory.episode,
        step=trajectory.step,
        collector_id=trajectory.collector_id,
        skipped=skipped,
    )


def l1_action_loss(
    mean: FloatArray, teacher: FloatArray, valid: Optional[BoolArray] = None
) -> Tuple[float, FloatArray]:
    """Mean over valid steps of the summed absolute action gap, and its gradient."""
    if valid is None:
        valid = np.ones(mean.shape[:-1], dtype=bool)
    count = int(np.count_nonzero(valid))
    if count == 0:
        raise InputError("distillation batch has no labelled steps")
    gap = (mean - teacher) * valid[..., None]
    loss = float(np.sum(np.abs(gap))) / count
    return loss, np.sign(gap) / count


def distill_update(
    student: RecurrentPolicy,
    batch: DistillBatch,
    optimizer: Adam,
    train_estimator: bool = True,
    max_grad_norm: float = 1.0,
) -> DistillStats:
    """One gradient step of the student towards the teacher labels.

    The velocity estimator is co-trained on the true base velocity when
    ``train_estimator`` is set and the batch carries it.
    """
    obs = batch.observation
    student.clear_tape()
    optimizer.zero_grad()
    out = student.forward(obs, student.initial_hidden(obs.batch))
    loss, grad_mean = l1_action_loss(out.mean, batch.teacher_actions, batch.valid)

    grad_velocity = None
    estimator_loss = 0.0
    if train_estimator and obs.velocity is not None:
        count = batch.transitions
        err = (out.velocity - obs.velocity) * batch.valid[..., None]
        estimator_loss = float(np.sum(err * err)) / count
        grad_velocity = 2.0 * err / count
    student.backward(grad_mean, grad_velocity)

    norm = clip_grad_norm(student.parameters(), max_grad_norm)
    optimizer.step()
    return DistillStats(loss, estimator_loss, norm)

"""Oracle and student parkour policies, velocity estimator and value network.

Inputs are time-major: every observation array has shape (T, B, ...) and
``resets[t, b]`` marks the first step of an episode, where recurrent state
starts from zero.

The actor consumes, in order: proprioception, last action, command, terrain
embedding and estimated base velocity.
"""

__all__ = [
    "ActorTrunk",
    "DepthEncoder",
    "Observation",
    "OraclePolicy",
    "PolicyDims",
    "PolicyOutput",
    "RecurrentPolicy",
    "ScandotEncoder",
    "StudentPolicy",
    "ValueNetwork",
    "VelocityEstimator",
    "gaussian_entropy",
    "gaussian_log_prob",
]

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from parkourpy.errors import ContractError
from parkourpy.neural.layers import CELU, GRU, MLP, Conv2d, Linear, MaxPool2d, Module, Parameter

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]


@dataclass(frozen=True)
class PolicyDims:
    proprio: int = 43
    action: int = 19
    command: int = 3
    scandots: int = 209
    embedding: int = 32
    velocity: int = 3
    actor_hidden: int = 256
    actor_mlp: Tuple[int, ...] = (512, 256, 128)
    estimator_hidden: int = 128
    estimator_mlp: Tuple[int, ...] = (128, 64)
    scandot_mlp: Tuple[int, ...] = (128, 64)
    depth_shape: Tuple[int, int] = (48, 64)
    min_std: float = 0.2
    init_std: float = 1.0

    @property
    def actor_input(self) -> int:
        return self.proprio + self.action + self.command + self.embedding + self.velocity

    @classmethod
    def tiny(cls, **overrides: object) -> "PolicyDims":
        """Small widths with the same wiring, for tests and toy problems."""
        base = cls(
            actor_hidden=8,
            actor_mlp=(16, 8),
            estimator_hidden=8,
            estimator_mlp=(8,),
            scandot_mlp=(16,),
            embedding=4,
        )
        return replace(base, **overrides)  # type: ignore[arg-type]


@dataclass
class Observation:
    """Time-major observation bundle; absent fields are None."""

    proprio: FloatArray
    last_action: FloatArray
    command: FloatArray
    resets: BoolArray
    scandots: Optional[FloatArray] = None
    depth: Optional[FloatArray] = None
    velocity: Optional[FloatArray] = None

    @property
    def steps(self) -> int:
        return int(self.proprio.shape[0])

    @property
    def batch(self) -> int:
        return int(self.proprio.shape[1])

    def slice_envs(self, index: NDArray[np.int64]) -> "Observation":
        def cut(a: Optional[FloatArray]) -> Optional[FloatArray]:
            return None if a is None else a[:, index]

        return Observation(
            self.proprio[:, index],
            self.last_action[:, index],
            self.command[:, index],
            self.resets[:, index],
            cut(self.scandots),
            cut(self.depth),
            cut(self.velocity),
        )


@dataclass
class PolicyOutput:
    mean: FloatArray
    velocity: FloatArray
    embedding: FloatArray
    hidden: Dict[str, FloatArray] = field(default_factory=dict)


def gaussian_log_prob(actions: FloatArray, mean: FloatArray, log_std: FloatArray) -> FloatArray:
    """Log density of a diagonal Gaussian, summed over the last axis."""
    z = (actions - mean) * np.exp(-log_std)
    k = actions.shape[-1]
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * k * math.log(2.0 * math.pi)  # type: ignore[no-any-return]


def gaussian_entropy(log_std: FloatArray) -> float:
    return float(np.sum(log_std) + 0.5 * log_std.size * (1.0 + math.log(2.0 * math.pi)))


def _flat(x: FloatArray, tail: int) -> Tuple[FloatArray, Tuple[int, ...]]:
    lead = x.shape[: x.ndim - tail]
    return x.reshape((-1,) + x.shape[x.ndim - tail :]), lead


class ScandotEncoder(Module):
    """Scandot heights to the terrain embedding."""

    def __init__(self, dims: PolicyDims, rng: np.random.Generator) -> None:
        super().__init__()
        self.mlp = MLP((dims.scandots, *dims.scandot_mlp, dims.embedding), rng)

    def forward(self, scandots: FloatArray) -> FloatArray:
        return self.mlp.forward(scandots)

    def backward(self, grad: FloatArray) -> FloatArray:
        return self.mlp.backward(grad)


class DepthEncoder(Module):
    """Convolutional encoder of a depth image to the terrain embedding.

    conv(16, 5, /2), conv(32, 4, /2), 2x2 max pool, conv(32, 3), flatten,
    affine to the embedding; CELU after every convolution.
    """

    def __init__(self, dims: PolicyDims, rng: np.random.Generator) -> None:
        super().__init__()
        self.conv0 = Conv2d(1, 16, 5, 2, rng)
        self.act0 = CELU()
        self.conv1 = Conv2d(16, 32, 4, 2, rng)
        self.act1 = CELU()
        self.pool = MaxPool2d(2)
        self.conv2 = Conv2d(32, 32, 3, 1, rng)
        self.act2 = CELU()
        h, w = self.conv0.output_shape(*dims.depth_shape)
        h, w = self.conv1.output_shape(h, w)
        h, w = self.conv2.output_shape(h // 2, w // 2)
        if h < 1 or w < 1:
            raise ContractError(f"depth shape {dims.depth_shape} is too small for the encoder")
        self.depth_shape = dims.depth_shape
        self.flat_features = 32 * h * w
        self.head = Linear(self.flat_features, dims.embedding, rng)
        self._stages = (self.conv0, self.act0, self.conv1, self.act1, self.pool, self.conv2, self.act2)

    def forward(self, depth: FloatArray) -> FloatArray:
        images, lead = _flat(depth, 2)
        if images.shape[1:] != self.depth_shape:
            raise ContractError(f"depth images must be {self.depth_shape}, got {images.shape[1:]}")
        x = images[:, None]
        for stage in self._stages:
            x = stage.forward(x)  # type: ignore[attr-defined]
        self._record(x.shape)
        out = self.head.forward(x.reshape(x.shape[0], -1))
        return out.reshape(lead + (out.shape[-1],))

    def backward(self, grad: FloatArray) -> FloatArray:
        shape = self._pop()
        g = self.head.backward(grad.reshape(-1, grad.shape[-1])).reshape(shape)
        for stage in reversed(self._stages):
            g = stage.backward(g)  # type: ignore[attr-defined]
        return g[:, 0]


class VelocityEstimator(Module):
    """GRU and MLP from proprioception and last action to base velocity."""

    def __init__(self, dims: PolicyDims, rng: np.random.Generator) -> None:
        super().__init__()
        self.dims = dims
        self.gru = GRU(dims.proprio + dims.action, dims.estimator_hidden, rng)
        self.mlp = MLP((dims.estimator_hidden, *dims.estimator_mlp, dims.velocity), rng)

    def forward(
        self, proprio: FloatArray, last_action: FloatArray, hidden: FloatArray, resets: BoolArray
    ) -> Tuple[FloatArray, FloatArray]:
        out, h = self.gru.forward(np.concatenate([proprio, last_action], axis=-1), hidden, resets)
        return self.mlp.forward(out), h

    def backward(self, grad: FloatArray) -> None:
        self.gru.backward(self.mlp.backward(grad))


class ActorTrunk(Module):
    """GRU followed by an MLP head producing the action mean."""

    def __init__(self, dims: PolicyDims, rng: np.random.Generator, output: Optional[int] = None, output_gain: float = 0.01) -> None:
        super().__init__()
        self.gru = GRU(dims.actor_input, dims.actor_hidden, rng)
        out = dims.action if output is None else output
        self.mlp = MLP((dims.actor_hidden, *dims.actor_mlp, out), rng, output_gain=output_gain)

    def forward(self, x: FloatArray, hidden: FloatArray, resets: BoolArray) -> Tuple[FloatArray, FloatArray]:
        out, h = self.gru.forward(x, hidden, resets)
        return self.mlp.forward(out), h

    def backward(self, grad: FloatArray) -> FloatArray:
        dx, _ = self.gru.backward(self.mlp.backward(grad))
        return dx


class RecurrentPolicy(Module):
    """Shared actor wiring; subclasses choose the terrain encoder."""

    dims: PolicyDims
    encoder: Module

    def __init__(self, dims: PolicyDims, rng: np.random.Generator) -> None:
        super().__init__()
        self.dims = dims
        self.estimator = VelocityEstimator(dims, rng)
        self.actor = ActorTrunk(dims, rng)
        self.log_std = Parameter(np.full(dims.action, math.log(dims.init_std)))

    def initial_hidden(self, batch: int) -> Dict[str, FloatArray]:
        return {
            "actor": self.actor.gru.initial_state(batch),
            "estimator": self.estimator.gru.initial_state(batch),
        }

    def _terrain(self, obs: Observation) -> FloatArray:
        raise NotImplementedError

    def embed(self, obs: Observation) -> FloatArray:
        """Terrain embedding of every step, (T, B, embedding)."""
        return self._terrain(obs)

    def forward(
        self,
        obs: Observation,
        hidden: Dict[str, FloatArray],
        embedding: Optional[FloatArray] = None,
    ) -> PolicyOutput:
        """Action means for a sequence.

        The estimated velocity enters the actor as a constant: the actor loss
        does not reach the estimator. Pass ``embedding`` to bypass the
        encoder, for instance to hold a depth embedding between vision
        updates.
        """
        v_hat, h_est = self.estimator.forward(obs.proprio, obs.last_action, hidden["estimator"], obs.resets)
        emb = self._terrain(obs) if embedding is None else embedding
        x = np.concatenate([obs.proprio, obs.last_action, obs.command, emb, v_hat], axis=-1)
        self._record(embedding is None)
        mean, h_act = self.actor.forward(x, hidden["actor"], obs.resets)
        return PolicyOutput(mean, v_hat, emb, {"actor": h_act, "estimator": h_est})

    def backward(self, grad_mean: FloatArray, grad_velocity: Optional[FloatArray] = None) -> None:
        """Backpropagate through the actor (and encoder) and, if given, the estimator."""
        encoded = self._pop()
        dx = self.actor.backward(grad_mean)
        d = self.dims
        start = d.proprio + d.action + d.command
        if encoded:
            self.encoder.backward(dx[..., start : start + d.embedding])  # type: ignore[attr-defined]
        if grad_velocity is None:
            self.estimator.clear_tape()
        else:
            self.estimator.backward(grad_velocity)

    def clamp_std(self, min_std: Optional[float] = None) -> None:
        floor = self.dims.min_std if min_std is None else min_std
        np.maximum(self.log_std.data, math.log(floor), out=self.log_std.data)

    @property
    def std(self) -> FloatArray:
        return np.exp(self.log_std.data)  # type: ignore[no-any-return]

    def trunk_state(self) -> Dict[str, FloatArray]:
        """Parameters shared by oracle and student: actor, estimator and log-std."""
        return {
            name: value
            for name, value in self.state_dict().items()
            if not name.startswith("encoder.")
        }


class OraclePolicy(RecurrentPolicy):
    """Actor reading terrain through scandots."""

    def __init__(self, dims: Optional[PolicyDims] = None, rng: Optional[np.random.Generator] = None) -> None:
        dims = dims or PolicyDims()
        rng = rng or np.random.default_rng()
        super().__init__(dims, rng)
        self.encoder = ScandotEncoder(dims, rng)

    def _terrain(self, obs: Observation) -> FloatArray:
        if obs.scandots is None:
            raise ContractError("oracle policy needs scandot observations")
        return self.encoder.forward(obs.scandots)  # type: ignore[no-any-return]


class StudentPolicy(RecurrentPolicy):
    """Actor reading terrain through depth images.

    With an ``encoder`` given, that module replaces the depth CNN; the
    identity test of distillation uses the oracle's scandot encoder here.
    """

    def __init__(
        self,
        dims: Optional[PolicyDims] = None,
        rng: Optional[np.random.Generator] = None,
        encoder: Optional[Module] = None,
    ) -> None:
        dims = dims or PolicyDims()
        rng = rng or np.random.default_rng()
        super().__init__(dims, rng)
        self.encoder = encoder if encoder is not None else DepthEncoder(dims, rng)

    def _terrain(self, obs: Observation) -> FloatArray:
        if isinstance(self.encoder, DepthEncoder):
            if obs.depth is None:
                raise ContractError("student policy needs depth observations")
            return self.encoder.forward(obs.depth)
        if obs.scandots is None:
            raise ContractError("substituted encoder needs scandot observations")
        return self.encoder.forward(obs.scandots)  # type: ignore[attr-defined,no-any-return]

    @classmethod
    def from_oracle(
        cls,
        oracle: OraclePolicy,
        rng: Optional[np.random.Generator] = None,
        encoder: Optional[Module] = None,
    ) -> "StudentPolicy":
        """Fresh student whose actor, estimator and log-std copy the oracle's."""
        student = cls(oracle.dims, rng, encoder)
        own = student.state_dict()
        own.update(oracle.trunk_state())
        if encoder is not None:
            own.update({f"encoder.{k}": v for k, v in encoder.state_dict().items()})
        student.load_state_dict(own)
        return student


class ValueNetwork(Module):
    """Critic with the actor's architecture, fed the true base velocity."""

    def __init__(self, dims: Optional[PolicyDims] = None, rng: Optional[np.random.Generator] = None) -> None:
        super().__init__()
        dims = dims or PolicyDims()
        rng = rng or np.random.default_rng()
        self.dims = dims
        self.encoder = ScandotEncoder(dims, rng)
        self.trunk = ActorTrunk(dims, rng, output=1, output_gain=1.0)

    def initial_hidden(self, batch: int) -> FloatArray:
        return self.trunk.gru.initial_state(batch)

    def forward(self, obs: Observation, hidden: FloatArray) -> Tuple[FloatArray, FloatArray]:
        """Values (T, B) and the last hidden state."""
        if obs.scandots is None or obs.velocity is None:
            raise ContractError("value network needs scandots and the true base velocity")
        emb = self.encoder.forward(obs.scandots)
        x = np.concatenate([obs.proprio, obs.last_action, obs.command, emb, obs.velocity], axis=-1)
        values, h = self.trunk.forward(x, hidden, obs.resets)
        return values[..., 0], h

    def backward(self, grad_values: FloatArray) -> None:
        dx = self.trunk.backward(grad_values[..., None])
        d = self.dims
        start = d.proprio + d.action + d.command
        self.encoder.backward(dx[..., start : start + d.embedding])

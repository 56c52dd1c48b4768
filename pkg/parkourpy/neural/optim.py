"""Adam optimizer and gradient utilities."""

__all__ = ["Adam", "clip_grad_norm", "grads_finite"]

from typing import Dict, List, Sequence

import numpy as np
from numpy.typing import NDArray

from parkourpy.neural.layers import Parameter

FloatArray = NDArray[np.float64]


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total


def grads_finite(params: Sequence[Parameter]) -> bool:
    return all(bool(np.all(np.isfinite(p.grad))) for p in params)


class Adam:
    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 1e-3,
        betas: Sequence[float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        self.params: List[Parameter] = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> Dict[str, FloatArray]:
        state = {"t": np.array([self.t], dtype=np.float64), "lr": np.array([self.lr])}
        for k, (m, v) in enumerate(zip(self.m, self.v)):
            state[f"m{k}"] = m.copy()
            state[f"v{k}"] = v.copy()
        return state

    def load_state_dict(self, state: Dict[str, FloatArray]) -> None:
        self.t = int(state["t"][0])
        self.lr = float(state["lr"][0])
        self.m = [np.array(state[f"m{k}"], dtype=np.float64) for k in range(len(self.params))]
        self.v = [np.array(state[f"v{k}"], dtype=np.float64) for k in range(len(self.params))]

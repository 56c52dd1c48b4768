"""Reverse-mode differentiable layers on numpy arrays.

Every differentiable forward call pushes what its backward pass needs onto
the module's tape; ``backward`` pops it again, so calls must be undone in
reverse order. Gradients accumulate into ``Parameter.grad``. Inside
:func:`no_grad` nothing is recorded.
"""

__all__ = [
    "CELU",
    "GRU",
    "MLP",
    "Conv2d",
    "Linear",
    "MaxPool2d",
    "Module",
    "Parameter",
    "celu",
    "grad_enabled",
    "no_grad",
]

from collections import OrderedDict
from contextlib import contextmanager
from typing import Any, Dict, Generator, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import NDArray

from parkourpy.errors import ContractError

FloatArray = NDArray[np.float64]

_grad_enabled = True


@contextmanager
def no_grad() -> Generator[None, None, None]:
    """Run forward passes without recording anything for backward."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


class Parameter:
    """A trainable array and its accumulated gradient."""

    def __init__(self, data: FloatArray) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape})"


class Module:
    """Container of parameters and submodules with a backward tape."""

    def __init__(self) -> None:
        self._params: Dict[str, Parameter] = OrderedDict()
        self._children: Dict[str, "Module"] = OrderedDict()
        self._tape: List[Any] = []

    def __setattr__(self, name: str, value: Any) -> None:
        if isinstance(value, Parameter):
            self.__dict__.setdefault("_params", OrderedDict())[name] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_children", OrderedDict())[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._params.items():
            yield prefix + name, param
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def clear_tape(self) -> None:
        self._tape.clear()
        for child in self._children.values():
            child.clear_tape()

    def state_dict(self) -> "OrderedDict[str, FloatArray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, FloatArray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise ContractError(
                f"parameter names differ: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
            )
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ContractError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()

    def copy_from(self, other: "Module") -> None:
        self.load_state_dict(other.state_dict())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def _record(self, item: Any) -> None:
        if _grad_enabled:
            self._tape.append(item)

    def _pop(self) -> Any:
        if not self._tape:
            raise ContractError(f"{type(self).__name__}.backward called without a recorded forward")
        return self._tape.pop()


def celu(x: FloatArray, alpha: float = 1.0) -> FloatArray:
    """``x`` for ``x >= 0``, ``alpha * (exp(x / alpha) - 1)`` below."""
    return np.where(x >= 0, x, alpha * np.expm1(np.minimum(x, 0.0) / alpha))


class CELU(Module):
    def __init__(self, alpha: float = 1.0) -> None:
        super().__init__()
        self.alpha = alpha

    def forward(self, x: FloatArray) -> FloatArray:
        self._record(x)
        return celu(x, self.alpha)

    def backward(self, grad: FloatArray) -> FloatArray:
        x = self._pop()
        return grad * np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0) / self.alpha))


def _check_last_dim(x: FloatArray, size: int, layer: str) -> None:
    if x.shape[-1] != size:
        raise ContractError(f"{layer} expects trailing dimension {size}, got shape {x.shape}")


class Linear(Module):
    """Affine map on the last axis, weights U(+-gain/sqrt(fan_in)), zero bias."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: Optional[np.random.Generator] = None,
        gain: float = 1.0,
    ) -> None:
        super().__init__()
        rng = rng or np.random.default_rng()
        bound = gain / np.sqrt(in_features)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(rng.uniform(-bound, bound, size=(in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: FloatArray) -> FloatArray:
        _check_last_dim(x, self.in_features, "Linear")
        self._record(x)
        return x @ self.weight.data + self.bias.data  # type: ignore[no-any-return]

    def backward(self, grad: FloatArray) -> FloatArray:
        x = self._pop()
        x2 = x.reshape(-1, self.in_features)
        g2 = grad.reshape(-1, self.out_features)
        self.weight.grad += x2.T @ g2
        self.bias.grad += g2.sum(axis=0)
        return grad @ self.weight.data.T  # type: ignore[no-any-return]


class MLP(Module):
    """Stack of affine layers with CELU between them.

    ``sizes`` lists every width, input first. The last layer has no
    activation unless ``activate_output`` is set.
    """

    def __init__(
        self,
        sizes: Sequence[int],
        rng: Optional[np.random.Generator] = None,
        output_gain: float = 1.0,
        activate_output: bool = False,
    ) -> None:
        super().__init__()
        if len(sizes) < 2:
            raise ContractError("an MLP needs at least an input and an output size")
        rng = rng or np.random.default_rng()
        self.sizes = tuple(sizes)
        self.layers: List[Module] = []
        last = len(sizes) - 2
        for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            linear = Linear(a, b, rng, gain=output_gain if k == last else 1.0)
            setattr(self, f"fc{k}", linear)
            self.layers.append(linear)
            if k < last or activate_output:
                act = CELU()
                setattr(self, f"act{k}", act)
                self.layers.append(act)

    def forward(self, x: FloatArray) -> FloatArray:
        for layer in self.layers:
            x = layer.forward(x)  # type: ignore[attr-defined]
        return x

    def backward(self, grad: FloatArray) -> FloatArray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)  # type: ignore[attr-defined]
        return grad


def _sigmoid(x: FloatArray) -> FloatArray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))  # type: ignore[no-any-return]


def _orthogonal(rng: np.random.Generator, rows: int, cols: int) -> FloatArray:
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T  # type: ignore[no-any-return]


class GRU(Module):
    """Single-layer gated recurrent unit over time-major sequences.

    ``h' = (1 - z) * h + z * n`` with reset gate ``r`` applied to the
    recurrent part of the candidate ``n``. A ``resets[t]`` flag zeroes the
    hidden state of that batch row before step ``t``.
    """

    def __init__(
        self, input_size: int, hidden_size: int, rng: Optional[np.random.Generator] = None
    ) -> None:
        super().__init__()
        rng = rng or np.random.default_rng()
        self.input_size = input_size
        self.hidden_size = hidden_size
        bound = 1.0 / np.sqrt(hidden_size)
        self.weight_x = Parameter(rng.uniform(-bound, bound, size=(input_size, 3 * hidden_size)))
        self.weight_h = Parameter(
            np.concatenate([_orthogonal(rng, hidden_size, hidden_size) for _ in range(3)], axis=1)
        )
        self.bias_x = Parameter(np.zeros(3 * hidden_size))
        self.bias_h = Parameter(np.zeros(3 * hidden_size))

    def initial_state(self, batch: int) -> FloatArray:
        return np.zeros((batch, self.hidden_size))

    def forward(
        self, x: FloatArray, h0: FloatArray, resets: Optional[NDArray[np.bool_]] = None
    ) -> Tuple[FloatArray, FloatArray]:
        """Run ``x`` of shape (T, B, input) from ``h0`` (B, hidden).

        Returns all hidden states (T, B, hidden) and the last one.
        """
        _check_last_dim(x, self.input_size, "GRU")
        steps, batch = x.shape[:2]
        if h0.shape != (batch, self.hidden_size):
            raise ContractError(f"GRU hidden state must be {(batch, self.hidden_size)}, got {h0.shape}")
        keep = np.ones((steps, batch)) if resets is None else 1.0 - np.asarray(resets, dtype=np.float64)
        H = self.hidden_size
        wx, wh = self.weight_x.data, self.weight_h.data
        gx_all = x @ wx + self.bias_x.data
        out = np.empty((steps, batch, H))
        cache = []
        h = h0
        for t in range(steps):
            h = h * keep[t][:, None]
            gh = h @ wh + self.bias_h.data
            gx = gx_all[t]
            r = _sigmoid(gx[:, :H] + gh[:, :H])
            z = _sigmoid(gx[:, H : 2 * H] + gh[:, H : 2 * H])
            hn = gh[:, 2 * H :]
            n = np.tanh(gx[:, 2 * H :] + r * hn)
            h_new = (1.0 - z) * h + z * n
            cache.append((h, r, z, n, hn))
            out[t] = h_new
            h = h_new
        self._record((x, keep, cache))
        return out, h

    def backward(
        self, grad_out: FloatArray, grad_last: Optional[FloatArray] = None
    ) -> Tuple[FloatArray, FloatArray]:
        """Gradients w.r.t. the inputs (T, B, input) and the initial state."""
        x, keep, cache = self._pop()
        steps, batch = x.shape[:2]
        H = self.hidden_size
        wx, wh = self.weight_x.data, self.weight_h.data
        dx = np.empty_like(x)
        dh = np.zeros((batch, H)) if grad_last is None else grad_last.copy()
        for t in reversed(range(steps)):
            h, r, z, n, hn = cache[t]
            dh = dh + grad_out[t]
            dn = dh * z
            dz = dh * (n - h)
            dh_prev = dh * (1.0 - z)
            dn_pre = dn * (1.0 - n * n)
            dr_pre = dn_pre * hn * r * (1.0 - r)
            dz_pre = dz * z * (1.0 - z)
            gx = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
            gh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
            self.weight_x.grad += x[t].T @ gx
            self.bias_x.grad += gx.sum(axis=0)
            self.weight_h.grad += h.T @ gh
            self.bias_h.grad += gh.sum(axis=0)
            dx[t] = gx @ wx.T
            dh = (dh_prev + gh @ wh.T) * keep[t][:, None]
        return dx, dh


class Conv2d(Module):
    """Valid (unpadded) strided convolution on (B, C, H, W) inputs."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        super().__init__()
        rng = rng or np.random.default_rng()
        fan_in = in_channels * kernel * kernel
        bound = 1.0 / np.sqrt(fan_in)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.weight = Parameter(
            rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel, kernel))
        )
        self.bias = Parameter(np.zeros(out_channels))

    def output_shape(self, height: int, width: int) -> Tuple[int, int]:
        return (height - self.kernel) // self.stride + 1, (width - self.kernel) // self.stride + 1

    def forward(self, x: FloatArray) -> FloatArray:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ContractError(f"Conv2d expects (B, {self.in_channels}, H, W), got {x.shape}")
        k, s = self.kernel, self.stride
        batch = x.shape[0]
        ho, wo = self.output_shape(x.shape[2], x.shape[3])
        if ho < 1 or wo < 1:
            raise ContractError(f"input {x.shape[2:]} is smaller than the {k}x{k} kernel")
        windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * ho * wo, -1)
        w = self.weight.data.reshape(self.out_channels, -1)
        out = cols @ w.T + self.bias.data
        self._record((x.shape, cols))
        return out.reshape(batch, ho, wo, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, grad: FloatArray) -> FloatArray:
        shape, cols = self._pop()
        batch, _, height, width = shape
        k, s = self.kernel, self.stride
        ho, wo = grad.shape[2], grad.shape[3]
        g2 = grad.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        w = self.weight.data.reshape(self.out_channels, -1)
        self.weight.grad += (g2.T @ cols).reshape(self.weight.shape)
        self.bias.grad += g2.sum(axis=0)
        dcols = (g2 @ w).reshape(batch, ho, wo, self.in_channels, k, k)
        dx = np.zeros(shape)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[..., i, j].transpose(0, 3, 1, 2)
        return dx


class MaxPool2d(Module):
    """Non-overlapping ``size`` x ``size`` max pooling; trailing rows/cols dropped."""

    def __init__(self, size: int = 2) -> None:
        super().__init__()
        self.size = size

    def forward(self, x: FloatArray) -> FloatArray:
        p = self.size
        b, c, h, w = x.shape
        ho, wo = h // p, w // p
        blocks = x[:, :, : ho * p, : wo * p].reshape(b, c, ho, p, wo, p).transpose(0, 1, 2, 4, 3, 5)
        flat = blocks.reshape(b, c, ho, wo, p * p)
        arg = flat.argmax(axis=-1)
        self._record((x.shape, arg))
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad: FloatArray) -> FloatArray:
        shape, arg = self._pop()
        p = self.size
        b, c, h, w = shape
        ho, wo = arg.shape[2], arg.shape[3]
        flat = np.zeros((b, c, ho, wo, p * p))
        np.put_along_axis(flat, arg[..., None], grad[..., None], axis=-1)
        blocks = flat.reshape(b, c, ho, wo, p, p).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * p, wo * p)
        dx = np.zeros(shape)
        dx[:, :, : ho * p, : wo * p] = blocks
        return dx

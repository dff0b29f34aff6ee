"""Dense-network kernels with hand-written gradients, Adam, and a gradient checker.

Tensors are plain 2-D numpy arrays. Learnable weights live in :class:`Param`,
which carries its gradient and Adam moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

DEFAULT_DTYPE = np.float64
BCE_CLAMP = 1e-7


class DimensionError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator; ``stream`` picks an independent sub-stream of ``seed``.

    PCG64 produces the same stream on every platform for a given seed sequence.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)
    step_count: int = 0

    def __post_init__(self):
        self.value = np.atleast_2d(np.asarray(self.value))
        if self.value.dtype.kind != "f":
            self.value = self.value.astype(DEFAULT_DTYPE)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def glorot(din: int, dout: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> Param:
    a = np.sqrt(6.0 / (din + dout))
    return Param(rng.uniform(-a, a, size=(din, dout)).astype(dtype))


def zeros(rows: int, cols: int, dtype=DEFAULT_DTYPE) -> Param:
    return Param(np.zeros((rows, cols), dtype=dtype))


# --- dense ---------------------------------------------------------------


def dense_forward(x: np.ndarray, W: Param, b: Param) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (1, W.shape[1]):
        raise DimensionError(f"dense: x{x.shape} W{W.shape} b{b.shape}")
    return x @ W.value + b.value


def dense_backward(x: np.ndarray, W: Param, b: Param, dy: np.ndarray) -> np.ndarray:
    """Accumulate into ``W.grad``/``b.grad`` and return the input gradient."""
    W.grad += x.T @ dy
    b.grad += dy.sum(axis=0, keepdims=True)
    return dy @ W.value.T


# --- activations ---------------------------------------------------------


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite input to {what}")


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_rows(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def activation_forward(x: np.ndarray, kind: str) -> np.ndarray:
    _check_finite(x, kind)
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax_rows":
        if x.ndim != 2 or x.shape[1] < 1:
            raise DimensionError("softmax_rows needs at least one column")
        return softmax_rows(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(x: np.ndarray, y: np.ndarray, dy: np.ndarray, kind: str) -> np.ndarray:
    """Input gradient given the forward input ``x`` and output ``y``."""
    if kind == "relu":
        return dy * (x > 0)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    if kind == "softmax_rows":
        return y * (dy - (dy * y).sum(axis=1, keepdims=True))
    if kind == "identity":
        return dy
    raise ValueError(f"unknown activation {kind!r}")


# --- losses --------------------------------------------------------------


def _check_pair(pred: np.ndarray, target: np.ndarray) -> None:
    if pred.shape != target.shape:
        raise DimensionError(f"loss: pred{pred.shape} target{target.shape}")


def loss_forward(pred: np.ndarray, target: np.ndarray, kind: str) -> float:
    _check_pair(pred, target)
    if kind == "bce":
        p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
        return float(-np.mean(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)))
    if kind == "mse":
        return float(np.mean((pred - target) ** 2))
    raise ValueError(f"unknown loss {kind!r}")


def loss_backward(pred: np.ndarray, target: np.ndarray, kind: str) -> np.ndarray:
    _check_pair(pred, target)
    n = pred.shape[0]
    if kind == "bce":
        p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
        return (p - target) / (p * (1.0 - p)) / n
    if kind == "mse":
        return 2.0 * (pred - target) / n
    raise ValueError(f"unknown loss {kind!r}")


# --- optimisation ----------------------------------------------------------


def adam_step(
    p: Param,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """Bias-corrected Adam with decoupled weight decay; zeroes ``p.grad``."""
    g = p.grad
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient in adam_step")
    if weight_decay:
        p.value -= lr * weight_decay * p.value
    p.step_count += 1
    t = p.step_count
    p.adam_m *= beta1
    p.adam_m += (1.0 - beta1) * g
    p.adam_v *= beta2
    p.adam_v += (1.0 - beta2) * g * g
    m_hat = p.adam_m / (1.0 - beta1**t)
    v_hat = p.adam_v / (1.0 - beta2**t)
    p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    p.zero_grad()


def grad_check(
    f: Callable[[], float],
    params: Mapping[str, Param] | Iterable[Param],
    h: float = 1e-5,
) -> float:
    """Max relative error between the analytic grads already stored in
    ``params`` and central differences of ``f``.

    ``f`` must recompute the loss from the current parameter values; the
    caller populates ``.grad`` (via one backward pass) before calling.
    """
    plist = list(params.values()) if isinstance(params, Mapping) else list(params)
    worst = 0.0
    for p in plist:
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            num = (fp - fm) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(1.0, abs(a), abs(num))
            worst = max(worst, err)
    return worst

"""Numerically stable primitives, affine layers with explicit gradients,
a bias-corrected Adam optimizer, and a finite-difference gradient oracle.

Everything here computes in float64; stored artifacts (embeddings,
checkpoints) are float32 at the file boundary only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError


def _require_finite(x: np.ndarray | float, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite value in {what}")


def lse(logits) -> float:
    """log(sum(exp(logits))) via max-shift; never overflows for finite input."""
    v = np.asarray(logits, dtype=np.float64)
    if v.size == 0:
        raise ValueError("lse of an empty vector")
    _require_finite(v, "lse input")
    m = float(np.max(v))
    return m + float(np.log(np.sum(np.exp(v - m))))


def lse_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise lse for a (n, k) batch of logits."""
    v = np.asarray(logits, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] == 0:
        raise ValueError("expected a non-empty (n, k) logits batch")
    _require_finite(v, "lse input")
    m = np.max(v, axis=1, keepdims=True)
    return (m[:, 0] + np.log(np.sum(np.exp(v - m), axis=1)))


def softplus(x) -> float | np.ndarray:
    """log(1 + exp(x)) evaluated as max(x, 0) + log1p(exp(-|x|)).

    Finite for any finite x; non-negative (underflows to exactly 0 below
    x ~ -745 where exp(x) drops under the smallest subnormal).
    """
    v = np.asarray(x, dtype=np.float64)
    _require_finite(v, "softplus input")
    out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    return float(out) if np.isscalar(x) or out.ndim == 0 else out


def sigmoid(x) -> float | np.ndarray:
    """Logistic function via the stable branch exp(-softplus(-x))."""
    v = np.asarray(x, dtype=np.float64)
    out = np.exp(-(np.maximum(-v, 0.0) + np.log1p(np.exp(-np.abs(v)))))
    return float(out) if np.isscalar(x) or out.ndim == 0 else out


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-shift."""
    v = np.asarray(logits, dtype=np.float64)
    m = np.max(v, axis=1, keepdims=True)
    e = np.exp(v - m)
    return e / np.sum(e, axis=1, keepdims=True)


def leaky_relu(x, slope: float):
    """x for x >= 0, slope*x otherwise. slope must lie in (0, 1)."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky slope must be in (0, 1), got {slope}")
    v = np.asarray(x, dtype=np.float64)
    _require_finite(v, "leaky_relu input")
    out = np.where(v >= 0.0, v, slope * v)
    return float(out) if np.isscalar(x) or out.ndim == 0 else out


def leaky_relu_grad(x, slope: float):
    """Derivative of leaky_relu: 1 for x > 0, slope otherwise (slope at x == 0)."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky slope must be in (0, 1), got {slope}")
    v = np.asarray(x, dtype=np.float64)
    out = np.where(v > 0.0, 1.0, slope)
    return float(out) if np.isscalar(x) or out.ndim == 0 else out


@dataclass
class ParamTensor:
    """A trainable tensor with a paired gradient buffer of identical shape."""

    values: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        else:
            self.grad = np.asarray(self.grad, dtype=np.float64)
        if self.grad.shape != self.values.shape:
            raise ValueError("grad shape must match values shape")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def check_finite(self) -> None:
        _require_finite(self.values, "parameter values")
        _require_finite(self.grad, "parameter grad")


@dataclass
class OptimizerState:
    """Adam moment buffers for one ParamTensor."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_param(cls, param: ParamTensor, learning_rate: float = 5e-5,
                  beta1: float = 0.9, beta2: float = 0.999,
                  epsilon: float = 1e-8) -> "OptimizerState":
        if learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0 and epsilon > 0.0):
            raise ValueError("invalid Adam hyperparameters")
        return cls(first_moment=np.zeros_like(param.values),
                   second_moment=np.zeros_like(param.values),
                   learning_rate=learning_rate, beta1=beta1, beta2=beta2,
                   epsilon=epsilon)


def affine_forward(W: ParamTensor, b: ParamTensor, x: np.ndarray) -> np.ndarray:
    """W @ x + b. W is (out, in), b is (out,), x is (in,) or a (n, in) batch."""
    x = np.asarray(x, dtype=np.float64)
    if W.values.ndim != 2 or b.values.ndim != 1 or W.shape[0] != b.shape[0]:
        raise ValueError("W must be (out, in) and b (out,)")
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"input dim {x.shape[-1]} != weight in-dim {W.shape[1]}")
    if x.ndim == 1:
        return W.values @ x + b.values
    if x.ndim == 2:
        return x @ W.values.T + b.values
    raise ValueError("x must be a vector or a (n, in) batch")


def affine_backward(W: ParamTensor, b: ParamTensor, x: np.ndarray,
                    upstream: np.ndarray, accumulate: bool = True) -> np.ndarray:
    """Backprop through affine_forward.

    Accumulates dL/dW = upstream (outer) x and dL/db = upstream into the grad
    buffers (unless accumulate is False) and returns dL/dx = W^T upstream.
    Batched inputs sum their per-sample contributions.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape[-1] != W.shape[1] or upstream.shape[-1] != W.shape[0]:
        raise ValueError("shapes inconsistent with affine_forward")
    if x.ndim != upstream.ndim:
        raise ValueError("x and upstream must both be single or both batched")
    if x.ndim == 1:
        if accumulate:
            W.grad += np.outer(upstream, x)
            b.grad += upstream
        return W.values.T @ upstream
    if accumulate:
        W.grad += upstream.T @ x
        b.grad += upstream.sum(axis=0)
    return upstream @ W.values


def adam_step(param: ParamTensor, state: OptimizerState) -> None:
    """One bias-corrected Adam update; zeroes the grad buffer afterward."""
    if not np.all(np.isfinite(param.grad)):
        raise NumericError("non-finite gradient; update aborted")
    state.step_count += 1
    t = state.step_count
    g = param.grad
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * g
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * g * g
    m_hat = state.first_moment / (1.0 - state.beta1 ** t)
    v_hat = state.second_moment / (1.0 - state.beta2 ** t)
    param.values -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    param.zero_grad()
    _require_finite(param.values, "parameter values after update")


def finite_diff_grad(loss_fn, param: ParamTensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of loss_fn w.r.t. param.

    loss_fn takes no arguments and must read param.values (and be
    deterministic: dropout off or a fixed mask). param is restored exactly.
    """
    flat = param.values.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(param.values.shape)

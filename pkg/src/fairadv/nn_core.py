"""Dense-network numerics: affine layers, ReLU, logistic loss, gradient
reversal, Adagrad and a central-difference gradient oracle.

Everything here works on float64 numpy arrays and mutates only what the
caller hands in.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np

ADAGRAD_EPS = 1e-8
ADAGRAD_INITIAL_ACCUMULATOR = 0.1


class ShapeError(ValueError):
    pass


@dataclass
class DenseLayer:
    """Affine map ``weights @ x + bias`` with weights of shape (out_dim, in_dim)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} incompatible with bias {self.bias.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def params(self) -> Dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias}


def dense_forward(x: np.ndarray, layer: DenseLayer) -> np.ndarray:
    """Apply the layer to a single vector (in_dim,) or a batch (n, in_dim)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(f"expected trailing dim {layer.in_dim}, got {x.shape}")
    return x @ layer.weights.T + layer.bias


def dense_backward(x: np.ndarray, upstream: np.ndarray, layer: DenseLayer):
    """Backprop through ``dense_forward`` for a batch.

    Returns ``(grad_weights, grad_bias, grad_input)``; gradients are summed
    over the batch rows.
    """
    x = np.atleast_2d(x)
    upstream = np.atleast_2d(upstream)
    grad_w = upstream.T @ x
    grad_b = upstream.sum(axis=0)
    grad_x = upstream @ layer.weights
    return grad_w, grad_b, grad_x


def relu(v: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(v, dtype=np.float64), 0.0)


def relu_backward(upstream: np.ndarray, v: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(np.asarray(v) > 0, upstream, 0.0)


def sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else out[()]


def softplus(t):
    """log(1 + exp(t)) without overflow."""
    t = np.asarray(t, dtype=np.float64)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def logistic_loss(logit, label):
    """Binary cross entropy on a raw logit, elementwise.

    Uses ``(1 - y) * t + softplus(-t)``, which never exponentiates a large
    positive number.
    """
    t = np.asarray(logit, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    return (1.0 - y) * t + softplus(-t)


def logistic_loss_grad(logit, label):
    """d logistic_loss / d logit = sigmoid(logit) - label."""
    return sigmoid(logit) - np.asarray(label, dtype=np.float64)


def grad_reverse(upstream_grad: np.ndarray, lam: float) -> np.ndarray:
    """Backward rule of the gradient-reversal identity: scale by ``-lam``."""
    if lam < 0:
        raise ValueError(f"reversal weight must be >= 0, got {lam}")
    return -lam * np.asarray(upstream_grad, dtype=np.float64)


@dataclass
class AdagradState:
    accumulator: np.ndarray

    @classmethod
    def like(cls, param: np.ndarray, initial: float = ADAGRAD_INITIAL_ACCUMULATOR):
        # keep the memory layout of the parameter (encoder weights are F-ordered)
        return cls(np.full_like(param, initial, dtype=np.float64))


def adagrad_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdagradState,
    lr: float,
    eps: float = ADAGRAD_EPS,
) -> None:
    """In-place Adagrad update of ``param`` and ``state.accumulator``."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if param.shape != grad.shape or param.shape != state.accumulator.shape:
        raise ShapeError(
            f"param {param.shape}, grad {grad.shape}, "
            f"accumulator {state.accumulator.shape} must match"
        )
    acc = state.accumulator
    acc += grad * grad
    param -= lr * grad / (np.sqrt(acc) + eps)


@dataclass
class GradientSet:
    """Named gradient blocks, one per parameter block."""

    blocks: Dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, key):
        return self.blocks[key]

    def __setitem__(self, key, value):
        self.blocks[key] = value

    def __iter__(self):
        return iter(self.blocks)

    def keys(self):
        return self.blocks.keys()

    def items(self):
        return self.blocks.items()


def finite_difference_grad(
    loss_fn: Callable[[Dict[str, np.ndarray]], float],
    params: Dict[str, np.ndarray],
    h: float = 1e-5,
) -> GradientSet:
    """Central-difference gradient of ``loss_fn`` w.r.t. every entry of ``params``.

    ``params`` is perturbed in place and restored afterwards.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    grads = GradientSet()
    for name, block in params.items():
        g = np.zeros(block.shape, dtype=np.float64)
        for idx in np.ndindex(block.shape):
            orig = block[idx]
            block[idx] = orig + h
            up = float(loss_fn(params))
            block[idx] = orig - h
            down = float(loss_fn(params))
            block[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads

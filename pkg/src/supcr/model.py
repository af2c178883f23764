"""Numpy feedforward networks with hand-written backprop, SGD and cosine annealing."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass
class MLP:
    """Affine layers with ReLU between them and an identity output.

    ``weights[l]`` has shape ``(fan_in, fan_out)`` so a forward pass is
    ``x @ W + b``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return type(self)([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self, x)[0]


class LinearPredictor(MLP):
    """Single affine layer ``d_e -> d_t``."""

    @property
    def weight(self) -> np.ndarray:
        return self.weights[0]

    @property
    def bias(self) -> np.ndarray:
        return self.biases[0]


ProjectionHead = MLP


def init_mlp(widths, rng: np.random.Generator, cls=MLP) -> MLP:
    """Uniform fan-in init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` for weights and biases."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise DomainError(f"invalid layer widths {widths}")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return cls(weights, biases)


def init_projection_head(d_e: int, d_p: int, rng) -> MLP:
    return init_mlp([d_e, d_e, d_p], rng)


def init_linear_predictor(d_e: int, d_t: int, rng) -> LinearPredictor:
    return init_mlp([d_e, d_t], rng, cls=LinearPredictor)


def mlp_forward(net: MLP, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns outputs and the cache ``[input, pre-activation_1, ...]`` for backprop."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.weights[0].shape[0]:
        raise DomainError(f"input shape {x.shape} does not match width {net.weights[0].shape[0]}")
    cache = [x]
    h = x
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        if l < last:
            cache.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return h, cache


def mlp_backward(net: MLP, cache: list[np.ndarray], upstream: np.ndarray):
    """Reverse pass. Returns ``(grads, d_input)`` with ``grads`` ordered like ``net.params()``."""
    g = np.asarray(upstream, dtype=np.float64)
    n_layers = len(net.weights)
    if len(cache) != n_layers or g.shape != (len(cache[0]), net.weights[-1].shape[1]):
        raise DomainError("upstream gradient or cache does not match the network")
    grads = [None] * (2 * n_layers)
    for l in range(n_layers - 1, -1, -1):
        inp = cache[0] if l == 0 else np.maximum(cache[l], 0.0)
        grads[2 * l] = inp.T @ g
        grads[2 * l + 1] = g.sum(axis=0)
        g = g @ net.weights[l].T
        if l > 0:
            g = g * (cache[l] > 0)
    return grads, g


class RegressionLossKind(str, enum.Enum):
    L1 = "l1"
    MSE = "mse"
    HUBER = "huber"


def regression_loss(pred, target, kind: RegressionLossKind = RegressionLossKind.L1, beta: float = 1.0):
    """Mean elementwise loss and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DomainError(f"prediction shape {pred.shape} != target shape {target.shape}")
    kind = RegressionLossKind(kind)
    e = pred - target
    count = e.size
    if kind is RegressionLossKind.L1:
        return float(np.abs(e).mean()), np.sign(e) / count
    if kind is RegressionLossKind.MSE:
        return float((e**2).mean()), 2.0 * e / count
    if beta <= 0:
        raise DomainError("Huber beta must be positive")
    small = np.abs(e) <= beta
    value = np.where(small, 0.5 * e**2, beta * (np.abs(e) - 0.5 * beta))
    grad = np.where(small, e, beta * np.sign(e))
    return float(value.mean()), grad / count


@dataclass
class OptimizerState:
    lr_base: float = 0.05
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    total_steps: int = 1
    step: int = 0
    buffers: list[np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise DomainError("momentum must lie in [0, 1)")
        if self.lr_base <= 0 or self.lr_min < 0:
            raise DomainError("learning rates must be positive")
        if self.total_steps < 1:
            raise DomainError("total_steps must be >= 1")


def cosine_lr(step: int, state: OptimizerState) -> float:
    t = min(max(step, 0), state.total_steps)
    return state.lr_min + 0.5 * (state.lr_base - state.lr_min) * (
        1.0 + math.cos(math.pi * t / state.total_steps)
    )


def sgd_step(params, grads, state: OptimizerState, lr: float | None = None):
    """In-place momentum SGD: ``m <- mu m + g + wd theta``; ``theta <- theta - lr m``.

    Uses the cosine schedule at ``state.step`` unless ``lr`` is given, then
    advances ``state.step``.
    """
    if len(params) != len(grads):
        raise DomainError("params and grads differ in length")
    if state.buffers is None:
        state.buffers = [np.zeros_like(p) for p in params]
    if lr is None:
        lr = cosine_lr(state.step, state)
    for p, g, m in zip(params, grads, state.buffers):
        if p.shape != g.shape:
            raise DomainError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.momentum
        m += g
        if state.weight_decay:
            m += state.weight_decay * p
        p -= lr * m
    state.step += 1
    return params

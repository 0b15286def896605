"""Dense layers with hand-written reverse-mode gradients, plus SGD/Adam.

Layers act on the last axis, so a layer with ``in_dim = w`` can be applied to a
``(batch, d, w)`` stack of windows directly. Forward activations are cached on a
:class:`GradientTape`; a backward call consumes the cache and accumulates
parameter gradients on the same tape.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError, DimensionError, StateError, TrainingError


class Activation(str, Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


def sigmoid(x):
    """Overflow-free logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def apply_activation(pre: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return np.maximum(pre, 0.0)
    if activation is Activation.SIGMOID:
        return sigmoid(pre)
    return pre


def activation_grad(pre: np.ndarray, out: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return (pre > 0).astype(np.float64)
    if activation is Activation.SIGMOID:
        return out * (1.0 - out)
    return np.ones_like(pre)


@dataclass
class GradientTape:
    cache: dict = field(default_factory=dict)
    grads: dict = field(default_factory=dict)

    def add_grad(self, key, name: str, g: np.ndarray) -> None:
        slot = self.grads.setdefault(key, {})
        if name in slot:
            slot[name] = slot[name] + g
        else:
            slot[name] = g

    def grad(self, key, name: str, like: np.ndarray) -> np.ndarray:
        g = self.grads.get(key, {}).get(name)
        return np.zeros_like(like) if g is None else g


class DenseLayer:
    """``y = act(x @ W + b)`` over the last axis of ``x``."""

    def __init__(self, weight, bias=None, activation=Activation.IDENTITY):
        self.weight = np.array(weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise DimensionError("weight must be a 2-D matrix")
        self.bias = None if bias is None else np.array(bias, dtype=np.float64)
        if self.bias is not None and self.bias.shape != (self.weight.shape[1],):
            raise DimensionError(f"bias shape {self.bias.shape} does not match out_dim {self.weight.shape[1]}")
        self.activation = Activation(activation)

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, out_dim: int, activation=Activation.IDENTITY,
             use_bias: bool = True) -> "DenseLayer":
        if in_dim < 1 or out_dim < 1:
            raise ConfigurationError(f"layer dims must be positive, got {in_dim}x{out_dim}")
        return cls(glorot_uniform(rng, in_dim, out_dim), np.zeros(out_dim) if use_bias else None, activation)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def params(self) -> list[tuple[str, np.ndarray]]:
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out

    @property
    def n_params(self) -> int:
        return self.weight.size + (0 if self.bias is None else self.bias.size)

    def forward(self, x: np.ndarray, tape: GradientTape | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"input width {x.shape[-1]} != layer in_dim {self.in_dim}")
        pre = x @ self.weight
        if self.bias is not None:
            pre = pre + self.bias
        out = apply_activation(pre, self.activation)
        if tape is not None:
            tape.cache[id(self)] = (x, pre, out)
        return out

    def backward(self, upstream: np.ndarray, tape: GradientTape) -> np.ndarray:
        try:
            x, pre, out = tape.cache[id(self)]
        except KeyError:
            raise StateError("backward called before forward on this tape") from None
        if upstream.shape != out.shape:
            raise DimensionError(f"upstream gradient shape {upstream.shape} != output shape {out.shape}")
        g = upstream * activation_grad(pre, out, self.activation)
        x2 = x.reshape(-1, self.in_dim)
        g2 = g.reshape(-1, self.out_dim)
        tape.add_grad(id(self), "weight", x2.T @ g2)
        if self.bias is not None:
            tape.add_grad(id(self), "bias", g2.sum(axis=0))
        return g @ self.weight.T

    def grads(self, tape: GradientTape) -> list[np.ndarray]:
        return [tape.grad(id(self), name, p) for name, p in self.params()]


def forward(layer: DenseLayer, x: np.ndarray, tape: GradientTape | None = None) -> np.ndarray:
    return layer.forward(x, tape)


def backward(layer: DenseLayer, upstream_grad: np.ndarray, tape: GradientTape) -> np.ndarray:
    return layer.backward(upstream_grad, tape)


class Optimizer:
    """In-place SGD or bias-corrected Adam over a fixed, ordered parameter list."""

    def __init__(self, lr: float = 1e-3, method: str = "adam", beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if not lr > 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        if method not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {method!r}")
        self.lr = lr
        self.method = method
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise DimensionError("params and grads differ in length")
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise DimensionError(f"grad shape {g.shape} != param shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise TrainingError("non-finite gradient")
        if self.method == "sgd":
            for p, g in zip(params, grads):
                p -= self.lr * g
            return
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def step(opt: Optimizer, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    opt.step(params, grads)

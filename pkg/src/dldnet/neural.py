"""Small dense-network toolkit in numpy.

Layers operate on batches: inputs are ``(batch, features)`` arrays and a
layer computes ``act(X @ W.T + b)`` with ``W`` stored ``(out, in)``.
``forward`` returns a cache that ``backward`` consumes to produce exact
reverse-mode gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, UsageError

ACTIVATIONS = ("swish", "tanh", "identity")


def sigmoid(z):
    # split by sign so exp never overflows
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def swish(z):
    z = np.asarray(z, dtype=float)
    return z * sigmoid(z)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "swish":
        return swish(z)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "swish":
        s = sigmoid(z)
        return s + a * (1.0 - s)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "swish"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ConfigurationError(
                f"inconsistent layer shapes {self.weights.shape} / {self.bias.shape}")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def init(cls, n_in: int, n_out: int, activation: str, rng: np.random.Generator):
        """Uniform weights in +-1/sqrt(fan_in), zero bias."""
        bound = 1.0 / np.sqrt(n_in)
        return cls(rng.uniform(-bound, bound, size=(n_out, n_in)), np.zeros(n_out), activation)

    def params(self) -> list[np.ndarray]:
        return [self.weights, self.bias]


def periodic_features(x, y, Dy: float, harmonics: int = 1) -> np.ndarray:
    """``[x, sin(2 pi k y/Dy), cos(2 pi k y/Dy)]`` for k = 1..harmonics.

    ``y`` is reduced modulo ``Dy`` before the trig evaluation, so ``y`` and
    ``y + Dy`` give bit-identical features whenever the reduction is exact
    (in particular ``y = 0`` versus ``y = Dy``).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    phase = 2.0 * np.pi * np.mod(y, Dy) / Dy
    cols = [x]
    for k in range(1, harmonics + 1):
        cols.append(np.sin(k * phase))
        cols.append(np.cos(k * phase))
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


def forward(layers: list[DenseLayer], inputs: np.ndarray):
    """Run the layer chain; returns ``(output, cache)``."""
    a = np.atleast_2d(np.asarray(inputs, dtype=float))
    cache = []
    for k, layer in enumerate(layers):
        if a.shape[1] != layer.n_in:
            raise ConfigurationError(
                f"layer {k} expects {layer.n_in} inputs, got {a.shape[1]}")
        z = a @ layer.weights.T + layer.bias
        out = _activate(layer.activation, z)
        cache.append((a, z, out))
        a = out
    return a, cache


def backward(layers: list[DenseLayer], cache, output_grad: np.ndarray):
    """Reverse-mode pass.

    Returns ``(grads, input_grad)`` where ``grads[k] = (dW, db)`` for layer k.
    """
    if cache is None or len(cache) != len(layers):
        raise UsageError("backward needs the cache from a matching forward call")
    g = np.atleast_2d(np.asarray(output_grad, dtype=float))
    grads = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        layer = layers[k]
        a_in, z, a_out = cache[k]
        gz = g * _activation_grad(layer.activation, z, a_out)
        grads[k] = (gz.T @ a_in, gz.sum(axis=0))
        g = gz @ layer.weights
    return grads, g


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError("learning rate must be positive")


def adam_step(state: OptimizerState, params: list[np.ndarray], grads: list[np.ndarray]):
    """In-place Adam update with bias correction; returns ``(params, state)``."""
    if len(params) != len(grads):
        raise ConfigurationError("parameter and gradient lists differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ConfigurationError("optimizer state does not match the parameter list")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ConfigurationError(f"shape mismatch {p.shape} vs {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_adam)
    return params, state


def lr_at(epoch: int, lr0: float, factor: float = 0.5, every: int = 50) -> float:
    """Step decay: ``lr0 * factor ** floor(epoch / every)``."""
    if epoch < 0:
        raise ConfigurationError("epoch must be non-negative")
    return lr0 * factor ** (epoch // every)

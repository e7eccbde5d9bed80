"""Numerical substrate: float64 matrices, dense layers with explicit backprop,
Adam, and a central-difference gradient checker.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and ndim 2.
Every layer keeps its own gradient buffers (``dW``, ``db``) which backward
passes *accumulate* into, so a layer may be applied several times per step.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ACTIVATIONS = ("identity", "relu", "sigmoid")


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class NonFiniteError(ValueError):
    """A NaN or Inf reached a public operation."""


class TrainingError(RuntimeError):
    """Optimization produced or received a non-finite value."""


def as_matrix(x, name: str = "input") -> np.ndarray:
    """Coerce ``x`` to a finite 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-D matrix, got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str = "input") -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf")


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def sigmoid(x: np.ndarray) -> np.ndarray:
    # branch-free stable logistic
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)) without overflow."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class DenseLayer:
    """``act(x @ W + b)`` with gradient buffers."""

    def __init__(self, W: np.ndarray, b: np.ndarray, activation: str = "identity"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        W = np.array(W, dtype=np.float64)
        b = np.array(b, dtype=np.float64).reshape(-1)
        if W.ndim != 2 or b.shape[0] != W.shape[1]:
            raise DimensionError(f"weight {W.shape} and bias {b.shape} disagree")
        self.W = W
        self.b = b
        self.activation = activation
        self.dW = np.zeros_like(W)
        self.db = np.zeros_like(b)

    @classmethod
    def init(cls, n_in: int, n_out: int, activation: str, rng: np.random.Generator) -> "DenseLayer":
        return cls(glorot_uniform(n_in, n_out, rng), np.zeros(n_out), activation)

    @property
    def n_in(self) -> int:
        return self.W.shape[0]

    @property
    def n_out(self) -> int:
        return self.W.shape[1]

    def zero_grad(self) -> None:
        self.dW.fill(0.0)
        self.db.fill(0.0)

    def forward(self, x: np.ndarray):
        out, cache = affine_forward(x, self)
        return out, cache

    def backward(self, upstream: np.ndarray, cache) -> np.ndarray:
        dx, dW, db = affine_backward(upstream, cache)
        self.dW += dW
        self.db += db
        return dx

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return affine_forward(x, self)[0]


@dataclass(frozen=True)
class AffineCache:
    x: np.ndarray
    W: np.ndarray
    pre: np.ndarray
    out: np.ndarray
    activation: str


def affine_forward(x: np.ndarray, layer: DenseLayer):
    """Return ``(act(x W + b), cache)``."""
    x = as_matrix(x, "affine input")
    if x.shape[1] != layer.n_in:
        raise DimensionError(f"input has {x.shape[1]} columns, layer expects {layer.n_in}")
    pre = x @ layer.W + layer.b
    if layer.activation == "relu":
        out = np.maximum(pre, 0.0)
    elif layer.activation == "sigmoid":
        out = sigmoid(pre)
    else:
        out = pre
    return out, AffineCache(x, layer.W, pre, out, layer.activation)


def affine_backward(upstream: np.ndarray, cache: AffineCache):
    """Gradients of the affine+activation map: ``(dx, dW, db)``."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.out.shape:
        raise DimensionError(f"upstream {upstream.shape} vs forward output {cache.out.shape}")
    check_finite(upstream, "upstream gradient")
    if cache.activation == "relu":
        dpre = upstream * (cache.pre > 0)
    elif cache.activation == "sigmoid":
        dpre = upstream * cache.out * (1.0 - cache.out)
    else:
        dpre = upstream
    return dpre @ cache.W.T, cache.x.T @ dpre, dpre.sum(axis=0)


class MLP:
    """Stack of dense layers; hidden layers use ``hidden_activation``."""

    def __init__(self, layers: list[DenseLayer]):
        self.layers = layers

    @classmethod
    def init(cls, sizes: list[int], rng: np.random.Generator, hidden_activation: str = "relu",
             out_activation: str = "identity") -> "MLP":
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = out_activation if i == len(sizes) - 2 else hidden_activation
            layers.append(DenseLayer.init(n_in, n_out, act, rng))
        return cls(layers)

    def forward(self, x: np.ndarray):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, upstream: np.ndarray, caches) -> np.ndarray:
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            upstream = layer.backward(upstream, cache)
        return upstream

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def named_parameters(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}.{i}.W"] = layer.W
            out[f"{prefix}.{i}.b"] = layer.b
        return out

    def named_gradients(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}.{i}.W"] = layer.dW
            out[f"{prefix}.{i}.b"] = layer.db
        return out


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if params[name].shape != g.shape:
            raise DimensionError(f"{name}: parameter {params[name].shape} vs gradient {g.shape}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class GradCheckResult:
    max_relative_error: float
    worst_parameter: str | None = None
    worst_index: tuple | None = None
    analytic: float = 0.0
    numeric: float = 0.0
    n_checked: int = 0


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    denom = max(abs(analytic) + abs(numeric), floor)
    return abs(analytic - numeric) / denom


def gradient_check(loss_fn: Callable[[], tuple[float, dict[str, np.ndarray]]],
                   params: dict[str, np.ndarray], eps: float = 1e-5,
                   max_per_param: int | None = None, seed: int = 0,
                   floor: float = 1e-8) -> GradCheckResult:
    """Compare analytic gradients with central differences.

    ``loss_fn()`` evaluates the loss at the current contents of ``params``
    (arrays are perturbed in place and restored) and returns
    ``(loss, grads)`` with ``grads`` keyed like ``params``.  At most
    ``max_per_param`` coordinates per array are probed, chosen with ``seed``.
    The relative error is ``|a - n| / max(|a| + |n|, floor)``.
    """
    _, grads = loss_fn()
    grads = {k: np.array(v, copy=True) for k, v in grads.items()}
    rng = np.random.default_rng(seed)
    result = GradCheckResult(0.0)
    for name in sorted(params):
        p = params[name]
        flat_size = p.size
        if max_per_param is None or flat_size <= max_per_param:
            coords = np.arange(flat_size)
        else:
            coords = np.sort(rng.choice(flat_size, size=max_per_param, replace=False))
        analytic_all = grads.get(name, np.zeros_like(p))
        for flat in coords:
            idx = np.unravel_index(int(flat), p.shape)
            old = p[idx]
            p[idx] = old + eps
            f_plus = loss_fn()[0]
            p[idx] = old - eps
            f_minus = loss_fn()[0]
            p[idx] = old
            numeric = (f_plus - f_minus) / (2.0 * eps)
            analytic = float(analytic_all[idx])
            err = relative_error(analytic, numeric, floor)
            result.n_checked += 1
            if err > result.max_relative_error or result.worst_parameter is None:
                result.max_relative_error = err
                result.worst_parameter = name
                result.worst_index = tuple(int(i) for i in idx)
                result.analytic = analytic
                result.numeric = numeric
    return result

"""Dense numerics: activations, normalisation, loss, AdamW and gradient checking.

Matrices are plain ``float64`` numpy arrays. Every forward function that has
trainable inputs comes with a ``*_backward`` partner taking the cache the
forward returned.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, Tuple

import numpy as np

from .errors import DimensionError, DomainError, GradCheckError, TrainingError

Array = np.ndarray


def as_matrix(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> Array:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x) -> Array:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x) -> Array:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": np.tanh, "relu": relu}


def activation(kind: str, x) -> Array:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise DomainError(f"unknown activation {kind!r}") from None
    return fn(np.asarray(x, dtype=np.float64))


def softmax(x, axis: int = -1) -> Array:
    """Shift-stable softmax. Entries equal to ``-inf`` get probability zero."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or x.shape[axis] == 0:
        raise DomainError("softmax of an empty vector")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(dy: Array, y: Array, axis: int = -1) -> Array:
    return y * (dy - np.sum(dy * y, axis=axis, keepdims=True))


# ---------------------------------------------------------------- layer norm

def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Array:
    out, _ = layer_norm_forward(x, gamma, beta, eps)
    return out


def layer_norm_forward(x, gamma, beta, eps: float = 1e-5):
    """Normalise over the last axis with the population variance.

    Returns ``(out, cache)``.
    """
    x = np.asarray(x, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise DimensionError(
            f"layer_norm: x has width {x.shape[-1]}, gamma {gamma.shape}, beta {beta.shape}"
        )
    if eps <= 0:
        raise DomainError("layer_norm eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return gamma * xhat + beta, (xhat, inv, gamma)


def layer_norm_backward(dy: Array, cache) -> Tuple[Array, Array, Array]:
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, inv, gamma = cache
    n = xhat.shape[-1]
    lead = tuple(range(dy.ndim - 1))
    dgamma = np.sum(dy * xhat, axis=lead)
    dbeta = np.sum(dy, axis=lead)
    dxhat = dy * gamma
    dx = (inv / n) * (
        n * dxhat
        - np.sum(dxhat, axis=-1, keepdims=True)
        - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------- loss

def bce_with_logits(logits, targets) -> Tuple[float, Array]:
    """Mean binary cross-entropy on raw scores, and its gradient.

    Uses ``max(z, 0) - z*y + log1p(exp(-|z|))`` so large logits never overflow.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if z.shape != y.shape:
        raise DimensionError(f"logits {z.shape} vs targets {y.shape}")
    if z.size == 0:
        raise DomainError("bce_with_logits on empty input")
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    return float(per.sum() / n), (sigmoid(z) - y) / n


# ------------------------------------------------------------------ params

class ParamSet:
    """Named trainable arrays with gradients of identical shape."""

    def __init__(self, values: Dict[str, Array] | None = None):
        self.values: Dict[str, Array] = {}
        self.grads: Dict[str, Array] = {}
        for name, v in (values or {}).items():
            self.add(name, v)

    def add(self, name: str, value) -> None:
        if name in self.values:
            raise DomainError(f"duplicate parameter name {name!r}")
        v = np.array(value, dtype=np.float64)
        self.values[name] = v
        self.grads[name] = np.zeros_like(v)

    def __getitem__(self, name: str) -> Array:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def names(self):
        return list(self.values)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def set_grads(self, grads: Dict[str, Array]) -> None:
        for name, g in grads.items():
            g = np.asarray(g, dtype=np.float64)
            if g.shape != self.values[name].shape:
                raise DimensionError(
                    f"gradient for {name!r} has shape {g.shape}, value {self.values[name].shape}"
                )
            self.grads[name] = g.copy()

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, v in self.values.items():
            out.values[name] = v.copy()
            out.grads[name] = self.grads[name].copy()
        return out

    def count(self) -> int:
        return int(sum(v.size for v in self.values.values()))


# --------------------------------------------------------------- optimiser

@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: Dict[str, Array] = field(default_factory=dict)
    v: Dict[str, Array] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamSet, **hyper) -> "OptimizerState":
        state = cls(**hyper)
        for name, value in params.values.items():
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        return state


def adamw_step(params: ParamSet, state: OptimizerState, lr: float) -> None:
    """One AdamW update in place: decoupled decay, then bias-corrected Adam."""
    if lr <= 0:
        raise DomainError("learning rate must be positive")
    for name, g in params.grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, theta in params.values.items():
        g = params.grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m = state.m[name]
        v = state.v[name]
        theta *= 1.0 - lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def exp_lr(lr0: float, gamma: float, epoch: int) -> float:
    if epoch < 0:
        raise DomainError("epoch must be non-negative")
    return lr0 * gamma**epoch


# -------------------------------------------------------------- grad check

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(
    f: Callable[[Dict[str, Array]], Tuple[float, Dict[str, Array]]],
    params,
    tol: float = 1e-4,
    h: float = 1e-5,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients with central differences, entry by entry.

    ``f`` maps a dict of parameter arrays to ``(loss, grads)``. The relative
    error of one entry is ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps
    entries whose true gradient is zero from dividing by round-off.
    """
    values = params.values if isinstance(params, ParamSet) else params
    values = {k: np.array(v, dtype=np.float64) for k, v in values.items()}
    loss, analytic = f(values)
    if not np.isfinite(loss):
        raise GradCheckError("loss is not finite at the base point")
    worst = (0.0, "", ())
    checked = 0
    for name, arr in values.items():
        a_grad = np.asarray(analytic[name], dtype=np.float64)
        if a_grad.shape != arr.shape:
            raise DimensionError(f"analytic gradient for {name!r} has wrong shape")
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            fp = f(values)[0]
            arr[idx] = old - h
            fm = f(values)[0]
            arr[idx] = old
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise GradCheckError(f"non-finite loss perturbing {name}{list(idx)}")
            num = (fp - fm) / (2.0 * h)
            ana = a_grad[idx]
            if not np.isfinite(ana):
                raise GradCheckError(f"non-finite analytic gradient at {name}{list(idx)}")
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            checked += 1
            if rel > worst[0] or not worst[1]:
                worst = (rel, name, idx)
    return GradCheckReport(worst[0], worst[1], worst[2], checked, tol)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Array:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))

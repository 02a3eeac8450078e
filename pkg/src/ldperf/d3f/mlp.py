"""Elementwise decision function: a [1, 5, 5, 2] fully-connected network.

The first hidden layer uses tanh, the second is linear and feeds a two-way
softmax. The elementwise score is the log-ratio of the two softmax outputs,
which reduces to the difference of the output logits.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

log = logging.getLogger(__name__)

LAYER_SIZES = (1, 5, 5, 2)
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    init_half_width: float = 0.1

    def __post_init__(self):
        if not (self.lr > 0 and self.epochs > 0 and self.batch_size > 0):
            raise ValueError("lr, epochs and batch_size must be positive")
        if self.init_half_width < 0:
            raise ValueError("init_half_width must be non-negative")


def _freeze(params):
    out = {}
    for k, v in params.items():
        a = np.array(v, dtype=float)
        a.setflags(write=False)
        out[k] = a
    return out


def param_shapes():
    sizes = LAYER_SIZES
    shapes = {}
    for i in range(3):
        shapes[f"W{i + 1}"] = (sizes[i + 1], sizes[i])
        shapes[f"b{i + 1}"] = (sizes[i + 1],)
    return shapes


@dataclass(frozen=True)
class MlpD3F:
    params: dict = field(repr=False)
    loss_history: tuple = ()

    def __post_init__(self):
        shapes = param_shapes()
        params = _freeze(self.params)
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ValueError(f"{name} has shape {params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(params[name])):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "params", params)

    @classmethod
    def initial(cls, rng=None, half_width: float = 0.1) -> "MlpD3F":
        """Uniform init in ``[-half_width, half_width]``; zeros when half_width is 0."""
        params = {}
        for name, shape in param_shapes().items():
            if half_width == 0:
                params[name] = np.zeros(shape)
            else:
                params[name] = rng.uniform(-half_width, half_width, size=shape)
        return cls(params)

    def logits(self, x) -> np.ndarray:
        return _forward(self.params, np.asarray(x, dtype=float).reshape(-1))[-1]

    def score(self, x):
        """Elementwise D3F ``log P(H1|x) - log P(H0|x)``; keeps the input shape."""
        x = np.asarray(x, dtype=float)
        p = self.params
        h1 = np.tanh(x[..., None] * p["W1"][:, 0] + p["b1"])
        # second hidden layer is linear, so fold it with the output layer
        w = p["W3"][1] - p["W3"][0]
        v = w @ p["W2"]
        c = w @ p["b2"] + p["b3"][1] - p["b3"][0]
        out = h1 @ v + c
        return float(out) if out.ndim == 0 else out

    __call__ = score


def _forward(p, x):
    a1 = x[:, None] * p["W1"][:, 0] + p["b1"]
    h1 = np.tanh(a1)
    h2 = h1 @ p["W2"].T + p["b2"]
    z = h2 @ p["W3"].T + p["b3"]
    return h1, h2, z


def cross_entropy(params, x, y) -> float:
    """Mean binary cross-entropy of the softmax head on labels ``y`` in {0, 1}."""
    z = _forward(params, np.asarray(x, dtype=float))[-1]
    y = np.asarray(y, dtype=int)
    return float(np.mean(special.logsumexp(z, axis=1) - z[np.arange(len(y)), y]))


def loss_and_grad(params, x, y):
    """Cross-entropy and its gradient with respect to every parameter."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    m = len(x)
    h1, h2, z = _forward(params, x)
    lse = special.logsumexp(z, axis=1)
    loss = float(np.mean(lse - z[np.arange(m), y]))
    dz = np.exp(z - lse[:, None])
    dz[np.arange(m), y] -= 1.0
    dz /= m
    grads = {"W3": dz.T @ h2, "b3": dz.sum(0)}
    dh2 = dz @ params["W3"]
    grads["W2"] = dh2.T @ h1
    grads["b2"] = dh2.sum(0)
    da1 = (dh2 @ params["W2"]) * (1.0 - h1 * h1)
    grads["W1"] = (da1 * x[:, None]).sum(0)[:, None]
    grads["b1"] = da1.sum(0)
    return loss, grads


def sgd_train(init_params, x, y, cfg: TrainConfig, grad_fn, rng, label="model"):
    """Plain minibatch SGD shared by the MLP and CNN trainers.

    Returns the final parameters and the per-epoch mean minibatch loss.
    """
    params = {k: np.array(v, dtype=float) for k, v in init_params.items()}
    m = len(y)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(m)
        total = 0.0
        for start in range(0, m, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = grad_fn(params, x[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"{label}: non-finite loss at epoch {epoch + 1}, batch starting {start}")
            for k in params:
                params[k] -= cfg.lr * grads[k]
            total += loss * len(idx)
        history.append(total / m)
        log.debug("%s epoch %d loss %.6g", label, epoch + 1, history[-1])
    return params, history


def train_mlp(train0, train1, cfg: TrainConfig = TrainConfig()) -> MlpD3F:
    """Fit the elementwise D3F on samples from H0 (label 0) and H1 (label 1)."""
    train0 = np.asarray(train0, dtype=float).reshape(-1)
    train1 = np.asarray(train1, dtype=float).reshape(-1)
    if train0.size == 0 or train1.size == 0:
        raise ValueError("both classes need training samples")
    rng = np.random.default_rng(cfg.seed)
    init = MlpD3F.initial(rng, cfg.init_half_width).params
    x = np.concatenate([train0, train1])
    y = np.concatenate([np.zeros(train0.size, int), np.ones(train1.size, int)])
    params, history = sgd_train(init, x, y, cfg, loss_and_grad, rng, label="mlp")
    return MlpD3F(params, tuple(history))

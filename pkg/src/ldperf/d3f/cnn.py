"""Tiny convolutional decision function for binary images.

One 5x5 valid convolution with 20 filters and ReLU, a 2x2 max-pool, and a
fully-connected layer to two softmax outputs. Forward and backward passes are
written out with numpy; convolution is an im2col matmul.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .mlp import TrainConfig, _freeze, sgd_train

log = logging.getLogger(__name__)

KERNEL = 5
N_FILTERS = 20
POOL = 2


def feature_shape(height: int, width: int) -> tuple:
    """Shape of the pooled feature map for an input of the given size."""
    if height < KERNEL + 1 or width < KERNEL + 1:
        raise ValueError(f"input must be at least {KERNEL + 1}x{KERNEL + 1}, got {height}x{width}")
    return ((height - KERNEL + 1) // POOL, (width - KERNEL + 1) // POOL, N_FILTERS)


def cnn_param_shapes(height: int, width: int) -> dict:
    n_feat = int(np.prod(feature_shape(height, width)))
    return {
        "conv_w": (N_FILTERS, KERNEL * KERNEL),
        "conv_b": (N_FILTERS,),
        "fc_w": (2, n_feat),
        "fc_b": (2,),
    }


@dataclass(frozen=True)
class CnnD3F:
    height: int
    width: int
    params: dict = field(repr=False)
    loss_history: tuple = ()
    train_accuracy: float = float("nan")

    def __post_init__(self):
        params = _freeze(self.params)
        for name, shape in cnn_param_shapes(self.height, self.width).items():
            if params[name].shape != shape:
                raise ValueError(f"{name} has shape {params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(params[name])):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "params", params)

    @classmethod
    def initial(cls, height, width, rng=None, half_width=0.1, zero_fc=False) -> "CnnD3F":
        params = {}
        for name, shape in cnn_param_shapes(height, width).items():
            if half_width == 0 or (zero_fc and name.startswith("fc")):
                params[name] = np.zeros(shape)
            else:
                params[name] = rng.uniform(-half_width, half_width, size=shape)
        return cls(height, width, params)

    def _check(self, images):
        x = np.asarray(images, dtype=float)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != (self.height, self.width):
            raise ValueError(
                f"image is {x.shape[1]}x{x.shape[2]}, network expects {self.height}x{self.width}")
        return x

    def logits(self, images, batch: int = 256) -> np.ndarray:
        x = self._check(images)
        out = [_forward(self.params, x[i:i + batch])[-1] for i in range(0, len(x), batch)]
        return np.concatenate(out)

    def probabilities(self, images) -> np.ndarray:
        z = self.logits(images)
        return np.exp(z - special.logsumexp(z, axis=1, keepdims=True))


def _forward(p, x):
    b, h, w = x.shape
    patches = sliding_window_view(x, (KERNEL, KERNEL), axis=(1, 2))
    oh, ow = patches.shape[1], patches.shape[2]
    patches = patches.reshape(b * oh * ow, KERNEL * KERNEL)
    a = (patches @ p["conv_w"].T + p["conv_b"]).reshape(b, oh, ow, N_FILTERS)
    r = np.maximum(a, 0.0)
    ph, pw = oh // POOL, ow // POOL
    r_crop = r[:, :ph * POOL, :pw * POOL]
    blocks = r_crop.reshape(b, ph, POOL, pw, POOL, N_FILTERS)
    pooled = blocks.max(axis=(2, 4))
    feat = pooled.reshape(b, -1)
    z = feat @ p["fc_w"].T + p["fc_b"]
    return patches, a, blocks, pooled, feat, z


def cnn_loss_and_grad(params, x, y):
    """Mean cross-entropy and gradients for a batch of images ``x`` (B, H, W)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    m = len(x)
    patches, a, blocks, pooled, feat, z = _forward(params, x)
    lse = special.logsumexp(z, axis=1)
    loss = float(np.mean(lse - z[np.arange(m), y]))
    dz = np.exp(z - lse[:, None])
    dz[np.arange(m), y] -= 1.0
    dz /= m
    grads = {"fc_w": dz.T @ feat, "fc_b": dz.sum(0)}
    dpooled = (dz @ params["fc_w"]).reshape(pooled.shape)
    # route the pooled gradient to the max position; ties only occur among
    # zero activations, whose ReLU derivative kills the gradient anyway
    is_max = blocks == pooled[:, :, None, :, None, :]
    dblocks = is_max * dpooled[:, :, None, :, None, :]
    b, ph, _, pw, _, c = blocks.shape
    da = np.zeros_like(a)
    da[:, :ph * POOL, :pw * POOL] = dblocks.reshape(b, ph * POOL, pw * POOL, c)
    da *= a > 0
    da = da.reshape(-1, N_FILTERS)
    grads["conv_w"] = da.T @ patches
    grads["conv_b"] = da.sum(0)
    return loss, grads


def train_cnn(images0, images1, cfg: TrainConfig = TrainConfig(lr=0.01, epochs=10)) -> CnnD3F:
    """Fit the CNN on H0 images (label 0) and H1 images (label 1)."""
    x0 = np.asarray(images0, dtype=float)
    x1 = np.asarray(images1, dtype=float)
    if len(x0) == 0 or len(x1) == 0:
        raise ValueError("both classes need training images")
    if x0.shape[1:] != x1.shape[1:]:
        raise ValueError("all training images must share dimensions")
    height, width = x0.shape[1:]
    rng = np.random.default_rng(cfg.seed)
    init = CnnD3F.initial(height, width, rng, cfg.init_half_width).params
    x = np.concatenate([x0, x1])
    y = np.concatenate([np.zeros(len(x0), int), np.ones(len(x1), int)])
    params, history = sgd_train(init, x, y, cfg, cnn_loss_and_grad, rng, label="cnn")
    net = CnnD3F(height, width, params, tuple(history))
    acc = float(np.mean((net.logits(x).argmax(axis=1)) == y))
    log.info("cnn trained: final loss %.4g, training accuracy %.4f", history[-1], acc)
    return CnnD3F(height, width, net.params, tuple(history), acc)


def cnn_score(cnn: CnnD3F, image, n: int | None = None):
    """Log-ratio of the H1 and H0 softmax outputs.

    Accepts a single image or a stack. With ``n`` given, the score is divided
    by it to give the per-pixel normalized statistic.
    """
    z = cnn.logits(image)
    s = z[:, 1] - z[:, 0]
    if n is not None:
        s = s / np.asarray(n, dtype=float)
    return float(s[0]) if np.ndim(image) == 2 else s

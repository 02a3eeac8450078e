"""Statistic samplers for the three scenarios and image training-set generation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..d3f import (LlrScorer, MixtureD3F, TrainConfig, d3f_statistic_iid,
                   d3f_statistic_mixture, train_mixture, train_mlp)
from ..models import (CompositeModel, ImageModel, ShiftModel, TargetShape, sample_iid,
                      sample_llr_statistic)

# seed substreams; the overlap mode points characterization at TRAIN
TRAIN, CHAR, MC, PROBE, TILT = 1, 2, 3, 4, 5
MAX_CELLS = 2_000_000


def stream(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


def _chunks(runs, n):
    step = max(1, MAX_CELLS // max(n, 1))
    for start in range(0, runs, step):
        yield start, min(step, runs - start)


@dataclass(frozen=True)
class IidStatistic:
    """Sample-mean statistic of an elementwise scorer over IID observations."""

    model: ShiftModel
    scorer: object

    @property
    def exact(self) -> bool:
        return isinstance(self.scorer, LlrScorer)

    def elementwise(self, hyp, m: int, rng) -> np.ndarray:
        return np.asarray(self.scorer.score(sample_iid(self.model, hyp, m, rng)))

    def sample(self, hyp, n: int, runs: int, rng) -> np.ndarray:
        if self.exact:
            return sample_llr_statistic(self.model, hyp, n, runs, rng)
        out = np.empty(runs)
        for start, size in _chunks(runs, n):
            out[start:start + size] = d3f_statistic_iid(
                self.scorer, sample_iid(self.model, hyp, (size, n), rng))
        return out


def build_iid(model: ShiftModel, statistic: str, train_size: int, rng,
              cfg: TrainConfig | None = None, return_data: bool = False):
    """LLR or a trained elementwise network; ``train_size`` samples per class."""
    if statistic == "llr":
        st = IidStatistic(model, LlrScorer(model))
        return (st, None) if return_data else st
    x0 = sample_iid(model, 0, train_size, rng)
    x1 = sample_iid(model, 1, train_size, rng)
    net = train_mlp(x0, x1, cfg or TrainConfig())
    st = IidStatistic(model, net)
    return (st, (x0, x1)) if return_data else st


@dataclass(frozen=True)
class MixtureStatistic:
    model: CompositeModel
    mix: MixtureD3F

    def sample(self, hyp, n: int, runs: int, rng, theta=None) -> np.ndarray:
        out = np.empty(runs)
        for start, size in _chunks(runs, n):
            x = sample_iid(self.model, hyp, (size, n), rng, theta=theta)
            out[start:start + size] = d3f_statistic_mixture(self.mix, x)
        return out


def build_composite(model: CompositeModel, statistic: str, train_size: int, rng,
                    cfg: TrainConfig | None = None) -> MixtureStatistic:
    if statistic == "llr":
        return MixtureStatistic(model, MixtureD3F.exact(model))
    return MixtureStatistic(model, train_mixture(model, train_size, rng, cfg or TrainConfig()))


# image scenario

def random_shape(kind: str, width: int, height: int, rng) -> TargetShape:
    """Random ellipse (rotated) or axis-aligned rectangle centred inside the image.

    Sizes span roughly 20 to 600 pixels so training covers the evaluation
    circles; shapes near the border are clipped.
    """
    span = max(width, height)
    center = (rng.uniform(0.0, 1.0) * width, rng.uniform(0.0, 1.0) * height)
    if kind == "ellipse":
        axes = tuple(rng.uniform(0.04, 0.22, size=2) * span)
        return TargetShape("ellipse", center, axes, float(rng.uniform(0.0, math.pi)))
    if kind == "rectangle":
        axes = tuple(rng.uniform(0.08, 0.4, size=2) * span)
        return TargetShape("rectangle", center, axes, 0.0)
    raise ValueError(f"unknown shape kind {kind!r}")


def _shape_probs(model: ImageModel, shape: TargetShape | None):
    if shape is None:
        return np.full((model.height, model.width), model.p0)
    return np.where(shape.mask(model.width, model.height), model.p1, model.p0)


def draw_images(model: ImageModel, shape: TargetShape | None, count: int, rng) -> np.ndarray:
    """``count`` independent noise realisations for a fixed target (or none)."""
    probs = _shape_probs(model, shape)
    return (rng.random((count, *probs.shape)) < probs).astype(np.uint8)


def image_training_set(model: ImageModel, per_class: int, noise_reps: int, rng):
    """H0 images and as many H1 images, half ellipses and half rectangles.

    Each random shape is reused for ``noise_reps`` noise realisations.
    """
    images1 = []
    kinds = ("ellipse", "rectangle")
    while sum(len(b) for b in images1) < per_class:
        k = len(images1) % 2
        shape = random_shape(kinds[k], model.width, model.height, rng)
        if not shape.mask(model.width, model.height).any():
            continue
        images1.append(draw_images(model, shape, noise_reps, rng))
    images1 = np.concatenate(images1)[:per_class]
    images0 = draw_images(model, None, per_class, rng)
    return images0, images1


def circle_grid(model: ImageModel, radii) -> list:
    """Centred circles and their pixel counts, sorted by size."""
    cx, cy = model.width / 2, model.height / 2
    out = []
    for r in radii:
        shape = TargetShape.circle((cx, cy), float(r))
        out.append((shape, int(shape.mask(model.width, model.height).sum())))
    return sorted(out, key=lambda s: s[1])


def bernoulli_llr_scorer(model: ImageModel, shape: TargetShape):
    """Exact unnormalised LLR of an image for a known target mask."""
    mask = shape.mask(model.width, model.height)
    a = math.log(model.p1 / model.p0)
    b = math.log((1 - model.p1) / (1 - model.p0))

    def score(images):
        x = np.asarray(images, dtype=float)
        on = (x * mask).sum(axis=(-2, -1))
        return on * a + (mask.sum() - on) * b

    return score


def image_scores(scorer, model: ImageModel, shape, count: int, rng, batch: int = 500):
    out = np.empty(count)
    for start in range(0, count, batch):
        size = min(batch, count - start)
        out[start:start + size] = scorer(draw_images(model, shape, size, rng))
    return out

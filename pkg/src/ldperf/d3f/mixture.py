"""Normalised D3F statistics for IID and composite tests, plus the R_n probe."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ..models import CompositeModel, ShiftModel, llr_elementwise, sample_iid
from .mlp import MlpD3F, TrainConfig, train_mlp


@dataclass(frozen=True)
class LlrScorer:
    """Exact elementwise LLR exposed through the scorer interface."""

    model: ShiftModel

    def score(self, x):
        return llr_elementwise(self.model, x)

    __call__ = score


@dataclass(frozen=True)
class MixtureD3F:
    """One elementwise scorer per alternative value, with prior weights."""

    thetas: tuple
    scorers: tuple
    prior: tuple = None

    def __post_init__(self):
        thetas = tuple(float(t) for t in self.thetas)
        scorers = tuple(self.scorers)
        if not thetas or len(scorers) != len(thetas):
            raise ValueError("need exactly one scorer per theta")
        if len(set(thetas)) != len(thetas):
            raise ValueError("thetas must be distinct")
        prior = self.prior
        if prior is None:
            prior = tuple(1.0 / len(thetas) for _ in thetas)
        prior = tuple(float(w) for w in prior)
        if len(prior) != len(thetas) or any(w <= 0 for w in prior) or abs(sum(prior) - 1) > 1e-9:
            raise ValueError("prior must be positive, one weight per theta, summing to 1")
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "scorers", scorers)
        object.__setattr__(self, "prior", prior)

    def scorer(self, theta):
        return self.scorers[self.thetas.index(float(theta))]

    @classmethod
    def exact(cls, model: CompositeModel) -> "MixtureD3F":
        """Mixture built from the true elementwise LLRs."""
        return cls(model.thetas, [LlrScorer(model.component(t)) for t in model.thetas], model.prior)


def d3f_statistic_iid(scorer, obs):
    """Mean elementwise score over the last axis of ``obs``."""
    s = np.mean(scorer.score(np.asarray(obs, dtype=float)), axis=-1)
    return float(s) if np.ndim(s) == 0 else s


def d3f_statistic_mixture(mix: MixtureD3F, obs):
    """``(1/n) log sum_theta w_theta exp(sum_i t_theta(x_i))`` over the last axis."""
    x = np.asarray(obs, dtype=float)
    n = x.shape[-1]
    terms = np.stack(
        [math.log(w) + np.sum(sc.score(x), axis=-1) for sc, w in zip(mix.scorers, mix.prior)])
    out = special.logsumexp(terms, axis=0) / n
    return float(out) if np.ndim(out) == 0 else out


def train_mixture(model: CompositeModel, m_per_class: int, rng,
                  cfg: TrainConfig = TrainConfig()) -> MixtureD3F:
    """Train one elementwise network per alternative against fresh H0 samples."""
    nets = []
    for k, theta in enumerate(model.thetas):
        x0 = sample_iid(model.component(theta), 0, m_per_class, rng)
        x1 = sample_iid(model.component(theta), 1, m_per_class, rng)
        sub = TrainConfig(cfg.lr, cfg.epochs, cfg.batch_size, cfg.seed + k, cfg.init_half_width)
        nets.append(train_mlp(x0, x1, sub))
    return MixtureD3F(model.thetas, nets, model.prior)


@dataclass(frozen=True)
class RnReport:
    theta_star: float
    thetas: tuple
    means: tuple
    std_errors: tuple
    holds: bool
    min_margin_se: float

    def as_dict(self) -> dict:
        return {
            "theta_star": self.theta_star,
            "thetas": list(self.thetas),
            "means": list(self.means),
            "std_errors": list(self.std_errors),
            "holds": self.holds,
            "min_margin_se": self.min_margin_se,
        }


def rn_condition_check(mix: MixtureD3F, model: CompositeModel, theta_star: float, probe) -> RnReport:
    """Check that the matched scorer has the largest mean on data from ``theta_star``.

    ``probe`` holds samples drawn under ``theta_star``. The margin is the
    smallest gap between the matched mean and any other mean, in units of the
    combined standard error.
    """
    theta_star = float(theta_star)
    if theta_star not in mix.thetas or tuple(mix.thetas) != tuple(model.thetas):
        raise ValueError("theta_star must be one of the mixture's alternatives")
    x = np.asarray(probe, dtype=float).reshape(-1)
    m = x.size
    means, ses = [], []
    for sc in mix.scorers:
        s = sc.score(x)
        means.append(float(np.mean(s)))
        ses.append(float(np.std(s, ddof=1) / math.sqrt(m)) if m > 1 else float("nan"))
    k = mix.thetas.index(theta_star)
    holds = True
    margin = math.inf
    for j in range(len(mix.thetas)):
        if j == k:
            continue
        gap = means[k] - means[j]
        holds = holds and gap > 0
        se = math.hypot(ses[k], ses[j])
        margin = min(margin, gap / se if se > 0 else math.copysign(math.inf, gap))
    return RnReport(theta_star, mix.thetas, tuple(means), tuple(ses), holds, margin)

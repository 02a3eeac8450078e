"""Metropolis-Hastings sampling from exponentially tilted laws.

The chain targets ``exp(n t T(x)) f(x)``. Each proposal refreshes a block of
coordinates with fresh draws from the base law ``f``, so the base density
cancels and a move is accepted with probability ``min(1, exp(n t dT))``.
Averaging ``T`` along the chain estimates the derivative of the scaled LMGF
at ``t``; integrating over a t-grid and applying duality gives the rate.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .lmgf import LmgfEstimate
from .models import (CompositeModel, ImageModel, ShiftModel, TargetShape, hypothesis_index,
                     llr_elementwise, sample_iid)
from .ratefn import GammaOutOfRange, fenchel_legendre

log = logging.getLogger(__name__)

MIN_ACCEPTANCE = 1e-3


class DegenerateChain(UserWarning):
    """The chain almost never moves."""


@dataclass(frozen=True)
class TiltConfig:
    """Chain settings.

    ``burn_in=None`` picks ``max(1000, 10 * n_mh)`` proposals so that every
    coordinate is refreshed many times before recording starts.
    """

    n_mh: int = 10_000
    kept: int = 10_000
    burn_in: Optional[int] = None
    thin: int = 10
    block: int = 1
    seed: int = 0
    n_batches: int = 20
    grid_points: int = 41
    t_grid: Optional[tuple] = None

    def __post_init__(self):
        if self.n_mh < 1 or self.kept < 1 or self.thin < 1 or self.block < 1:
            raise ValueError("n_mh, kept, thin and block must be positive")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if self.n_batches < 2 or self.kept < self.n_batches:
            raise ValueError("need at least two batches and one kept sample per batch")
        if self.grid_points < 3:
            raise ValueError("grid_points must be at least 3")

    @property
    def burn(self) -> int:
        return max(1000, 10 * self.n_mh) if self.burn_in is None else self.burn_in

    @property
    def chain_length(self) -> int:
        return self.burn + self.kept * self.thin


@dataclass(frozen=True)
class AdditiveTarget:
    """Statistic ``T = (1/n) sum_i score(x_i)`` with IID coordinates from ``sampler``."""

    n: int
    sampler: Callable
    score: Callable

    def draw(self, size, rng):
        return self.sampler(size, rng)


@dataclass(frozen=True)
class MixtureTarget:
    """Statistic ``T = (1/n) log sum_k w_k exp(sum_i score_k(x_i))``."""

    n: int
    sampler: Callable
    scores: tuple
    prior: tuple

    def draw(self, size, rng):
        return self.sampler(size, rng)


@dataclass(frozen=True)
class GenericTarget:
    """Arbitrary statistic with a full recompute after every proposal.

    ``init(rng)`` draws a state, ``refresh(state, rng)`` returns a changed
    copy (one block redrawn from the base law), ``statistic(state)`` gives T.
    """

    n: int
    init: Callable
    refresh: Callable
    statistic: Callable


def iid_target(model: ShiftModel, hyp, n: int, score: Callable | None = None) -> AdditiveTarget:
    """Observations from one hypothesis; score defaults to the exact LLR."""
    k = hypothesis_index(hyp)
    if score is None:
        score = lambda x: llr_elementwise(model, x)  # noqa: E731
    return AdditiveTarget(n, lambda size, rng: sample_iid(model, k, size, rng), score)


def mixture_target(model: CompositeModel, hyp, n: int, mix=None, theta=None) -> MixtureTarget:
    """Composite test; H1 draws use ``theta``. Scores default to the exact LLRs."""
    k = hypothesis_index(hyp)
    if k == 1 and theta is None:
        raise ValueError("H1 draws need the true alternative theta")
    if mix is None:
        scorers = [lambda x, m=model.component(a): llr_elementwise(m, x) for a in model.thetas]
        prior = model.prior
    else:
        scorers = [sc.score for sc in mix.scorers]
        prior = mix.prior
    sampler = lambda size, rng: sample_iid(model, k, size, rng, theta=theta)  # noqa: E731
    return MixtureTarget(n, sampler, tuple(scorers), tuple(prior))


def image_target(model: ImageModel, shape: TargetShape | None, statistic: Callable,
                 n: int) -> GenericTarget:
    """Binary image with one row redrawn per proposal; ``statistic(image)`` is unnormalised.

    ``shape=None`` gives target-free (H0) images. ``n`` normalises the statistic.
    """
    if shape is None:
        probs = np.full((model.height, model.width), model.p0)
    else:
        probs = np.where(shape.mask(model.width, model.height), model.p1, model.p0)

    def init(rng):
        return (rng.random(probs.shape) < probs).astype(np.uint8)

    def refresh(state, rng):
        out = state.copy()
        r = int(rng.integers(0, probs.shape[0]))
        out[r] = rng.random(probs.shape[1]) < probs[r]
        return out

    return GenericTarget(n, init, refresh, lambda img: float(statistic(img)) / n)


def discrete_target(values: Sequence[float], probs: Sequence[float]) -> AdditiveTarget:
    """Single coordinate on a finite set; handy for checking detailed balance."""
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if values.shape != probs.shape or abs(probs.sum() - 1) > 1e-12 or np.any(probs <= 0):
        raise ValueError("probabilities must be positive, sum to 1 and match the values")
    sampler = lambda size, rng: values[rng.choice(values.size, size=size, p=probs)]  # noqa: E731
    return AdditiveTarget(1, sampler, lambda x: np.asarray(x, dtype=float))


def bernoulli_target(p: float, n: int) -> AdditiveTarget:
    return AdditiveTarget(n, lambda size, rng: (rng.random(size) < p).astype(float),
                          lambda x: np.asarray(x, dtype=float))


def gaussian_mean_target(n: int) -> AdditiveTarget:
    """Standard normal coordinates with the sample mean as statistic."""
    return AdditiveTarget(n, lambda size, rng: rng.standard_normal(size),
                          lambda x: np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ChainResult:
    t: float
    values: np.ndarray
    acceptance: float
    min_window_acceptance: float
    degenerate: bool


def _window_min(acc_flags, window):
    if len(acc_flags) < window:
        return float(np.mean(acc_flags)) if len(acc_flags) else 1.0
    c = np.cumsum(np.concatenate([[0], acc_flags]))
    return float(np.min((c[window:] - c[:-window]) / window))


def mh_tilted_chain(target, t: float, cfg: TiltConfig, rng) -> ChainResult:
    """Run one tilted chain and return the post-burn-in, thinned values of T."""
    t = float(t)
    if not math.isfinite(t):
        raise ValueError("t must be finite")
    if isinstance(target, GenericTarget):
        vals, flags = _chain_generic(target, t, cfg, rng)
    elif isinstance(target, MixtureTarget):
        vals, flags = _chain_mixture(target, t, cfg, rng)
    else:
        vals, flags = _chain_additive(target, t, cfg, rng)
    flags = np.asarray(flags, dtype=float)
    acc = float(flags.mean()) if flags.size else 1.0
    wmin = _window_min(flags, min(flags.size, 10_000))
    degenerate = wmin < MIN_ACCEPTANCE
    if degenerate:
        warnings.warn(
            f"tilted chain at t={t:.4g} accepts {acc:.2e} overall, {wmin:.2e} in its worst window",
            DegenerateChain, stacklevel=2)
    return ChainResult(t, np.asarray(vals), acc, wmin, degenerate)


def _proposal_arrays(n, block, total, rng):
    idx = rng.integers(0, n, size=(total, block))
    logu = np.log(rng.random(total))
    return idx, logu


def _chain_additive(target: AdditiveTarget, t, cfg, rng):
    n, b = target.n, min(cfg.block, target.n)
    total = cfg.chain_length
    cur = np.asarray(target.score(target.draw(n, rng)), dtype=float)
    idx, logu = _proposal_arrays(n, b, total, rng)
    prop = np.asarray(target.score(target.draw(total * b, rng)), dtype=float).reshape(total, b)
    s = float(cur.sum())
    burn, thin = cfg.burn, cfg.thin
    vals = []
    flags = np.zeros(total, dtype=bool)
    cur_l = cur.tolist()
    logu_l = logu.tolist()
    if b == 1:
        idx_l = idx[:, 0].tolist()
        prop_l = prop[:, 0].tolist()
        for k in range(total):
            j = idx_l[k]
            d = prop_l[k] - cur_l[j]
            if logu_l[k] < t * d:
                cur_l[j] = prop_l[k]
                s += d
                flags[k] = True
            if k >= burn and (k - burn + 1) % thin == 0:
                vals.append(s / n)
    else:
        for k in range(total):
            js = idx[k]
            # repeated indices within a block keep the last draw
            new = dict(zip(js.tolist(), prop[k].tolist()))
            d = sum(v - cur_l[j] for j, v in new.items())
            if logu_l[k] < t * d:
                for j, v in new.items():
                    cur_l[j] = v
                s += d
                flags[k] = True
            if k >= burn and (k - burn + 1) % thin == 0:
                vals.append(s / n)
    return vals, flags


def _lse(a):
    m = max(a)
    return m + math.log(sum(math.exp(x - m) for x in a))


def _chain_mixture(target: MixtureTarget, t, cfg, rng):
    n = target.n
    total = cfg.chain_length
    x0 = target.draw(n, rng)
    cur = [np.asarray(sc(x0), dtype=float).tolist() for sc in target.scores]
    idx, logu = _proposal_arrays(n, 1, total, rng)
    xp = target.draw(total, rng)
    prop = [np.asarray(sc(xp), dtype=float).tolist() for sc in target.scores]
    logw = [math.log(w) for w in target.prior]
    sums = [math.fsum(c) for c in cur]
    K = len(sums)
    lse = _lse([lw + s for lw, s in zip(logw, sums)])
    idx_l = idx[:, 0].tolist()
    logu_l = logu.tolist()
    burn, thin = cfg.burn, cfg.thin
    vals = []
    flags = np.zeros(total, dtype=bool)
    for k in range(total):
        j = idx_l[k]
        new = [sums[q] + prop[q][k] - cur[q][j] for q in range(K)]
        new_lse = _lse([lw + s for lw, s in zip(logw, new)])
        if logu_l[k] < t * (new_lse - lse):
            for q in range(K):
                cur[q][j] = prop[q][k]
            sums = new
            lse = new_lse
            flags[k] = True
        if k >= burn and (k - burn + 1) % thin == 0:
            vals.append(lse / n)
    return vals, flags


def _chain_generic(target: GenericTarget, t, cfg, rng):
    n = target.n
    total = cfg.chain_length
    state = target.init(rng)
    stat = float(target.statistic(state))
    logu = np.log(rng.random(total)).tolist()
    burn, thin = cfg.burn, cfg.thin
    vals = []
    flags = np.zeros(total, dtype=bool)
    for k in range(total):
        cand = target.refresh(state, rng)
        new = float(target.statistic(cand))
        if logu[k] < n * t * (new - stat):
            state, stat = cand, new
            flags[k] = True
        if k >= burn and (k - burn + 1) % thin == 0:
            vals.append(stat)
    return vals, flags


def estimate_phi_prime_tilted(values, n_batches: int = 20) -> tuple:
    """Chain mean of T and its batch-means standard error."""
    x = np.asarray(values, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("empty chain")
    mean = float(np.mean(x))
    b = min(n_batches, x.size)
    if b < 2:
        return mean, float("nan")
    size = x.size // b
    bm = x[:size * b].reshape(b, size).mean(axis=1)
    return mean, float(np.std(bm, ddof=1) / math.sqrt(b))


def integrate_phi_prime(t_grid, phi_prime, n: int = 1) -> LmgfEstimate:
    """Trapezoid integral of ``phi'`` anchored at ``phi(0) = 0``.

    ``phi''`` is taken from centred differences of ``phi'``. A grid that
    brackets 0 without containing it gets 0 inserted, with ``phi'(0)`` by
    linear interpolation.
    """
    t = np.asarray(t_grid, dtype=float)
    d = np.asarray(phi_prime, dtype=float)
    if t.shape != d.shape or t.ndim != 1 or t.size < 2:
        raise ValueError("t-grid and phi' must be matching 1-d arrays")
    if not np.all(np.isfinite(d)):
        raise ValueError("phi' values must be finite")
    order = np.argsort(t)
    t, d = t[order], d[order]
    if not (t[0] <= 0 <= t[-1]):
        raise ValueError("t-grid must contain or bracket 0")
    if not np.any(t == 0):
        k = int(np.searchsorted(t, 0.0))
        d0 = float(np.interp(0.0, t, d))
        t = np.insert(t, k, 0.0)
        d = np.insert(d, k, d0)
    z = int(np.flatnonzero(t == 0)[0])
    steps = 0.5 * (d[1:] + d[:-1]) * np.diff(t)
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    phi = cum - cum[z]
    d2 = np.gradient(d, t)
    return LmgfEstimate(t, phi, d, d2, n, 0, None)


@dataclass(frozen=True)
class TiltResult:
    """Rate at ``gamma`` from the tilted pipeline; unpacks as ``(I, t_gamma)``."""

    gamma: float
    rate: float
    t_gamma: float
    lmgf: LmgfEstimate
    table: tuple  # rows of (t, phi_prime, se, acceptance)

    def __iter__(self):
        return iter((self.rate, self.t_gamma))


def tilted_phi_prime_table(target, t_values, cfg: TiltConfig, start: int = 0) -> list:
    """``(t, phi', se, acceptance)`` per t, each chain on its own derived seed."""
    rows = []
    for k, t in enumerate(t_values):
        rng = np.random.default_rng([cfg.seed, start + k])
        ch = mh_tilted_chain(target, t, cfg, rng)
        m, se = estimate_phi_prime_tilted(ch.values, cfg.n_batches)
        rows.append((float(t), m, se, ch.acceptance))
    return rows


def _pilot_slope(target, rng, m=2000):
    """Mean and variance of the per-coordinate contribution under the base law."""
    if isinstance(target, AdditiveTarget):
        s = np.asarray(target.score(target.draw(m, rng)), dtype=float)
        return float(s.mean()), float(s.var()) or 1.0
    reps = 200
    if isinstance(target, MixtureTarget):
        x = target.draw((reps, target.n), rng)
        terms = np.stack([math.log(w) + np.sum(sc(x), axis=-1)
                          for sc, w in zip(target.scores, target.prior)])
        T = logsumexp(terms, axis=0) / target.n
    else:
        T = np.array([target.statistic(target.init(rng)) for _ in range(reps)])
    return float(T.mean()), float(T.var() * target.n) or 1.0


def _grid_around(lo, hi, points):
    g = np.linspace(lo, hi, points)
    if not np.any(g == 0.0):
        g = np.sort(np.append(g, 0.0))
    return g


def rate_from_tilting(target, gamma: float, cfg: TiltConfig = TiltConfig(),
                      max_expand: int = 3) -> TiltResult:
    """``I(gamma)`` via tilted chains on a t-grid, trapezoid integration and duality."""
    gamma = float(gamma)
    if cfg.t_grid is not None:
        grid = np.asarray(cfg.t_grid, dtype=float)
    else:
        mu, var = _pilot_slope(target, np.random.default_rng([cfg.seed, 10**6]))
        tg = (gamma - mu) / var
        margin = 0.25 * abs(tg) + 0.05
        grid = _grid_around(min(0.0, tg) - margin, max(0.0, tg) + margin, cfg.grid_points)
    rows = tilted_phi_prime_table(target, grid, cfg)
    next_seed = len(rows)
    for attempt in range(max_expand + 1):
        lm = integrate_phi_prime([r[0] for r in rows], [r[1] for r in rows], target.n)
        try:
            rate, t_g = fenchel_legendre(lm, gamma)
            break
        except GammaOutOfRange:
            if attempt == max_expand or cfg.t_grid is not None:
                raise
            # extend on the side where gamma fell off
            ts = np.array([r[0] for r in rows])
            span = ts.max() - ts.min()
            step = span / (cfg.grid_points - 1)
            if gamma > lm.dphi.max():
                extra = ts.max() + step * np.arange(1, cfg.grid_points // 2 + 1)
            else:
                extra = ts.min() - step * np.arange(1, cfg.grid_points // 2 + 1)
            log.info("tilting grid extended to reach gamma=%g", gamma)
            rows += tilted_phi_prime_table(target, extra, cfg, start=next_seed)
            next_seed += len(extra)
            rows.sort()
    # one refinement pass around the root
    ts = np.array([r[0] for r in rows])
    h = np.min(np.diff(ts))
    extra = [t_g + h * f for f in (-0.5, 0.5) if not np.any(np.isclose(ts, t_g + h * f))]
    if extra:
        rows += tilted_phi_prime_table(target, extra, cfg, start=next_seed)
        rows.sort()
        lm = integrate_phi_prime([r[0] for r in rows], [r[1] for r in rows], target.n)
        rate, t_g = fenchel_legendre(lm, gamma)
    return TiltResult(gamma, rate, t_g, lm, tuple(rows))

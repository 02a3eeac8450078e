"""Legendre duality: rate functions and saddlepoints from tabulated LMGFs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .lmgf import LmgfEstimate

T_TOL = 1e-10
NEG_CLAMP = 1e-12


class GammaOutOfRange(ValueError):
    """No saddlepoint for this gamma on the tabulated grid."""


def fenchel_legendre(lmgf: LmgfEstimate, gamma: float) -> tuple:
    """Return ``(I(gamma), t_gamma)`` with ``phi'(t_gamma) = gamma``.

    The root is bracketed on the tabulated derivative, then refined by
    bisection on its monotone interpolant. Gamma on or beyond the edge of the
    tabulated derivative range raises ``GammaOutOfRange``.
    """
    gamma = float(gamma)
    d = lmgf.dphi
    if not (d.min() < gamma < d.max()):
        raise GammaOutOfRange(
            f"gamma={gamma:.6g} outside the derivative range ({d.min():.6g}, {d.max():.6g})")
    s = d - gamma
    hit = np.flatnonzero(s == 0)
    if hit.size:
        t = float(lmgf.t[hit[0]])
    else:
        # a sign change exists because gamma is strictly inside the range;
        # noisy (tilted) derivatives may also cross downwards
        cross = np.flatnonzero((s[:-1] < 0) & (s[1:] > 0))
        if cross.size == 0:
            cross = np.flatnonzero((s[:-1] > 0) & (s[1:] < 0))
        i = int(cross[0])
        t = optimize.bisect(lambda u: float(lmgf.dphi_at(u)) - gamma,
                            float(lmgf.t[i]), float(lmgf.t[i + 1]), xtol=T_TOL, maxiter=200)
    rate = t * gamma - float(lmgf.phi_at(t))
    if -NEG_CLAMP < rate < 0:
        rate = 0.0
    return rate, t


@dataclass(frozen=True)
class RateFunction:
    gamma: np.ndarray
    rate: np.ndarray
    t_gamma: np.ndarray
    mu: float
    skipped: tuple = ()

    def to_rows(self):
        return [(float(g), float(r), float(t))
                for g, r, t in zip(self.gamma, self.rate, self.t_gamma)]


def rate_curve(lmgf: LmgfEstimate, gamma_grid) -> RateFunction:
    """Rate function on every representable point of ``gamma_grid``."""
    gs, rs, ts, skipped = [], [], [], []
    for g in np.asarray(gamma_grid, dtype=float).reshape(-1):
        try:
            r, t = fenchel_legendre(lmgf, g)
        except GammaOutOfRange:
            skipped.append(float(g))
            continue
        gs.append(g)
        rs.append(r)
        ts.append(t)
    if not gs:
        raise GammaOutOfRange("no gamma on the grid has a saddlepoint")
    return RateFunction(np.array(gs), np.array(rs), np.array(ts), lmgf.mean, tuple(skipped))


def chernoff_upper_bound(lmgf: LmgfEstimate, gamma: float, n: int) -> float:
    """``exp(-n I(gamma))``; trivially 1 when gamma does not exceed the mean."""
    if gamma <= lmgf.mean:
        return 1.0
    rate, _ = fenchel_legendre(lmgf, gamma)
    return math.exp(-n * rate)

"""Empirical log-moment generating functions and their derivatives.

Estimates are tabulated on a t-grid together with the first two derivatives
and the effective sample size of the exponential weights at every point.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate, special

DEFAULT_GRID = np.linspace(-3.0, 3.0, 201)
ESS_UNRELIABLE = 30.0


class LmgfWarning(UserWarning):
    """The estimate at some grid point rests on very few samples."""


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LmgfEstimate:
    """Tabulated LMGF ``phi`` with derivatives on an increasing grid ``t``.

    ``n`` is the scaling parameter (1 for elementwise scores), ``m`` the
    number of samples behind the estimate, ``ess`` the effective sample size
    per grid point (NaN where it does not apply).
    """

    t: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    n: int = 1
    m: int = 0
    ess: np.ndarray = None
    _interp: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        t = _readonly(self.t)
        if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("t-grid must be strictly increasing with at least two points")
        arrays = {}
        for name in ("phi", "dphi", "d2phi"):
            a = _readonly(getattr(self, name))
            if a.shape != t.shape:
                raise ValueError(f"{name} must match the grid")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} has non-finite entries")
            arrays[name] = a
        ess = np.full(t.shape, np.nan) if self.ess is None else self.ess
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "ess", _readonly(ess))
        for name, a in arrays.items():
            object.__setattr__(self, name, a)
        object.__setattr__(self, "_interp", {
            "phi": interpolate.CubicHermiteSpline(t, arrays["phi"], arrays["dphi"]),
            "dphi": interpolate.PchipInterpolator(t, arrays["dphi"]),
        })

    def phi_at(self, t):
        return self._interp["phi"](t)

    def dphi_at(self, t):
        return self._interp["dphi"](t)

    def d2phi_at(self, t):
        return np.interp(t, self.t, self.d2phi)

    def negated(self) -> "LmgfEstimate":
        """LMGF of the negated statistic: ``t -> phi(-t)``."""
        return LmgfEstimate(-self.t[::-1], self.phi[::-1], -self.dphi[::-1], self.d2phi[::-1],
                            self.n, self.m, self.ess[::-1])

    @property
    def mean(self) -> float:
        """``phi'(0)``, the mean of the statistic."""
        return float(self.dphi_at(0.0))

    def unreliable(self, threshold: float = ESS_UNRELIABLE) -> np.ndarray:
        """Grid points whose effective sample size falls below ``threshold``."""
        return self.ess < threshold

    def to_rows(self):
        return [(float(a), float(b), float(c), float(d), float(e))
                for a, b, c, d, e in zip(self.t, self.phi, self.dphi, self.d2phi, self.ess)]


def _check_scores(scores) -> np.ndarray:
    x = np.asarray(scores, dtype=float).reshape(-1)
    if x.size < 2:
        raise ValueError("need at least two scores")
    if not np.all(np.isfinite(x)):
        raise ValueError("scores must be finite")
    return x


def _tilted(x, t_grid, scale):
    """Log-mean of ``exp(scale*t*x)`` and the tilted mean/variance of ``x`` per t."""
    m = x.size
    t_grid = np.asarray(t_grid, dtype=float)
    logmean = np.empty(t_grid.size)
    mean = np.empty(t_grid.size)
    var = np.empty(t_grid.size)
    ess = np.empty(t_grid.size)
    wmax = np.empty(t_grid.size)
    centre = float(np.mean(x))
    xc = x - centre
    for i, t in enumerate(t_grid):
        a = (scale * t) * xc
        amax = a.max()
        w = np.exp(a - amax)
        sw = w.sum()
        logmean[i] = amax + math.log(sw) - math.log(m) + scale * t * centre
        p = w / sw
        mu = float(p @ xc)
        mean[i] = mu + centre
        var[i] = max(float(p @ (xc - mu) ** 2), 0.0)
        ess[i] = 1.0 / float(p @ p)
        wmax[i] = float(p.max())
    return logmean, mean, var, ess, wmax


def lmgf_direct(scores, t_grid=DEFAULT_GRID) -> LmgfEstimate:
    """Direct LMGF estimate ``log mean exp(t*tau_j)`` with tilted-moment derivatives."""
    x = _check_scores(scores)
    phi, dphi, d2phi, ess, _ = _tilted(x, t_grid, 1.0)
    return LmgfEstimate(t_grid, phi, dphi, d2phi, 1, x.size, ess)


def scaled_grid(stats, n: int, half_width: float = 3.0, points: int = 201) -> np.ndarray:
    """Grid ``[-h/s, h/s]`` where ``s`` is the spread of ``n*T``."""
    s = float(np.std(np.asarray(stats, dtype=float), ddof=1)) * n
    if not s > 0:
        s = 1.0
    return np.linspace(-half_width / s, half_width / s, points)


def scaled_lmgf_direct(stats, n: int, t_grid=None, warn: bool = True) -> LmgfEstimate:
    """Scaled LMGF ``(1/n) log mean exp(n*t*T_j)`` from samples of the statistic.

    Warns when a single sample carries more than half of the tilt weight at
    any grid point.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    x = _check_scores(stats)
    if t_grid is None:
        t_grid = scaled_grid(x, n)
    logmean, mean, var, ess, wmax = _tilted(x, t_grid, float(n))
    if warn and np.any(wmax > 0.5):
        bad = np.asarray(t_grid)[wmax > 0.5]
        warnings.warn(
            f"tilt weights dominated by one sample for t in [{bad.min():.4g}, {bad.max():.4g}]",
            LmgfWarning, stacklevel=2)
    return LmgfEstimate(t_grid, logmean / n, mean, n * var, n, x.size, ess)


def lmgf_closed_form_gaussian_samples(mean: float, var: float, t):
    """LMGF of a normal law, ``mean*t + var*t**2/2``."""
    if var < 0:
        raise ValueError("variance must be non-negative")
    return mean * np.asarray(t, dtype=float) + 0.5 * var * np.asarray(t, dtype=float) ** 2


def lmgf_from_function(fn, t_grid=DEFAULT_GRID, n: int = 1) -> LmgfEstimate:
    """Tabulate an analytic LMGF; ``fn(t)`` returns ``(phi, dphi, d2phi)`` arrays."""
    t_grid = np.asarray(t_grid, dtype=float)
    phi, dphi, d2phi = (np.broadcast_to(np.asarray(v, dtype=float), t_grid.shape)
                        for v in fn(t_grid))
    return LmgfEstimate(t_grid, phi, dphi, d2phi, n, 0, None)


def bootstrap_se(scores, t_grid, n: int = 1, reps: int = 200, rng=None) -> np.ndarray:
    """Bootstrap standard error of the (scaled) direct LMGF at every grid point."""
    x = _check_scores(scores)
    rng = np.random.default_rng(rng)
    t_grid = np.asarray(t_grid, dtype=float)
    out = np.empty((reps, t_grid.size))
    m = x.size
    for r in range(reps):
        xb = x[rng.integers(0, m, m)]
        for lo in range(0, t_grid.size, 16):
            a = n * t_grid[lo:lo + 16, None] * xb[None, :]
            out[r, lo:lo + 16] = (special.logsumexp(a, axis=1) - math.log(m)) / n
    return out.std(axis=0, ddof=1)

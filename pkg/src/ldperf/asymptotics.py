"""Error-probability approximations for thresholded mean-type statistics.

Saddlepoint (exact-asymptotic) tails with the optional c_n refinement,
Gaussian approximations, CLT thresholds, and assembly of error curves
across a list of sample sizes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

from .lmgf import LmgfEstimate
from .ratefn import GammaOutOfRange, fenchel_legendre

log = logging.getLogger(__name__)

LN10 = math.log(10.0)


class NoSaddlepoint(ValueError):
    """The threshold lies on the wrong side of the mean for the requested tail."""


def q_function(x):
    """Upper-tail probability of the standard normal."""
    out = special.ndtr(-np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def log10_q_function(x) -> float:
    return float(special.log_ndtr(-float(x))) / LN10


def q_inverse(alpha):
    a = np.asarray(alpha, dtype=float)
    if np.any((a <= 0) | (a >= 1)):
        raise ValueError("alpha must lie in (0, 1)")
    out = -special.ndtri(a)
    return float(out) if np.ndim(out) == 0 else out


def set_threshold_clt(mu0: float, sigma0: float, n: int, alpha: float) -> float:
    """``mu0 + sigma0/sqrt(n) * Qinv(alpha)`` for a sample-mean statistic.

    Pass the per-n moments with ``n=1`` when they are already estimated on
    the statistic itself.
    """
    if sigma0 < 0:
        raise ValueError("sigma0 must be non-negative")
    return mu0 + sigma0 / math.sqrt(n) * q_inverse(alpha)


def set_threshold_image(mu0: float, sigma0: float, alpha: float, n: int) -> tuple:
    """Threshold for an unnormalised statistic and its per-pixel version.

    Returns ``(gamma, gamma / n)``.
    """
    if sigma0 < 0:
        raise ValueError("sigma0 must be non-negative")
    gamma = mu0 + sigma0 * q_inverse(alpha)
    return gamma, gamma / n


def gaussian_error_approx(mu_n: float, sigma_n: float, gamma_n: float, tail: str = "upper") -> float:
    if not sigma_n > 0:
        raise ValueError("sigma_n must be positive")
    z = (gamma_n - mu_n) / sigma_n
    if tail == "upper":
        return q_function(z)
    if tail == "lower":
        return q_function(-z)
    raise ValueError("tail must be 'upper' or 'lower'")


def log10_gaussian_error_approx(mu_n, sigma_n, gamma_n, tail="upper") -> float:
    z = (gamma_n - mu_n) / sigma_n
    return log10_q_function(z if tail == "upper" else -z)


@dataclass(frozen=True)
class TailApprox:
    """Saddlepoint tail ``zeta_n * exp(-n I)``; unpacks as ``(prob, zeta, t, I)``."""

    prob: float
    zeta: float
    t_gamma: float
    rate: float
    n: int

    def __iter__(self):
        return iter((self.prob, self.zeta, self.t_gamma, self.rate))

    @property
    def log10_prob(self) -> float:
        return min(0.0, math.log10(self.zeta) - self.n * self.rate / LN10)

    @property
    def c_n(self) -> float:
        return cn_refinement(self.zeta)

    @property
    def log10_prob_cn(self) -> float:
        return math.log10(self.c_n) - self.n * self.rate / LN10


def exact_asymptotic_tail(lmgf: LmgfEstimate, gamma: float, n: int, tail: str = "upper") -> TailApprox:
    """Saddlepoint approximation of ``P[T >= gamma]`` (upper) or ``P[T <= gamma]`` (lower).

    The lower tail is handled by negating the statistic and the threshold.
    """
    if tail == "lower":
        lmgf, gamma = lmgf.negated(), -gamma
    elif tail != "upper":
        raise ValueError("tail must be 'upper' or 'lower'")
    if not gamma > lmgf.mean:
        raise NoSaddlepoint(
            f"{tail} tail needs the threshold beyond the mean ({gamma:+.6g} vs {lmgf.mean:+.6g})")
    rate, t = fenchel_legendre(lmgf, gamma)
    curv = float(lmgf.d2phi_at(t))
    if not (t > 0 and curv > 0):
        raise NoSaddlepoint(f"degenerate saddlepoint t={t:.3g}, phi''={curv:.3g}")
    zeta = 1.0 / (t * math.sqrt(2.0 * math.pi * n * curv))
    prob = min(1.0, zeta * math.exp(-n * rate))
    return TailApprox(prob, zeta, t, rate, n)


def cn_refinement(zeta: float) -> float:
    """``int_0^inf e^-t [Q(0) - Q(sqrt(2 pi) zeta t)] dt`` by adaptive quadrature.

    The Gaussian argument is ``t / psi`` with ``psi = 1 / (sqrt(2 pi) zeta)``,
    which makes ``c_n / zeta -> 1`` as ``zeta -> 0``.
    """
    if not zeta > 0:
        raise ValueError("zeta must be positive")
    k = zeta * math.sqrt(math.pi)
    # Q(0) - Q(x) = erf(x / sqrt 2) / 2 avoids cancellation for small x
    f = lambda t: math.exp(-t) * 0.5 * math.erf(k * t)  # noqa: E731
    # split where erf saturates so a steep rise near 0 is not missed
    b = 8.0 / k
    if b >= 50.0:
        return integrate.quad(f, 0.0, math.inf, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    head = integrate.quad(f, 0.0, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    return head + 0.5 * math.exp(-b)


def cn_closed_form(zeta: float) -> float:
    """Closed form of the c_n integral, ``erfcx(1 / (2 sqrt(pi) zeta)) / 2``."""
    return 0.5 * float(special.erfcx(1.0 / (2.0 * math.sqrt(math.pi) * zeta)))


def estimate_moments(stats) -> tuple:
    """Sample mean and unbiased-variance standard deviation."""
    x = np.asarray(stats, dtype=float).reshape(-1)
    if x.size < 2:
        raise ValueError("need at least two values")
    return float(np.mean(x)), float(np.std(x, ddof=1))


@dataclass(frozen=True)
class ThresholdRule:
    """Either a fixed threshold or a CLT false-alarm level."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("fixed", "clt"):
            raise ValueError("kind must be 'fixed' or 'clt'")
        if self.kind == "clt" and not 0 < self.value < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @classmethod
    def fixed(cls, gamma: float) -> "ThresholdRule":
        return cls("fixed", float(gamma))

    @classmethod
    def clt(cls, alpha: float) -> "ThresholdRule":
        return cls("clt", float(alpha))

    def threshold(self, mu_n: float, sigma_n: float) -> float:
        """Threshold from the per-n H0 moments of the statistic."""
        if self.kind == "fixed":
            return self.value
        return set_threshold_clt(mu_n, sigma_n, 1, self.value)

    def check_fixed(self, mu0: float, mu1: float) -> None:
        if self.kind == "fixed" and not mu0 < self.value < mu1:
            raise ValueError("fixed threshold must lie strictly between the two means")


@dataclass(frozen=True)
class ErrorPoint:
    n: int
    gamma_n: float
    alpha_exact: float
    alpha_exact_log10: float
    alpha_exact_cn: float
    alpha_gauss: float
    alpha_gauss_log10: float
    beta_exact: float
    beta_exact_log10: float
    beta_exact_cn: float
    beta_gauss: float
    beta_gauss_log10: float
    zeta_alpha: float
    c_alpha: float
    t_alpha: float
    zeta_n: float
    c_n: float
    t_beta: float
    method_alpha: str
    method_beta: str
    alpha_mc: float = float("nan")
    beta_mc: float = float("nan")


@dataclass(frozen=True)
class ErrorCurve:
    points: tuple

    @property
    def n(self) -> np.ndarray:
        return np.array([p.n for p in self.points])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points], dtype=float)

    def with_mc(self, alpha_mc, beta_mc) -> "ErrorCurve":
        pts = tuple(replace(p, alpha_mc=float(a), beta_mc=float(b))
                    for p, a, b in zip(self.points, alpha_mc, beta_mc))
        return ErrorCurve(pts)


def _side(lmgf, gamma, n, tail, mu, sigma):
    """Saddlepoint value with Gaussian fallback for one error type."""
    gauss = gaussian_error_approx(mu, sigma, gamma, tail) if sigma > 0 else float("nan")
    glog = log10_gaussian_error_approx(mu, sigma, gamma, tail) if sigma > 0 else float("nan")
    try:
        ta = exact_asymptotic_tail(lmgf, gamma, n, tail)
    except NoSaddlepoint:
        return (gauss, glog, gauss, float("nan"), float("nan"), float("nan"), "gaussian",
                gauss, glog)
    except GammaOutOfRange:
        return (gauss, glog, gauss, float("nan"), float("nan"), float("nan"),
                "gaussian-out-of-grid", gauss, glog)
    c = ta.c_n
    lg = ta.log10_prob
    cn_prob = min(1.0, 10.0 ** ta.log10_prob_cn)
    return (10.0 ** lg, lg, cn_prob, ta.zeta, c, ta.t_gamma, "saddlepoint", gauss, glog)


def error_curve(n_list, rule: ThresholdRule,
                lmgf0: Callable[[int], LmgfEstimate], lmgf1: Callable[[int], LmgfEstimate],
                moments0: Callable[[int], tuple], moments1: Callable[[int], tuple],
                mc: Optional[Callable[[int, float], tuple]] = None) -> ErrorCurve:
    """Assemble threshold, saddlepoint and Gaussian error values for every n.

    ``lmgf_k(n)`` gives the (scaled) LMGF of the statistic under hypothesis k
    at sample size n, ``moments_k(n)`` its mean and standard deviation, and
    the optional ``mc(n, gamma_n)`` an empirical ``(alpha, beta)`` pair.
    A failure at one n is logged and recorded as NaN without stopping the
    rest of the curve.
    """
    points = []
    nan = float("nan")
    for n in n_list:
        n = int(n)
        try:
            mu0, s0 = moments0(n)
            mu1, s1 = moments1(n)
            gamma = rule.threshold(mu0, s0)
            a = _side(lmgf0(n), gamma, n, "upper", mu0, s0)
            b = _side(lmgf1(n), gamma, n, "lower", mu1, s1)
            a_mc, b_mc = mc(n, gamma) if mc is not None else (nan, nan)
            points.append(ErrorPoint(
                n, gamma,
                a[0], a[1], a[2], a[7], a[8],
                b[0], b[1], b[2], b[7], b[8],
                a[3], a[4], a[5], b[3], b[4], b[5], a[6], b[6], a_mc, b_mc))
        except Exception as exc:  # keep the rest of the curve
            log.warning("error curve point n=%d failed: %s", n, exc)
            points.append(ErrorPoint(n, nan, *([nan] * 16), f"failed: {exc}", f"failed: {exc}"))
    return ErrorCurve(tuple(points))

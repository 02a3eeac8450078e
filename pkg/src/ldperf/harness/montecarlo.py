"""Monte Carlo error counting with exact binomial confidence intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


def clopper_pearson(k: int, runs: int, level: float = 0.95) -> tuple:
    """Exact two-sided binomial interval for ``k`` successes in ``runs`` trials."""
    if runs < 1 or not 0 <= k <= runs:
        raise ValueError("need 0 <= k <= runs and runs >= 1")
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, runs - k + 1))
    hi = 1.0 if k == runs else float(stats.beta.ppf(1 - a / 2, k + 1, runs - k))
    return lo, hi


def decide_h1(stat, gamma):
    """Test decision; a statistic equal to the threshold decides H1."""
    return np.asarray(stat) >= gamma


@dataclass(frozen=True)
class ErrorRate:
    errors: int
    runs: int

    @property
    def estimate(self) -> float:
        return self.errors / self.runs

    @property
    def interval(self) -> tuple:
        return clopper_pearson(self.errors, self.runs)

    @property
    def enough(self) -> bool:
        """At least ten errors observed, the usual floor for a usable estimate."""
        return self.errors >= 10


def false_alarms(stats0, gamma) -> ErrorRate:
    s = np.asarray(stats0).reshape(-1)
    return ErrorRate(int(np.count_nonzero(decide_h1(s, gamma))), s.size)


def misses(stats1, gamma) -> ErrorRate:
    s = np.asarray(stats1).reshape(-1)
    return ErrorRate(int(np.count_nonzero(~decide_h1(s, gamma))), s.size)


@dataclass(frozen=True)
class McPoint:
    n: int
    gamma_n: float
    alpha: ErrorRate
    beta: ErrorRate

    def row(self):
        a_lo, a_hi = self.alpha.interval
        b_lo, b_hi = self.beta.interval
        return (self.n, self.gamma_n, self.alpha.estimate, a_lo, a_hi, self.alpha.errors,
                self.beta.estimate, b_lo, b_hi, self.beta.errors, self.alpha.runs)


MC_HEADER = ("n", "gamma_n", "alpha_hat", "alpha_lo", "alpha_hi", "alpha_errors",
             "beta_hat", "beta_lo", "beta_hi", "beta_errors", "runs")


@dataclass(frozen=True)
class McResult:
    points: tuple
    seed: int

    def rows(self):
        return [p.row() for p in self.points]

    def flagged(self) -> list:
        """Sample sizes whose error counts are too small to trust."""
        return [p.n for p in self.points if not (p.alpha.enough and p.beta.enough)]

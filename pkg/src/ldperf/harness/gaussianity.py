"""Moment-based normality summary for a sample of statistic values."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

SKEW_LIMIT = 0.2
KURT_LIMIT = 0.5


@dataclass(frozen=True)
class GaussianityReport:
    m: int
    mean: float
    std: float
    skew: float
    skew_se: float
    excess_kurtosis: float
    kurtosis_se: float
    bin_edges: tuple
    counts: tuple
    expected: tuple
    degenerate: bool
    passed: bool

    def as_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def gaussianity_report(values, bins: int = 30) -> GaussianityReport:
    """Skewness and excess kurtosis with large-sample standard errors.

    Passes when ``|skew| < 0.2`` and ``|excess kurtosis| < 0.5``. Constant
    input is flagged degenerate and never passes.
    """
    x = np.asarray(values, dtype=float).reshape(-1)
    m = x.size
    if m < 2:
        raise ValueError("need at least two values")
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    skew_se = math.sqrt(6.0 / m)
    kurt_se = math.sqrt(24.0 / m)
    if not sd > 0:
        return GaussianityReport(m, mean, 0.0, float("nan"), skew_se, float("nan"), kurt_se,
                                 (), (), (), True, False)
    skew = float(stats.skew(x))
    kurt = float(stats.kurtosis(x))
    counts, edges = np.histogram(x, bins=bins)
    cdf = stats.norm.cdf(edges, loc=mean, scale=sd)
    expected = m * np.diff(cdf)
    passed = abs(skew) < SKEW_LIMIT and abs(kurt) < KURT_LIMIT
    return GaussianityReport(m, mean, sd, skew, skew_se, kurt, kurt_se, tuple(edges.tolist()),
                             tuple(int(c) for c in counts), tuple(expected.tolist()), False,
                             passed)

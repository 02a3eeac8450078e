import numpy as np

from ldperf.lmgf import lmgf_from_function
from ldperf.models import llr_tilted_moments


def llr_table(model, hyp, t_grid):
    """Analytic elementwise LLR LMGF tabulated on ``t_grid``."""
    def fn(t):
        rows = np.array([llr_tilted_moments(model, hyp, float(u)) for u in t])
        return rows[:, 0], rows[:, 1], rows[:, 2]
    return lmgf_from_function(fn, np.asarray(t_grid, dtype=float))


def standard_normal_table(t_grid):
    """``phi(t) = t^2/2``, the LMGF of a standard normal variable."""
    return lmgf_from_function(lambda t: (0.5 * t * t, t, np.ones_like(t)),
                              np.asarray(t_grid, dtype=float))

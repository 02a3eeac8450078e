"""Generative models for the three detection scenarios.

Scalar shift-in-location models (Laplace / Gaussian), the composite version
with a finite alternative set, and the binary extended-target image model.
Exact log-likelihood ratios and closed-form reference quantities live here
too, since every other module uses them as test oracles.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

__all__ = [
    "Family",
    "ShiftModel",
    "CompositeModel",
    "ImageModel",
    "TargetShape",
    "hypothesis_index",
    "sample_iid",
    "sample_llr_statistic",
    "llr_elementwise",
    "llr_mixture",
    "kl_divergence",
    "theta_min_kl",
    "generate_image",
    "gaussian_llr_lmgf_oracle",
    "gaussian_llr_rate_oracle",
    "laplace_llr_lmgf",
    "llr_tilted_moments",
    "write_pbm",
    "read_pbm",
]


class Family(str, enum.Enum):
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"


def hypothesis_index(hyp) -> int:
    """Map ``0``/``1``/``"H0"``/``"H1"`` to 0 or 1."""
    if isinstance(hyp, str):
        key = hyp.strip().upper()
        if key in ("H0", "0"):
            return 0
        if key in ("H1", "1"):
            return 1
    elif hyp in (0, 1):
        return int(hyp)
    raise ValueError(f"unknown hypothesis {hyp!r}; expected H0 or H1")


@dataclass(frozen=True)
class ShiftModel:
    """IID shift-in-location test: ``x ~ f(x - theta_k)`` under H_k."""

    family: Family
    theta0: float
    theta1: float
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.theta0 == self.theta1:
            raise ValueError("theta0 and theta1 must differ")

    def theta(self, hyp) -> float:
        return self.theta1 if hypothesis_index(hyp) else self.theta0

    def logpdf(self, x, theta):
        return _logpdf(self.family, np.asarray(x, dtype=float), theta, self.scale)

    @property
    def kl10(self) -> float:
        """D(f1 || f0), the asymptotic mean of the LLR under H1."""
        return kl_divergence(self.family, self.theta1, self.theta0, self.scale)

    @property
    def kl01(self) -> float:
        return kl_divergence(self.family, self.theta0, self.theta1, self.scale)


@dataclass(frozen=True)
class CompositeModel:
    """Simple H0 at ``theta0`` against a finite set of alternatives."""

    family: Family
    theta0: float
    thetas: tuple
    prior: tuple = None
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        thetas = tuple(float(t) for t in self.thetas)
        if not thetas:
            raise ValueError("thetas must be non-empty")
        if self.theta0 in thetas:
            raise ValueError("theta0 must not belong to the alternative set")
        prior = self.prior
        if prior is None:
            prior = tuple(1.0 / len(thetas) for _ in thetas)
        prior = tuple(float(w) for w in prior)
        if len(prior) != len(thetas):
            raise ValueError("prior and thetas differ in length")
        if any(w <= 0 for w in prior) or abs(sum(prior) - 1.0) > 1e-9:
            raise ValueError("prior weights must be positive and sum to 1")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "prior", prior)

    def logpdf(self, x, theta):
        return _logpdf(self.family, np.asarray(x, dtype=float), theta, self.scale)

    def component(self, theta) -> ShiftModel:
        """The simple test ``theta0`` vs ``theta``."""
        return ShiftModel(self.family, self.theta0, theta, self.scale)


@dataclass(frozen=True)
class ImageModel:
    width: int
    height: int
    p0: float
    p1: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if not (0.0 <= self.p0 <= 1.0 and 0.0 <= self.p1 <= 1.0):
            raise ValueError("pixel probabilities must lie in [0, 1]")
        if not self.p1 > self.p0:
            raise ValueError("p1 must exceed p0")

    @property
    def n_pixels(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class TargetShape:
    """Circle, ellipse or rectangle in pixel coordinates.

    ``axes`` holds (radius, radius) for circles, the two semi-axes for
    ellipses and the two full side lengths for rectangles. Pixel ``(row, col)``
    belongs to the target when its centre ``(col + 0.5, row + 0.5)`` falls
    inside the shape.
    """

    kind: str
    center: tuple
    axes: tuple
    rotation: float = 0.0

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in ("circle", "ellipse", "rectangle"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        axes = tuple(float(a) for a in self.axes)
        if len(axes) == 1:
            axes = (axes[0], axes[0])
        if min(axes) <= 0:
            raise ValueError("shape axes must be positive")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @classmethod
    def circle(cls, center, radius):
        return cls("circle", center, (radius, radius))

    def mask(self, width: int, height: int) -> np.ndarray:
        rows, cols = np.mgrid[0:height, 0:width]
        dx = cols + 0.5 - self.center[0]
        dy = rows + 0.5 - self.center[1]
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        u = c * dx + s * dy
        v = -s * dx + c * dy
        a, b = self.axes
        if self.kind == "rectangle":
            return (np.abs(u) <= a / 2) & (np.abs(v) <= b / 2)
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _logpdf(family, x, theta, scale):
    if family is Family.GAUSSIAN:
        z = (x - theta) / scale
        return -0.5 * z * z - math.log(scale) - 0.5 * math.log(2 * math.pi)
    return -np.abs(x - theta) / scale - math.log(2 * scale)


def _open_uniform(rng, size):
    u = rng.random(size)
    return np.where(u == 0.0, 2.0**-54, u)


def _draw(family, theta, scale, size, rng):
    # One uniform per variate, inverse-CDF transform.
    u = _open_uniform(rng, size)
    if family is Family.GAUSSIAN:
        return theta + scale * special.ndtri(u)
    v = u - 0.5
    return theta - scale * np.sign(v) * np.log1p(-2.0 * np.abs(v))


def sample_iid(model, hyp, n, rng, theta=None) -> np.ndarray:
    """Draw IID observations under ``hyp``.

    ``n`` may be an int or a shape tuple, so ``(runs, n)`` draws a batch of
    observation sets at once. For a :class:`CompositeModel` under H1 the true
    parameter ``theta`` must be given.
    """
    size = (n,) if np.isscalar(n) else tuple(n)
    if min(size) < 1:
        raise ValueError("n must be at least 1")
    k = hypothesis_index(hyp)
    if isinstance(model, CompositeModel):
        if k == 0:
            centre = model.theta0
        else:
            if theta is None:
                raise ValueError("composite H1 sampling needs the true theta")
            centre = float(theta)
    else:
        centre = model.theta(k) if theta is None else float(theta)
    return _draw(model.family, centre, model.scale, size, rng)


def llr_elementwise(model: ShiftModel, x):
    """``log f1(x) - log f0(x)`` in closed form."""
    x = np.asarray(x, dtype=float)
    a, b, s = model.theta0, model.theta1, model.scale
    if model.family is Family.GAUSSIAN:
        return (b - a) * (2.0 * x - a - b) / (2.0 * s * s)
    return (np.abs(x - a) - np.abs(x - b)) / s


def sample_llr_statistic(model: ShiftModel, hyp, n: int, runs: int, rng,
                         chunk: int = 100_000) -> np.ndarray:
    """Exact draws of the IID LLR statistic ``L^(n)`` without materialising
    the ``runs x n`` observation matrix.

    Gaussian: the LLR is affine in the sample mean, which is drawn directly.
    Laplace: the elementwise LLR is constant outside ``[theta0, theta1]``, so
    only the multinomial region counts and the in-between values are drawn.
    """
    k = hypothesis_index(hyp)
    centre = model.theta(k)
    a, b, s = model.theta0, model.theta1, model.scale
    if model.family is Family.GAUSSIAN:
        xbar = centre + s / math.sqrt(n) * special.ndtri(_open_uniform(rng, runs))
        return (b - a) * (2.0 * xbar - a - b) / (2.0 * s * s)

    lo, hi = min(a, b), max(a, b)
    l_lo = (abs(lo - a) - abs(lo - b)) / s
    l_hi = (abs(hi - a) - abs(hi - b)) / s
    delta = (hi - lo) / s
    tail = 0.5 * math.exp(-delta)
    # centre sits at one end of the interval
    if centre == lo:
        probs = [0.5, 0.5 - tail, tail]
    else:
        probs = [tail, 0.5 - tail, 0.5]
    mass = -math.expm1(-delta)
    # keep the in-between draws of one chunk to a few million
    chunk = max(1, min(chunk, int(4e6 / max(1.0, n * probs[1]))))
    out = np.empty(runs)
    for start in range(0, runs, chunk):
        m = min(chunk, runs - start)
        counts = rng.multinomial(n, probs, size=m)
        n_mid = counts[:, 1]
        u = _open_uniform(rng, int(n_mid.sum()))
        if centre == lo:
            x = lo - s * np.log1p(-u * mass)
        else:
            x = hi + s * np.log1p(-u * mass)
        lv = (np.abs(x - a) - np.abs(x - b)) / s
        owner = np.repeat(np.arange(m), n_mid)
        mid_sum = np.bincount(owner, weights=lv, minlength=m)
        out[start:start + m] = (counts[:, 0] * l_lo + counts[:, 2] * l_hi + mid_sum) / n
    return out


def llr_mixture(model: CompositeModel, obs) -> np.ndarray | float:
    """Normalised mixture LLR over the last axis of ``obs``.

    ``(1/n) log[sum_theta w_theta prod_i f(x_i|theta) / prod_i f(x_i|theta0)]``
    evaluated with a max-subtracted log-sum-exp.
    """
    x = np.asarray(obs, dtype=float)
    n = x.shape[-1]
    base = model.logpdf(x, model.theta0)
    terms = np.stack(
        [math.log(w) + np.sum(model.logpdf(x, th) - base, axis=-1)
         for th, w in zip(model.thetas, model.prior)],
        axis=0,
    )
    out = special.logsumexp(terms, axis=0) / n
    return float(out) if np.ndim(out) == 0 else out


def kl_divergence(family, a: float, b: float, scale: float = 1.0) -> float:
    """Closed-form D(a || b) for the Gaussian, Laplace and Bernoulli families.

    For ``family="bernoulli"`` the arguments are success probabilities.
    """
    fam = str(getattr(family, "value", family)).lower()
    if fam == "gaussian":
        return (a - b) ** 2 / (2.0 * scale * scale)
    if fam == "laplace":
        r = abs(a - b) / scale
        return r + math.expm1(-r)
    if fam == "bernoulli":
        out = 0.0
        if a > 0:
            out += a * math.log(a / b)
        if a < 1:
            out += (1 - a) * math.log((1 - a) / (1 - b))
        return out
    raise ValueError(f"unsupported family {family!r}")


def theta_min_kl(model: CompositeModel) -> float:
    """Alternative closest to ``theta0`` in ``D(theta0 || theta)``; first wins ties."""
    best, best_d = None, math.inf
    for th in model.thetas:
        d = kl_divergence(model.family, model.theta0, th, model.scale)
        if d < best_d:
            best, best_d = th, d
    return best


def generate_image(model: ImageModel, shape: TargetShape | None, rng):
    """Binary image with Bernoulli(p1) pixels inside the target mask and
    Bernoulli(p0) elsewhere. Returns ``(image, n)`` with ``n`` the mask size."""
    if shape is None:
        mask = np.zeros((model.height, model.width), dtype=bool)
    else:
        mask = shape.mask(model.width, model.height)
    probs = np.where(mask, model.p1, model.p0)
    image = (rng.random(mask.shape) < probs).astype(np.uint8)
    return image, int(mask.sum())


def gaussian_llr_lmgf_oracle(model: ShiftModel, hyp, t):
    """LMGF of the elementwise Gaussian LLR: ``(d^2/2) t (t -/+ 1)``."""
    if model.family is not Family.GAUSSIAN:
        raise ValueError("closed-form oracle only exists for the Gaussian family")
    d2 = ((model.theta1 - model.theta0) / model.scale) ** 2
    t = np.asarray(t, dtype=float)
    sign = 1.0 if hypothesis_index(hyp) else -1.0
    return 0.5 * d2 * t * (t + sign)


def gaussian_llr_rate_oracle(model: ShiftModel, hyp, gamma):
    """Legendre transform of :func:`gaussian_llr_lmgf_oracle`."""
    if model.family is not Family.GAUSSIAN:
        raise ValueError("closed-form oracle only exists for the Gaussian family")
    d2 = ((model.theta1 - model.theta0) / model.scale) ** 2
    gamma = np.asarray(gamma, dtype=float)
    i0 = (gamma + 0.5 * d2) ** 2 / (2.0 * d2)
    return i0 - gamma if hypothesis_index(hyp) else i0


def laplace_llr_lmgf(model: ShiftModel, hyp, t):
    """Closed-form LMGF of the elementwise Laplace LLR.

    With ``delta = |theta1 - theta0| / b`` and ``H0``::

        E e^{t l} = (e^{-t delta} + e^{(t-1) delta}) / 2
                    + e^{-t delta} (e^{(2t-1) delta} - 1) / (2 (2t - 1))

    and ``phi_1(t) = phi_0(t + 1)``.
    """
    if model.family is not Family.LAPLACE:
        raise ValueError("Laplace family required")
    delta = abs(model.theta1 - model.theta0) / model.scale
    t = np.asarray(t, dtype=float) + hypothesis_index(hyp)
    k = 2.0 * t - 1.0
    # (e^{k delta} - 1) / k, continuous at k = 0
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(np.abs(k) > 1e-12, np.expm1(k * delta) / np.where(k == 0, 1, k), delta)
    val = 0.5 * (np.exp(-t * delta) + np.exp((t - 1.0) * delta)) + 0.5 * np.exp(-t * delta) * ratio
    return np.log(val)


def llr_tilted_moments(model: ShiftModel, hyp, t: float):
    """``(phi, phi', phi'')`` of the elementwise LLR at ``t`` by quadrature.

    The atoms of the Laplace LLR are handled exactly and only the linear
    middle piece is integrated. Works for both families and is used to build
    analytic LMGF tables.
    """
    k = hypothesis_index(hyp)
    centre = model.theta(k)
    s = model.scale
    if model.family is Family.GAUSSIAN:
        d2 = ((model.theta1 - model.theta0) / s) ** 2
        sign = 1.0 if k else -1.0
        phi = 0.5 * d2 * t * (t + sign)
        return phi, d2 * t + 0.5 * sign * d2, d2
    lo, hi = sorted((model.theta0, model.theta1))
    a, b = model.theta0, model.theta1
    l_lo = (abs(lo - a) - abs(lo - b)) / s
    l_hi = (abs(hi - a) - abs(hi - b)) / s
    p_lo = 0.5 * math.exp(-(centre - lo) / s) if centre >= lo else 1 - 0.5 * math.exp((centre - lo) / s)
    p_hi = 0.5 * math.exp(-(hi - centre) / s) if centre <= hi else 1 - 0.5 * math.exp((hi - centre) / s)
    shift = max(abs(t * l_lo), abs(t * l_hi))

    def dens(x):
        return math.exp(-abs(x - centre) / s) / (2 * s)

    def lv(x):
        return (abs(x - a) - abs(x - b)) / s

    moments = []
    for p in range(3):
        mid = integrate.quad(lambda x: lv(x) ** p * math.exp(t * lv(x) - shift) * dens(x),
                             lo, hi, epsabs=1e-13, epsrel=1e-10, limit=200)[0]
        atoms = (p_lo * l_lo ** p * math.exp(t * l_lo - shift)
                 + p_hi * l_hi ** p * math.exp(t * l_hi - shift))
        moments.append(mid + atoms)
    m0, m1, m2 = moments
    mean = m1 / m0
    return math.log(m0) + shift, mean, m2 / m0 - mean * mean


def write_pbm(path, image) -> None:
    """Plain-text portable bitmap (P1); 1 = lit pixel."""
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    lines = ["P1", f"{w} {h}"]
    lines += [" ".join(str(int(v)) for v in row) for row in image]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_pbm(path) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        tokens = [tok for line in fh for tok in line.split("#")[0].split()]
    if not tokens or tokens[0] != "P1":
        raise ValueError("not a plain PBM (P1) file")
    w, h = int(tokens[1]), int(tokens[2])
    body = "".join(tokens[3:])
    if len(body) != w * h:
        raise ValueError("PBM pixel count does not match its header")
    return np.frombuffer(body.encode("ascii"), dtype=np.uint8).reshape(h, w) - ord("0")

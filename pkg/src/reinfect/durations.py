"""Laws of non-negative random durations.

Every law exposes the survival function, quantile function, mean and the
integrated survival ``J(x) = E[min(X, x)] = int_0^x P(X > u) du``.  The
integrated survival is what the solvers actually consume: cell averages of
survival curves are exact differences of ``J``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, special, stats

from .errors import ConfigError

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre01(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = (0.5 * (x + 1.0), 0.5 * w)
    return _GL_CACHE[n]


def _arr(t):
    return np.asarray(t, dtype=float)


def _x_sf(x, sf):
    """``x * sf(x)`` with the limit 0 at infinity."""
    xf = np.where(np.isfinite(x), x, 0.0)
    with np.errstate(invalid="ignore", over="ignore"):
        return xf * sf(xf)


class Duration:
    """Base class. Subclasses override what they can do in closed form."""

    #: True when the law has no atoms (used to reject hazards with jumps).
    continuous = True

    def sf(self, t):
        raise NotImplementedError

    def cdf(self, t):
        return 1.0 - self.sf(t)

    def pdf(self, t):
        raise NotImplementedError

    def ppf(self, u):
        raise NotImplementedError

    def isf(self, q):
        return self.ppf(1.0 - _arr(q))

    def mean(self) -> float:
        raise NotImplementedError

    def integrated_sf(self, x):
        x = _arr(x)
        out = np.empty_like(x)
        for i, xi in np.ndenumerate(x):
            if xi <= 0:
                out[i] = 0.0
            else:
                out[i] = integrate.quad(lambda u: float(self.sf(u)), 0.0, xi, limit=200)[0]
        return out

    def sample(self, rng: np.random.Generator, size=None):
        return self.ppf(rng.random(size))

    def tail_ppf(self, x, u):
        """Quantile of ``X`` given ``X > x`` at uniform level ``u``."""
        x = _arr(x)
        return np.maximum(self.isf(_arr(u) * self.sf(x)), x)

    def quadrature(self, n: int = 64) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights approximating ``E[g(X)]``."""
        u, w = _gauss_legendre01(n)
        return self.ppf(u), w

    @property
    def support_max(self) -> float:
        return float("inf")

    @property
    def kinks(self) -> tuple[float, ...]:
        """Points where the distribution function is not smooth."""
        return ()


@dataclass(frozen=True)
class Exponential(Duration):
    rate: float

    def __post_init__(self):
        if not self.rate > 0 or not np.isfinite(self.rate):
            raise ConfigError(f"exponential rate must be positive and finite, got {self.rate}")

    def sf(self, t):
        return np.exp(-self.rate * np.maximum(_arr(t), 0.0))

    def pdf(self, t):
        t = _arr(t)
        return np.where(t >= 0, self.rate * np.exp(-self.rate * np.maximum(t, 0.0)), 0.0)

    def ppf(self, u):
        return -np.log1p(-_arr(u)) / self.rate

    def isf(self, q):
        return -np.log(_arr(q)) / self.rate

    def mean(self):
        return 1.0 / self.rate

    def integrated_sf(self, x):
        return -np.expm1(-self.rate * np.maximum(_arr(x), 0.0)) / self.rate

    def tail_ppf(self, x, u):
        return _arr(x) - np.log(_arr(u)) / self.rate


@dataclass(frozen=True)
class Fixed(Duration):
    value: float
    continuous = False

    def __post_init__(self):
        if not (self.value >= 0 and np.isfinite(self.value)):
            raise ConfigError(f"fixed duration must be finite and >= 0, got {self.value}")

    def sf(self, t):
        return (_arr(t) < self.value).astype(float)

    def ppf(self, u):
        return np.full_like(_arr(u), self.value)

    def isf(self, q):
        return np.full_like(_arr(q), self.value)

    def mean(self):
        return float(self.value)

    def integrated_sf(self, x):
        return np.clip(_arr(x), 0.0, self.value)

    def quadrature(self, n: int = 64):
        return np.array([self.value]), np.array([1.0])

    @property
    def support_max(self):
        return float(self.value)

    @property
    def kinks(self):
        return (float(self.value),)


@dataclass(frozen=True)
class Uniform(Duration):
    low: float
    high: float

    def __post_init__(self):
        if not (0 <= self.low < self.high < np.inf):
            raise ConfigError(f"uniform needs 0 <= low < high, got [{self.low}, {self.high}]")

    def sf(self, t):
        return np.clip((self.high - _arr(t)) / (self.high - self.low), 0.0, 1.0)

    @property
    def kinks(self):
        return (float(self.low), float(self.high))

    def pdf(self, t):
        t = _arr(t)
        return np.where((t >= self.low) & (t < self.high), 1.0 / (self.high - self.low), 0.0)

    def ppf(self, u):
        return self.low + _arr(u) * (self.high - self.low)

    def mean(self):
        return 0.5 * (self.low + self.high)

    def integrated_sf(self, x):
        a, b = self.low, self.high
        x = np.clip(_arr(x), 0.0, b)
        inner = np.clip(x - a, 0.0, None)
        return np.minimum(x, a) + inner - inner**2 / (2.0 * (b - a))

    def quadrature(self, n: int = 64):
        u, w = _gauss_legendre01(n)
        return self.ppf(u), w

    @property
    def support_max(self):
        return float(self.high)


@dataclass(frozen=True)
class GammaLaw(Duration):
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ConfigError("gamma law needs positive shape and rate")

    @cached_property
    def _d(self):
        return stats.gamma(a=self.shape, scale=1.0 / self.rate)

    def sf(self, t):
        return self._d.sf(np.maximum(_arr(t), 0.0))

    def pdf(self, t):
        return self._d.pdf(_arr(t))

    def ppf(self, u):
        return self._d.ppf(_arr(u))

    def isf(self, q):
        return self._d.isf(_arr(q))

    def mean(self):
        return self.shape / self.rate

    def integrated_sf(self, x):
        x = np.maximum(_arr(x), 0.0)
        head = special.gammainc(self.shape + 1.0, self.rate * x) * self.shape / self.rate
        return head + _x_sf(x, self.sf)


@dataclass(frozen=True)
class Weibull(Duration):
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ConfigError("weibull law needs positive shape and scale")

    def sf(self, t):
        with np.errstate(over="ignore"):
            return np.exp(-((np.maximum(_arr(t), 0.0) / self.scale) ** self.shape))

    def pdf(self, t):
        t = np.maximum(_arr(t), 0.0)
        k, s = self.shape, self.scale
        with np.errstate(divide="ignore"):
            return (k / s) * (t / s) ** (k - 1) * np.exp(-((t / s) ** k))

    def ppf(self, u):
        return self.scale * (-np.log1p(-_arr(u))) ** (1.0 / self.shape)

    def isf(self, q):
        return self.scale * (-np.log(_arr(q))) ** (1.0 / self.shape)

    def mean(self):
        return self.scale * special.gamma(1.0 + 1.0 / self.shape)

    def integrated_sf(self, x):
        x = np.maximum(_arr(x), 0.0)
        a = 1.0 + 1.0 / self.shape
        head = self.scale * special.gamma(a) * special.gammainc(a, (x / self.scale) ** self.shape)
        return head + _x_sf(x, self.sf)


@dataclass(frozen=True)
class PiecewiseHazard(Duration):
    """Hazard ``rates[i]`` on ``[breaks[i], breaks[i+1])``; the last rate runs forever."""

    breaks: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        b = np.asarray(self.breaks, float)
        r = np.asarray(self.rates, float)
        if b.ndim != 1 or b.size == 0 or b.size != r.size:
            raise ConfigError("piecewise hazard needs equally many breaks and rates")
        if b[0] != 0.0 or np.any(np.diff(b) <= 0):
            raise ConfigError("piecewise hazard breaks must start at 0 and increase")
        if np.any(r < 0) or not np.all(np.isfinite(r)) or r[-1] <= 0:
            raise ConfigError("hazard rates must be finite, >= 0, and the last one > 0")
        object.__setattr__(self, "breaks", tuple(float(v) for v in b))
        object.__setattr__(self, "rates", tuple(float(v) for v in r))

    @cached_property
    def _tab(self):
        b = np.asarray(self.breaks)
        r = np.asarray(self.rates)
        cum = np.concatenate([[0.0], np.cumsum(r[:-1] * np.diff(b))])
        sf_b = np.exp(-cum)
        # J at breaks
        seg = np.where(r[:-1] > 0, sf_b[:-1] * -np.expm1(-r[:-1] * np.diff(b)) / np.where(r[:-1] > 0, r[:-1], 1.0),
                       sf_b[:-1] * np.diff(b))
        jb = np.concatenate([[0.0], np.cumsum(seg)])
        return b, r, cum, sf_b, jb

    def _piece(self, t):
        b = self._tab[0]
        return np.clip(np.searchsorted(b, t, side="right") - 1, 0, b.size - 1)

    def cumulative_hazard(self, t):
        b, r, cum, _, _ = self._tab
        t = np.maximum(_arr(t), 0.0)
        i = self._piece(t)
        return cum[i] + r[i] * (t - b[i])

    def hazard(self, t):
        return np.asarray(self.rates)[self._piece(np.maximum(_arr(t), 0.0))]

    @property
    def kinks(self):
        return self.breaks

    def sf(self, t):
        return np.exp(-self.cumulative_hazard(t))

    def pdf(self, t):
        t = _arr(t)
        return np.where(t >= 0, self.hazard(t) * self.sf(t), 0.0)

    def _inverse_cumulative(self, h):
        b, r, cum, _, _ = self._tab
        i = np.clip(np.searchsorted(cum, h, side="right") - 1, 0, b.size - 1)
        # searchsorted skips zero-rate plateaus, so r[i] > 0 unless h == 0
        rr = r[i]
        return b[i] + np.where(rr > 0, (h - cum[i]) / np.where(rr > 0, rr, 1.0), 0.0)

    def isf(self, q):
        return self._inverse_cumulative(-np.log(_arr(q)))

    def ppf(self, u):
        return self._inverse_cumulative(-np.log1p(-_arr(u)))

    def mean(self):
        return float(self.integrated_sf(np.inf))

    def integrated_sf(self, x):
        b, r, cum, sf_b, jb = self._tab
        x = np.maximum(_arr(x), 0.0)
        i = self._piece(x)
        ri = r[i]
        d = np.where(np.isfinite(x), x - b[i], np.inf)
        safe_r = np.where(ri > 0, ri, 1.0)
        part = np.where(ri > 0, sf_b[i] * -np.expm1(-ri * d) / safe_r, sf_b[i] * d)
        return jb[i] + part


@dataclass(frozen=True)
class Histogram(Duration):
    """Piecewise-uniform density: mass ``weights[i]`` spread on ``[edges[i], edges[i+1])``."""

    edges: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        e = np.asarray(self.edges, float)
        w = np.asarray(self.weights, float)
        if e.ndim != 1 or e.size < 2 or w.size != e.size - 1:
            raise ConfigError("histogram needs len(edges) == len(weights) + 1")
        if e[0] < 0 or np.any(np.diff(e) <= 0):
            raise ConfigError("histogram edges must be >= 0 and increasing")
        if np.any(w < 0) or w.sum() <= 0:
            raise ConfigError("histogram weights must be >= 0 with positive total")
        object.__setattr__(self, "edges", tuple(float(v) for v in e))
        object.__setattr__(self, "weights", tuple(float(v) for v in w / w.sum()))

    @cached_property
    def _tab(self):
        e = np.asarray(self.edges)
        w = np.asarray(self.weights)
        cdf_e = np.concatenate([[0.0], np.cumsum(w)])
        cdf_e[-1] = 1.0
        # J at edges: sf is linear on each bin
        sf_e = 1.0 - cdf_e
        jseg = 0.5 * (sf_e[:-1] + sf_e[1:]) * np.diff(e)
        je = e[0] + np.concatenate([[0.0], np.cumsum(jseg)])
        return e, w, cdf_e, je

    def _bin(self, t):
        e = self._tab[0]
        return np.clip(np.searchsorted(e, t, side="right") - 1, 0, e.size - 2)

    def cdf(self, t):
        e, w, cdf_e, _ = self._tab
        t = _arr(t)
        i = self._bin(t)
        frac = np.clip((t - e[i]) / (e[i + 1] - e[i]), 0.0, 1.0)
        return np.where(t < e[0], 0.0, cdf_e[i] + w[i] * frac)

    def sf(self, t):
        return 1.0 - self.cdf(t)

    def pdf(self, t):
        e, w, _, _ = self._tab
        t = _arr(t)
        i = self._bin(t)
        inside = (t >= e[0]) & (t < e[-1])
        return np.where(inside, w[i] / (e[i + 1] - e[i]), 0.0)

    def ppf(self, u):
        e, w, cdf_e, _ = self._tab
        u = _arr(u)
        i = np.clip(np.searchsorted(cdf_e, u, side="right") - 1, 0, e.size - 2)
        # step over empty bins
        wi = np.where(w[i] > 0, w[i], 1.0)
        frac = np.where(w[i] > 0, (u - cdf_e[i]) / wi, 0.0)
        return e[i] + np.clip(frac, 0.0, 1.0) * (e[i + 1] - e[i])

    def isf(self, q):
        return self.ppf(1.0 - _arr(q))

    def mean(self):
        e, w, _, _ = self._tab
        return float(np.sum(w * 0.5 * (e[:-1] + e[1:])))

    def integrated_sf(self, x):
        e, w, cdf_e, je = self._tab
        x = np.maximum(_arr(x), 0.0)
        xc = np.minimum(x, e[-1])
        i = self._bin(xc)
        s0 = 1.0 - cdf_e[i]
        s1 = 1.0 - self.cdf(xc)
        inside = np.where(xc >= e[0], je[i] + 0.5 * (s0 + s1) * (xc - e[i]), xc)
        return inside

    def quadrature(self, n: int = 8):
        e, w, _, _ = self._tab
        u, gw = _gauss_legendre01(n)
        keep = w > 0
        lo, hi, ww = e[:-1][keep], e[1:][keep], w[keep]
        nodes = (lo[:, None] + (hi - lo)[:, None] * u[None, :]).ravel()
        weights = (ww[:, None] * gw[None, :]).ravel()
        return nodes, weights

    @property
    def support_max(self):
        return float(self.edges[-1])

    @property
    def kinks(self):
        return self.edges


@dataclass(frozen=True)
class Never(Duration):
    """A duration that is almost surely infinite."""

    continuous = False

    def sf(self, t):
        return np.ones_like(_arr(t))

    def ppf(self, u):
        return np.full_like(_arr(u), np.inf)

    def isf(self, q):
        return np.full_like(_arr(q), np.inf)

    def mean(self):
        return float("inf")

    def integrated_sf(self, x):
        return np.maximum(_arr(x), 0.0)


@dataclass(frozen=True)
class Shifted(Duration):
    """``X + c`` for a constant ``c >= 0``."""

    base: Duration
    shift: float

    @property
    def continuous(self):
        return self.base.continuous

    @property
    def kinks(self):
        return tuple(k + self.shift for k in self.base.kinks) + (float(self.shift),)

    def sf(self, t):
        t = _arr(t)
        return np.where(t < self.shift, 1.0, self.base.sf(t - self.shift))

    def pdf(self, t):
        return self.base.pdf(_arr(t) - self.shift)

    def ppf(self, u):
        return self.base.ppf(u) + self.shift

    def isf(self, q):
        return self.base.isf(q) + self.shift

    def mean(self):
        return self.base.mean() + self.shift

    def integrated_sf(self, x):
        x = np.maximum(_arr(x), 0.0)
        return np.minimum(x, self.shift) + self.base.integrated_sf(np.maximum(x - self.shift, 0.0))

    def quadrature(self, n: int = 64):
        x, w = self.base.quadrature(n)
        return x + self.shift, w


@dataclass(frozen=True)
class Hypoexponential(Duration):
    """Sum of two independent exponentials."""

    rate1: float
    rate2: float

    def _equal(self):
        return abs(self.rate1 - self.rate2) <= 1e-9 * max(self.rate1, self.rate2)

    def sf(self, t):
        t = np.maximum(_arr(t), 0.0)
        a, b = self.rate1, self.rate2
        if self._equal():
            return np.exp(-a * t) * (1.0 + a * t)
        return (b * np.exp(-a * t) - a * np.exp(-b * t)) / (b - a)

    def pdf(self, t):
        t = _arr(t)
        a, b = self.rate1, self.rate2
        tt = np.maximum(t, 0.0)
        if self._equal():
            val = a * a * tt * np.exp(-a * tt)
        else:
            val = a * b * (np.exp(-a * tt) - np.exp(-b * tt)) / (b - a)
        return np.where(t >= 0, val, 0.0)

    def mean(self):
        return 1.0 / self.rate1 + 1.0 / self.rate2

    def integrated_sf(self, x):
        x = np.maximum(_arr(x), 0.0)
        a, b = self.rate1, self.rate2
        ea, eb = -np.expm1(-a * x), -np.expm1(-b * x)
        if self._equal():
            xe = _x_sf(x, lambda y: np.exp(-a * y))
            return ea / a + (ea - a * xe) / a
        return (b / a * ea - a / b * eb) / (b - a)

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate1, size) + rng.exponential(1.0 / self.rate2, size)


@dataclass(frozen=True)
class SumOf(Duration):
    """``A + B`` for independent continuous ``B``, by adaptive quadrature."""

    a: Duration
    b: Duration

    def sf(self, t):
        t = _arr(t)
        out = np.empty_like(t)
        for i, ti in np.ndenumerate(t):
            if ti <= 0:
                out[i] = 1.0
                continue
            head = integrate.quad(lambda v: float(self.a.sf(ti - v) * self.b.pdf(v)), 0.0, ti,
                                  limit=200, epsabs=1e-13, epsrel=1e-12)[0]
            out[i] = head + float(self.b.sf(ti))
        return out

    def pdf(self, t):
        t = _arr(t)
        out = np.empty_like(t)
        for i, ti in np.ndenumerate(t):
            out[i] = 0.0 if ti <= 0 else integrate.quad(
                lambda v: float(self.a.pdf(ti - v) * self.b.pdf(v)), 0.0, ti, limit=200)[0]
        return out

    def mean(self):
        return self.a.mean() + self.b.mean()

    def integrated_sf(self, x):
        x = _arr(x)
        out = np.empty_like(x)
        for i, xi in np.ndenumerate(x):
            if xi <= 0:
                out[i] = 0.0
                continue
            conv = integrate.quad(lambda v: float(self.a.integrated_sf(xi - v) * self.b.pdf(v)), 0.0, xi,
                                  limit=200, epsabs=1e-13, epsrel=1e-12)[0]
            out[i] = float(self.b.integrated_sf(xi)) + conv
        return out

    def sample(self, rng, size=None):
        return self.a.sample(rng, size) + self.b.sample(rng, size)


def add(a: Duration, b: Duration) -> Duration:
    """Law of ``A + B`` for independent ``A`` and ``B``, in closed form when possible."""
    if isinstance(a, Never) or isinstance(b, Never):
        return Never()
    if isinstance(a, Fixed) and isinstance(b, Fixed):
        return Fixed(a.value + b.value)
    if isinstance(b, Fixed):
        return a if b.value == 0 else Shifted(a, b.value)
    if isinstance(a, Fixed):
        return b if a.value == 0 else Shifted(b, a.value)
    if isinstance(b, Shifted):
        return Shifted(add(a, b.base), b.shift)
    if isinstance(a, Shifted):
        return Shifted(add(a.base, b), a.shift)
    if isinstance(a, Exponential) and isinstance(b, Exponential):
        return Hypoexponential(a.rate, b.rate)
    return SumOf(a, b)


@dataclass(frozen=True)
class Residual(Duration):
    """Remaining part ``X - A`` of ``X`` given ``X > A``, with ``A`` independent of ``X``.

    ``A`` is the elapsed age; with ``A`` fixed this is the usual conditional tail.
    """

    base: Duration
    age: Duration
    nodes: int = 8

    @cached_property
    def _q(self):
        x, w = self.age.quadrature(self.nodes)
        s = self.base.sf(x)
        if np.any(s <= 0):
            raise ConfigError("initial infection age exceeds the support of the infectious period")
        return x, w, s

    def sf(self, t):
        t = _arr(t)
        if isinstance(self.age, Histogram):
            base = self.base
            return split_expectation(self.age, np.maximum(t, 0.0),
                                     lambda x, ti: base.sf(x + ti) / base.sf(x), base.kinks)
        x, w, s = self._q
        tt = np.maximum(t, 0.0)[..., None]
        return np.sum(w * self.base.sf(x + tt) / s, axis=-1)

    def pdf(self, t):
        t = _arr(t)
        x, w, s = self._q
        return np.sum(w * self.base.pdf(x + t[..., None]) / s, axis=-1)

    def mean(self):
        x, w, s = self._q
        return float(np.sum(w * (self.base.mean() - self.base.integrated_sf(x)) / s))

    def integrated_sf(self, x_):
        x_ = np.maximum(_arr(x_), 0.0)[..., None]
        x, w, s = self._q
        jx = self.base.integrated_sf(x)
        return np.sum(w * (self.base.integrated_sf(x + x_) - jx) / s, axis=-1)


def split_expectation(age: "Histogram", t, g, kinks=(), nodes: int = 6) -> np.ndarray:
    """``E[g(A, t)]`` for each ``t`` with ``A`` piecewise uniform.

    The integral over ``A`` is split wherever ``g`` may jump or kink: at the
    bin edges, at ``kinks`` and at ``kinks - t``.  ``g(x, t)`` takes an array of
    nodes and a scalar time.
    """
    t = _arr(t)
    e = np.asarray(age.edges)
    dens = np.asarray(age.weights) / np.diff(e)
    u, w = _gauss_legendre01(nodes)
    k = np.asarray(kinks, float)
    flat = t.ravel()
    out = np.empty(flat.size)
    for i, ti in enumerate(flat):
        cuts = np.concatenate([e, k, k - ti])
        cuts = np.unique(cuts[(cuts >= e[0]) & (cuts <= e[-1])])
        lo, hi = cuts[:-1], cuts[1:]
        x = (lo[:, None] + (hi - lo)[:, None] * u[None, :])
        b = np.clip(np.searchsorted(e, 0.5 * (lo + hi), side="right") - 1, 0, dens.size - 1)
        ww = (dens[b] * (hi - lo))[:, None] * w[None, :]
        out[i] = float(np.sum(ww * g(x, float(ti))))
    return out.reshape(t.shape)


def residual(base: Duration, age: Duration) -> Duration:
    if isinstance(age, Fixed) and age.value == 0:
        return base
    if isinstance(base, Exponential):
        return base
    return Residual(base, age)


@dataclass(frozen=True)
class SignedOnset:
    """Law of ``O = B - V`` where ``B`` is a delay and ``V`` an independent elapsed age.

    Only the distribution function is needed; it is defined on the whole real line.
    """

    delay: Duration
    elapsed: Duration
    nodes: int = 8

    def cdf(self, u):
        u = _arr(u)
        d, v = self.delay, self.elapsed
        if isinstance(d, Never):
            return np.zeros_like(u)
        if isinstance(d, Shifted) and isinstance(d.base, Fixed):
            d = Fixed(d.base.value + d.shift)
        if isinstance(d, Fixed):
            # P(V >= d - u); V continuous so sf is fine
            return v.sf(d.value - u) * (d.value - u > 0) + (d.value - u <= 0)
        x, w = v.quadrature(self.nodes)
        return np.sum(w * d.cdf(u[..., None] + x), axis=-1)


def mean_or_inf(d: Duration | None) -> float:
    return float("inf") if d is None else d.mean()

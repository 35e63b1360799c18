"""Random infectivity/susceptibility kernels and their laws.

A kernel path is the pair ``(lambda(t), gamma(t))`` attached to one infection,
piecewise constant in the age ``t`` since that infection.  Every supported law
has the same anatomy:

* ``lambda(t) = shape(t) * 1{t < eta}`` with a deterministic shape;
* nothing happens on ``[eta, eta + theta)`` (immune delay ``theta``);
* afterwards ``gamma(t) = gstar * profile(t - eta - theta)`` where ``gstar``
  is drawn from a finite mixture and ``profile`` is deterministic.

The onset time ``zeta`` is the first age where gamma is positive.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import trapezoid

from . import durations as du
from .errors import ConfigError

FAMILIES = ("MarkovSIS", "GeneralSIS", "SIR", "SIRS", "IndicatorGamma", "GradualGamma", "Custom")


@dataclass(frozen=True)
class PiecewiseConstant:
    """Right-continuous step function: ``values[i]`` on ``[breaks[i], breaks[i+1])``."""

    breaks: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        b = np.asarray(self.breaks, float)
        v = np.asarray(self.values, float)
        if b.ndim != 1 or b.size == 0 or b.size != v.size:
            raise ConfigError("step function needs equally many breaks and values")
        if b[0] != 0.0 or np.any(np.diff(b) <= 0) or not np.all(np.isfinite(b)):
            raise ConfigError("step function breaks must start at 0 and strictly increase")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ConfigError("step function values must be finite and >= 0")
        object.__setattr__(self, "breaks", tuple(float(x) for x in b))
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @classmethod
    def constant(cls, value: float) -> "PiecewiseConstant":
        return cls((0.0,), (float(value),))

    @cached_property
    def _b(self):
        return np.asarray(self.breaks)

    @cached_property
    def _v(self):
        return np.asarray(self.values)

    @cached_property
    def _cum(self):
        return np.concatenate([[0.0], np.cumsum(self._v[:-1] * np.diff(self._b))])

    @cached_property
    def _cum2(self):
        # second antiderivative at the breaks
        b, v, c = self._b, self._v, self._cum
        d = np.diff(b)
        return np.concatenate([[0.0], np.cumsum(c[:-1] * d + 0.5 * v[:-1] * d * d)])

    @property
    def is_constant(self) -> bool:
        return len(self.values) == 1 or bool(np.all(self._v == self._v[0]))

    @property
    def max(self) -> float:
        return float(self._v.max())

    @property
    def final(self) -> float:
        return float(self._v[-1])

    def _idx(self, t):
        return np.clip(np.searchsorted(self._b, t, side="right") - 1, 0, self._b.size - 1)

    def __call__(self, t):
        t = np.asarray(t, float)
        return np.where(t < 0, 0.0, self._v[self._idx(t)])

    def integral(self, t):
        """``int_0^t f``, zero for ``t <= 0``."""
        t = np.maximum(np.asarray(t, float), 0.0)
        i = self._idx(t)
        return self._cum[i] + self._v[i] * (t - self._b[i])

    def integral2(self, t):
        """``int_0^t int_0^u f``, zero for ``t <= 0``."""
        t = np.maximum(np.asarray(t, float), 0.0)
        i = self._idx(t)
        d = t - self._b[i]
        return self._cum2[i] + self._cum[i] * d + 0.5 * self._v[i] * d * d

    def first_positive(self) -> float:
        pos = np.nonzero(self._v > 0)[0]
        return float(self._b[pos[0]]) if pos.size else float("inf")

    def after(self, c: float) -> "PiecewiseConstant":
        """The function ``u -> f(c + u)``."""
        keep = self._b > c
        i = int(self._idx(c))
        b = np.concatenate([[0.0], self._b[keep] - c])
        v = np.concatenate([[self._v[i]], self._v[keep]])
        return PiecewiseConstant(tuple(b), tuple(v))

    @property
    def settle(self) -> float:
        """Age from which the function is constant."""
        v = self._v
        diff = np.nonzero(v != v[-1])[0]
        return 0.0 if diff.size == 0 else float(self._b[diff[-1] + 1])

    def is_non_decreasing(self) -> bool:
        return bool(np.all(np.diff(self._v) >= 0))


@dataclass(frozen=True)
class GammaStar:
    """Finite mixture for the long-run susceptibility level."""

    values: tuple[float, ...] = (1.0,)
    weights: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        v = np.asarray(self.values, float)
        w = np.asarray(self.weights, float)
        if v.ndim != 1 or v.size == 0 or v.size != w.size:
            raise ConfigError("gamma_star needs equally many values and weights")
        if np.any(v < 0) or np.any(v > 1):
            raise ConfigError(f"gamma_star values must lie in [0, 1], got {v.tolist()}")
        if np.any(w < 0) or w.sum() <= 0:
            raise ConfigError("gamma_star weights must be >= 0 with positive total")
        w = w / w.sum()
        keep = w > 0
        object.__setattr__(self, "values", tuple(float(x) for x in v[keep]))
        object.__setattr__(self, "weights", tuple(float(x) for x in w[keep]))

    @property
    def v(self) -> np.ndarray:
        return np.asarray(self.values)

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.weights)

    def expected_inverse(self) -> float:
        if np.any(self.v == 0):
            return float("inf")
        return float(np.sum(self.p / self.v))

    def ppf(self, u):
        cw = np.cumsum(self.p)
        cw[-1] = 1.0
        i = np.minimum(np.searchsorted(cw, np.asarray(u, float), side="right"), cw.size - 1)
        return self.v[i]


@dataclass(frozen=True)
class KernelPath:
    """One realized kernel pair."""

    breakpoints: tuple[float, ...]
    lambda_values: tuple[float, ...]
    gamma_values: tuple[float, ...]
    eta: float
    zeta: float

    def _idx(self, t):
        return np.clip(np.searchsorted(np.asarray(self.breakpoints), t, side="right") - 1, 0, None)

    def lam(self, t):
        return np.asarray(self.lambda_values)[self._idx(t)]

    def gam(self, t):
        return np.asarray(self.gamma_values)[self._idx(t)]

    def check(self, lambda_star: float, atol: float = 0.0) -> None:
        """Raise ``AssertionError`` if an invariant fails."""
        b = np.asarray(self.breakpoints)
        lv = np.asarray(self.lambda_values)
        gv = np.asarray(self.gamma_values)
        assert b[0] == 0.0 and np.all(np.diff(b) >= 0)
        assert np.all((lv >= 0) & (lv <= lambda_star + atol))
        assert np.all((gv >= 0) & (gv <= 1))
        assert self.eta <= self.zeta
        assert lv[-1] == 0.0
        live = lv > 0
        if live.any():
            # interval where lambda > 0 must end by eta, gamma must be 0 up to there
            last = np.nonzero(live)[0][-1]
            end = b[last + 1] if last + 1 < b.size else np.inf
            assert end <= self.eta + atol
            assert np.all(gv[: last + 1] == 0)
        pos = gv > 0
        if pos.any():
            assert b[np.nonzero(pos)[0][0]] >= self.zeta - atol


@dataclass
class PathBatch:
    """Many kernel paths padded to a common width (padding breakpoints are +inf)."""

    bp: np.ndarray
    lam: np.ndarray
    gam: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray

    def __len__(self):
        return self.bp.shape[0]

    def row(self, i: int) -> KernelPath:
        finite = np.isfinite(self.bp[i])
        return KernelPath(tuple(self.bp[i][finite].tolist()), tuple(self.lam[i][finite].tolist()),
                          tuple(self.gam[i][finite].tolist()), float(self.eta[i]), float(self.zeta[i]))

    def shifted(self, xi: np.ndarray) -> "PathBatch":
        """Paths seen from age ``xi`` onwards."""
        bp = np.maximum(self.bp - xi[:, None], 0.0)
        return PathBatch(bp, self.lam, self.gam, self.eta - xi, self.zeta - xi)


def _pad(batches: list[PathBatch]) -> list[PathBatch]:
    width = max(b.bp.shape[1] for b in batches)
    out = []
    for b in batches:
        k = width - b.bp.shape[1]
        if k:
            n = len(b)
            b = PathBatch(np.hstack([b.bp, np.full((n, k), np.inf)]),
                          np.hstack([b.lam, np.repeat(b.lam[:, -1:], k, 1)]),
                          np.hstack([b.gam, np.repeat(b.gam[:, -1:], k, 1)]), b.eta, b.zeta)
        out.append(b)
    return out


def concat_batches(batches: list[PathBatch]) -> PathBatch:
    batches = _pad(batches)
    return PathBatch(*(np.concatenate([getattr(b, f) for b in batches])
                       for f in ("bp", "lam", "gam", "eta", "zeta")))


@dataclass(frozen=True)
class KernelLaw:
    """Law of a kernel pair. Build it with one of the family constructors."""

    family: str
    infectivity: PiecewiseConstant
    eta: du.Duration
    theta: du.Duration | None
    gamma_star: GammaStar = field(default_factory=GammaStar)
    profile: PiecewiseConstant = field(default_factory=lambda: PiecewiseConstant.constant(1.0))
    lambda_star: float | None = None
    mc_budget: int = 10_000

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.infectivity.max <= 0:
            raise ConfigError("infectivity shape must be positive somewhere")
        if self.profile.max > 1:
            raise ConfigError("susceptibility profile must stay in [0, 1]")
        lmax = self.infectivity.max
        if self.lambda_star is None:
            object.__setattr__(self, "lambda_star", lmax)
        elif not self.lambda_star >= lmax:
            raise ConfigError(f"lambda_star={self.lambda_star} is below max infectivity {lmax}")
        if self.mc_budget < 1:
            raise ConfigError("mc_budget must be >= 1")

    # -- constructors -------------------------------------------------
    @classmethod
    def markov_sis(cls, lam: float, beta: float, **kw) -> "KernelLaw":
        return cls("MarkovSIS", PiecewiseConstant.constant(lam), du.Exponential(beta), du.Fixed(0.0), **kw)

    @classmethod
    def general_sis(cls, lam: float, eta: du.Duration, **kw) -> "KernelLaw":
        return cls("GeneralSIS", PiecewiseConstant.constant(lam), eta, du.Fixed(0.0), **kw)

    @classmethod
    def sir(cls, lam: float, eta: du.Duration, **kw) -> "KernelLaw":
        return cls("SIR", PiecewiseConstant.constant(lam), eta, None, GammaStar((0.0,), (1.0,)), **kw)

    @classmethod
    def sirs(cls, lam: float, eta: du.Duration, theta: du.Duration, **kw) -> "KernelLaw":
        return cls("SIRS", PiecewiseConstant.constant(lam), eta, theta, **kw)

    @classmethod
    def indicator_gamma(cls, lam, eta: du.Duration, theta: du.Duration, gamma_star: GammaStar, **kw):
        shape = lam if isinstance(lam, PiecewiseConstant) else PiecewiseConstant.constant(lam)
        return cls("IndicatorGamma", shape, eta, theta, gamma_star, **kw)

    @classmethod
    def gradual_gamma(cls, lam, eta: du.Duration, theta: du.Duration, gamma_star: GammaStar,
                      ramp: float, steps: int = 8, **kw) -> "KernelLaw":
        if not ramp > 0 or steps < 1:
            raise ConfigError("ramp duration must be > 0 and steps >= 1")
        k = np.arange(steps)
        # midpoint levels of the linear ramp on each sub-interval
        profile = PiecewiseConstant(tuple(k * ramp / steps) + (ramp,),
                                    tuple((k + 0.5) / steps) + (1.0,))
        shape = lam if isinstance(lam, PiecewiseConstant) else PiecewiseConstant.constant(lam)
        return cls("GradualGamma", shape, eta, theta, gamma_star, profile, **kw)

    @classmethod
    def custom(cls, infectivity: PiecewiseConstant, eta: du.Duration, recovery: PiecewiseConstant,
               gamma_star: GammaStar | None = None, **kw) -> "KernelLaw":
        """``lambda = infectivity * 1{t<eta}``, ``gamma = gstar * recovery(t - eta) * 1{t>=eta}``."""
        return cls("Custom", infectivity, eta, du.Fixed(0.0), gamma_star or GammaStar(), recovery, **kw)

    # -- structure ----------------------------------------------------
    @cached_property
    def onset_offset(self) -> float:
        """Time from the end of the immune delay to the first positive profile value."""
        return self.profile.first_positive()

    @cached_property
    def post_onset(self) -> PiecewiseConstant:
        """Profile as seen from the onset age."""
        c = self.onset_offset
        return self.profile if c == 0 else self.profile.after(c)

    @property
    def never_susceptible(self) -> bool:
        return self.theta is None or not np.isfinite(self.onset_offset) or bool(np.all(self.gamma_star.v == 0))

    @cached_property
    def zeta_law(self) -> du.Duration:
        """Law of the onset age ``eta + theta + c``."""
        if self.never_susceptible:
            return du.Never()
        return du.add(self.eta, self.recovery_delay)

    @cached_property
    def recovery_delay(self) -> du.Duration:
        """Law of ``theta + c``: from the end of infectiousness to onset."""
        if self.never_susceptible:
            return du.Never()
        return du.add(self.theta, du.Fixed(self.onset_offset))

    @property
    def monotone(self) -> bool:
        return self.profile.is_non_decreasing()

    # -- sampling -----------------------------------------------------
    n_uniforms = 3

    def paths_from_uniforms(self, u: np.ndarray) -> PathBatch:
        """Inverse-transform construction; columns are (eta, theta, gstar)."""
        u = np.atleast_2d(u)
        eta = np.asarray(self.eta.ppf(u[:, 0]), float)
        return self._paths(eta, u[:, 1], u[:, 2])

    def _paths(self, eta: np.ndarray, u_theta: np.ndarray, u_g: np.ndarray) -> PathBatch:
        n = eta.size
        lb = np.asarray(self.infectivity.breaks)
        lv = np.asarray(self.infectivity.values)
        bp_l = np.minimum(lb[None, :], eta[:, None])
        lam_l = np.broadcast_to(lv, (n, lv.size))
        if self.theta is None:
            bp = np.hstack([bp_l, eta[:, None]])
            lam = np.hstack([lam_l, np.zeros((n, 1))])
            gam = np.zeros_like(lam)
            return PathBatch(bp, lam, gam, eta, np.full(n, np.inf))
        theta = np.asarray(self.theta.ppf(u_theta), float)
        g = self.gamma_star.ppf(u_g)
        pb = np.asarray(self.profile.breaks)
        pv = np.asarray(self.profile.values)
        start = eta + theta
        bp = np.hstack([bp_l, eta[:, None], start[:, None] + pb[None, :]])
        lam = np.hstack([lam_l, np.zeros((n, 1 + pb.size))])
        gam = np.hstack([np.zeros((n, lb.size + 1)), g[:, None] * pv[None, :]])
        zeta = np.where(g > 0, start + self.onset_offset, np.inf)
        return PathBatch(bp, lam, gam, eta, zeta)

    def sample_batch(self, rng: np.random.Generator, size: int) -> PathBatch:
        return self.paths_from_uniforms(rng.random((size, self.n_uniforms)))

    # -- summaries ----------------------------------------------------
    def survival(self, t):
        return self.eta.sf(t)

    def mean_infectivity(self, t):
        """``E[lambda(t)] = shape(t) * P(eta > t)``."""
        return self.infectivity(t) * self.eta.sf(t)

    def cumulative_infectivity(self, x):
        """``int_0^x E[lambda(t)] dt`` in closed form."""
        x = np.maximum(np.asarray(x, float), 0.0)
        b = np.asarray(self.infectivity.breaks)
        v = np.asarray(self.infectivity.values)
        hi = np.concatenate([b[1:], [np.inf]])
        j = self.eta.integrated_sf
        total = np.zeros_like(x)
        for lo_i, hi_i, v_i in zip(b, hi, v):
            if v_i == 0:
                continue
            top = np.minimum(x, hi_i)
            seg = np.where(top > lo_i, j(top) - j(min(lo_i, np.inf)), 0.0)
            total = total + v_i * seg
        return total

    def mean_infectivity_mc(self, t, rng: np.random.Generator, m: int | None = None):
        """Monte Carlo estimate of ``E[lambda(t)]`` with its standard error."""
        m = m or self.mc_budget
        batch = self.sample_batch(rng, m)
        t = np.atleast_1d(np.asarray(t, float))
        idx = (batch.bp[:, :, None] <= t[None, None, :]).sum(1) - 1
        vals = np.take_along_axis(batch.lam, idx, axis=1)
        return vals.mean(0), vals.std(0, ddof=1) / np.sqrt(m)


@dataclass(frozen=True)
class InitialLaw:
    """Law of the kernel carried at time 0.

    A fraction ``i_fraction`` is infected with elapsed infection age ``xi``;
    a fraction ``r_fraction`` has recovered, ``recovery_age`` ago; the rest is
    fully susceptible (``gamma0 = 1``).
    """

    base: KernelLaw
    i_fraction: float
    xi: du.Duration = field(default_factory=lambda: du.Fixed(0.0))
    r_fraction: float = 0.0
    recovery_age: du.Duration | None = None

    def __post_init__(self):
        if not (0 <= self.i_fraction <= 1 and 0 <= self.r_fraction <= 1):
            raise ConfigError("initial fractions must lie in [0, 1]")
        if self.i_fraction + self.r_fraction > 1 + 1e-12:
            raise ConfigError("i_fraction + r_fraction exceeds 1")
        if self.r_fraction > 0 and self.recovery_age is None:
            object.__setattr__(self, "recovery_age", du.Fixed(0.0))
        if self.i_fraction > 0 and float(self.base.eta.sf(self.xi.support_max)) <= 0:
            raise ConfigError("initial infection ages reach beyond the infectious period support")

    @property
    def s_fraction(self) -> float:
        return max(0.0, 1.0 - self.i_fraction - self.r_fraction)

    @cached_property
    def eta0(self) -> du.Duration:
        """Remaining infectious duration of an initially infected individual."""
        return du.residual(self.base.eta, self.xi)

    def survival(self, t):
        return self.eta0.sf(t)

    @cached_property
    def zeta0(self) -> du.Duration:
        if self.base.never_susceptible:
            return du.Never()
        return du.add(self.eta0, self.base.recovery_delay)

    @cached_property
    def recovered_onset(self) -> du.SignedOnset:
        """Signed time to onset for the initially recovered (negative: already past it)."""
        return du.SignedOnset(self.base.recovery_delay, self.recovery_age or du.Fixed(0.0))

    def mean_infectivity(self, t):
        """``E[lambda0(t) | infected at time 0]``."""
        t = np.asarray(t, float)
        law = self.base
        if law.infectivity.is_constant:
            return law.infectivity.values[0] * self.eta0.sf(t)
        if isinstance(self.xi, du.Histogram):
            kinks = tuple(law.infectivity.breaks) + tuple(law.eta.kinks)
            return du.split_expectation(
                self.xi, t, lambda x, ti: law.infectivity(x + ti) * law.eta.sf(x + ti) / law.eta.sf(x), kinks)
        x, w = self.xi.quadrature(8)
        s = law.eta.sf(x)
        tt = t[..., None] + x
        return np.sum(w * law.infectivity(tt) * law.eta.sf(tt) / s, axis=-1)

    # -- sampling -----------------------------------------------------
    def infected_from_uniforms(self, u: np.ndarray) -> PathBatch:
        """Columns: (xi, eta given xi, theta, gstar)."""
        xi = np.asarray(self.xi.ppf(u[:, 0]), float)
        eta = np.asarray(self.base.eta.tail_ppf(xi, np.maximum(u[:, 1], 1e-300)), float)
        eta = np.maximum(eta, np.nextafter(xi, np.inf))
        return self.base._paths(eta, u[:, 2], u[:, 3]).shifted(xi)

    def recovered_from_uniforms(self, u: np.ndarray) -> PathBatch:
        """Columns: (recovery age, theta, gstar); the paths start at recovery age."""
        law = self.base
        age = np.asarray(self.recovery_age.ppf(u[:, 0]), float)
        n = age.size
        zero = np.zeros(n)
        full = law._paths(zero, u[:, 1], u[:, 2])
        # drop the infectious prefix: keep breakpoints from eta (= 0) on
        k = law.infectivity._b.size
        b = PathBatch(full.bp[:, k:], np.zeros_like(full.lam[:, k:]), full.gam[:, k:], zero, full.zeta)
        b = b.shifted(age)
        b.eta = zero
        b.zeta = np.maximum(b.zeta, 0.0)
        return b

    @staticmethod
    def susceptible_paths(n: int) -> PathBatch:
        z = np.zeros((n, 1))
        return PathBatch(z.copy(), z.copy(), np.ones((n, 1)), np.zeros(n), np.zeros(n))

    def sample_batch(self, rng: np.random.Generator, size: int) -> tuple[PathBatch, np.ndarray]:
        """Sample ``size`` initial paths; also return the group (0=S, 1=I, 2=R)."""
        u = rng.random((size, 5))
        grp = np.where(u[:, 0] < self.i_fraction, 1,
                       np.where(u[:, 0] < self.i_fraction + self.r_fraction, 2, 0))
        parts, order = [], []
        for g in (0, 1, 2):
            idx = np.nonzero(grp == g)[0]
            if idx.size == 0:
                continue
            if g == 0:
                parts.append(self.susceptible_paths(idx.size))
            elif g == 1:
                parts.append(self.infected_from_uniforms(u[idx, 1:5]))
            else:
                parts.append(self.recovered_from_uniforms(u[idx, 1:4]))
            order.append(idx)
        allb = concat_batches(parts)
        inv = np.empty(size, int)
        inv[np.concatenate(order)] = np.arange(size)
        return PathBatch(allb.bp[inv], allb.lam[inv], allb.gam[inv], allb.eta[inv], allb.zeta[inv]), grp


# -- module-level operations ---------------------------------------------

def sample_kernel(law: KernelLaw, rng: np.random.Generator) -> KernelPath:
    return law.sample_batch(rng, 1).row(0)


def sample_initial(init: InitialLaw, rng: np.random.Generator) -> KernelPath:
    batch, _ = init.sample_batch(rng, 1)
    return batch.row(0)


def mean_infectivity(law: KernelLaw, t):
    return law.mean_infectivity(t)


def survival(law: KernelLaw, t):
    return law.survival(t)


def survival_initial(init: InitialLaw, t):
    return init.survival(t)


@dataclass(frozen=True)
class LawStatistics:
    R0: float
    E_inv_gamma_star: float
    E_eta: float
    E_zeta: float
    gamma_star_support: tuple[float, ...]
    equilibrium_available: bool


def r0_by_quadrature(law: KernelLaw, n: int = 200_001) -> float:
    """``int_0^inf E[lambda]`` by composite trapezoid on an adaptively truncated range."""
    t_max = 1.0
    while float(law.mean_infectivity(t_max)) >= 1e-10 * law.lambda_star:
        t_max *= 2.0
        if t_max > 1e9:
            return float("inf")
    # split at known jumps so each panel integrates a continuous function
    jumps = [b for b in law.infectivity.breaks[1:] if b < t_max]
    if isinstance(law.eta, du.Fixed) and law.eta.value < t_max:
        jumps.append(law.eta.value)
    cuts = sorted(set([0.0, t_max] + jumps))
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        x = np.linspace(a, b, max(3, int(n * (b - a) / t_max)))
        xl = x.copy()
        xl[-1] = np.nextafter(b, a)
        y = law.infectivity(xl) * law.eta.sf(xl)
        total += trapezoid(y, x)
    return float(total)


def law_statistics(law: KernelLaw) -> LawStatistics:
    r0 = float(law.cumulative_infectivity(np.inf))
    if law.never_susceptible:
        levels = np.zeros(1)
        e_inv = float("inf")
    else:
        # long-run level of a path is gstar times the final profile value
        levels = law.gamma_star.v * law.post_onset.final
        e_inv = float("inf") if np.any(levels == 0) else float(np.sum(law.gamma_star.p / levels))
    return LawStatistics(
        R0=r0,
        E_inv_gamma_star=e_inv,
        E_eta=law.eta.mean(),
        E_zeta=law.zeta_law.mean(),
        gamma_star_support=tuple(float(v) for v in levels),
        equilibrium_available=bool(np.isfinite(r0)),
    )

"""Reproduction number, harmonic threshold and endemic equilibrium."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import ConfigError, HorizonTooShort
from .grid import TrajectoryGrid
from .kernels import InitialLaw, KernelLaw, law_statistics

DISEASE_FREE = "DiseaseFree"
CRITICAL = "Critical"
ENDEMIC = "Endemic"


def effective_levels(law: KernelLaw) -> tuple[np.ndarray, np.ndarray]:
    """Long-run susceptibility levels and their probabilities."""
    gs = law.gamma_star
    if law.never_susceptible:
        return np.zeros(1), np.ones(1)
    return gs.v * law.post_onset.final, gs.p


def expected_inverse_level(law: KernelLaw) -> float:
    v, p = effective_levels(law)
    if np.any(v == 0):
        return float("inf")
    return float(np.sum(p / v))


def _h_level(x: float, g: float, law: KernelLaw) -> float:
    """``x * int_0^inf exp(-x g R(s)) ds`` for the post-onset profile ``R``."""
    rho = law.post_onset
    b = np.asarray(rho.breaks)
    r = np.asarray(rho.values) * g
    if r[-1] == 0:
        return math.inf if x > 0 or g == 0 else 0.0
    lengths = np.diff(b)
    cum = np.concatenate([[0.0], np.cumsum(r[:-1] * lengths)])
    total = 0.0
    for i, L in enumerate(lengths):
        e0 = math.exp(-x * cum[i])
        total += e0 * (-math.expm1(-x * r[i] * L)) / r[i] if r[i] > 0 else x * L * e0
    total += math.exp(-x * cum[-1]) / r[-1]
    return total


def evaluate_H(law: KernelLaw, x: float, method: str = "exact", samples: int = 20_000, seed: int = 0):
    """``H(x) = x int_0^inf E[exp(-x int_0^s gamma)] ds``.

    ``method="exact"`` integrates each piece in closed form and averages over the
    finite ``gstar`` mixture and the onset law (which only enters through its
    mean).  ``method="mc"`` averages the same per-path integral over sampled
    kernels and returns ``(value, standard_error)``.
    """
    if x < 0:
        raise ConfigError("H is defined for x >= 0")
    if method == "mc":
        return _evaluate_H_mc(law, x, samples, seed)
    if law.never_susceptible:
        return math.inf
    gs = law.gamma_star
    e_zeta = law.zeta_law.mean()
    val = x * e_zeta if x > 0 else 0.0
    for g, p in zip(gs.v, gs.p):
        if g == 0:
            return math.inf
        val += p * _h_level(x, float(g), law)
    return float(val)


def _evaluate_H_mc(law: KernelLaw, x: float, samples: int, seed: int):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(13,)))
    b = law.sample_batch(rng, samples)
    bp, gam = b.bp, b.gam
    nxt = np.concatenate([bp[:, 1:], np.full((samples, 1), np.inf)], axis=1)
    length = nxt - bp
    finite = np.isfinite(length)
    seg = np.where(finite, gam * np.where(finite, length, 0.0), 0.0)
    cum = np.concatenate([np.zeros((samples, 1)), np.cumsum(seg, axis=1)[:, :-1]], axis=1)
    e0 = np.exp(-x * cum)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        part = np.where(finite,
                        np.where(gam > 0, e0 * -np.expm1(-x * gam * np.where(finite, length, 0.0))
                                 / np.where(gam > 0, gam, 1.0), x * np.where(finite, length, 0.0) * e0),
                        np.where(gam > 0, e0 / np.where(gam > 0, gam, 1.0), np.inf))
    per = np.where(np.isfinite(bp), part, 0.0).sum(1)
    return float(per.mean()), float(per.std(ddof=1) / math.sqrt(samples))


@dataclass
class EquilibriumReport:
    R0: float
    E_inv_gamma_star: float
    regime: str
    S_star: float
    F_star: float
    I_star: float
    solver_diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def num(v):
            if isinstance(v, float) and not math.isfinite(v):
                return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
            if isinstance(v, dict):
                return {k: num(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [num(x) for x in v]
            return v

        return {
            "R0": num(float(self.R0)),
            "E_inv_gamma_star": num(float(self.E_inv_gamma_star)),
            "regime": self.regime,
            "S_star": num(float(self.S_star)),
            "F_star": num(float(self.F_star)),
            "I_star": num(float(self.I_star)),
            "solver_diagnostics": num(self.solver_diagnostics),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def classify(R0: float, threshold: float) -> str:
    tol = 1e-9 * max(R0, 1.0)
    if not math.isfinite(threshold) or R0 < threshold - tol:
        return DISEASE_FREE
    if abs(R0 - threshold) <= tol:
        return CRITICAL
    return ENDEMIC


def solve_endemic(law: KernelLaw, xtol: float = 1e-13) -> EquilibriumReport:
    """Classify the regime and, when endemic, solve ``H(F) = R0``."""
    st = law_statistics(law)
    R0 = st.R0
    if not math.isfinite(R0):
        raise ConfigError("R0 is infinite; equilibrium analysis unavailable")
    thr = expected_inverse_level(law)
    regime = classify(R0, thr)
    if regime == DISEASE_FREE:
        return EquilibriumReport(R0, thr, regime, 1.0, 0.0, 0.0,
                                 {"note": "S_star of the disease-free state depends on the initial condition"})
    if regime == CRITICAL:
        return EquilibriumReport(R0, thr, regime, min(1.0, 1.0 / R0), 0.0, 0.0, {})
    if not law.monotone:
        raise ConfigError("endemic equilibrium needs a non-decreasing susceptibility profile")

    def f(x):
        return evaluate_H(law, x) - R0

    hi = 1.0
    doublings = 0
    while f(hi) < 0:
        hi *= 2.0
        doublings += 1
        if doublings > 200:
            raise ConfigError("could not bracket the root of H(x) = R0")
    if f(hi) == 0.0:
        root, iterations = hi, 0
    else:
        root, res = optimize.bisect(f, 0.0, hi, xtol=xtol, rtol=8.9e-16, maxiter=500, full_output=True)
        iterations = int(res.iterations)
    diag = {
        "bracket": [0.0, hi],
        "iterations": iterations,
        "bisection_root": float(root),
        "residual": float(f(root)),
    }
    F_star = float(root)
    if law.post_onset.is_constant:
        closed = (R0 - thr) / st.E_zeta
        diag["closed_form"] = float(closed)
        F_star = float(closed)
    I_star = st.E_eta * F_star / R0
    return EquilibriumReport(R0, thr, ENDEMIC, 1.0 / R0, F_star, I_star, diag)


@dataclass(frozen=True)
class DiseaseFreeLimit:
    S_star: float
    truncation_bound: float


def disease_free_limit_S(grid: TrajectoryGrid, law: KernelLaw, init: InitialLaw,
                         smallness: float = 1e-3) -> DiseaseFreeLimit:
    """Limit mean susceptibility once the epidemic has died out.

    Uses the solver's pooled susceptible masses at ``T`` and counts anybody
    still waiting for their susceptibility to switch on at its final level.
    The bound covers infections still to come, using an exponential fit of
    the decaying force of infection over the last tenth of the horizon.
    """
    meta = grid.meta
    if "S_limit_pooled" not in meta:
        raise ConfigError("grid was not produced by the limit solver")
    F = np.asarray(grid.F_bar)
    FT = float(F[-1])
    if FT > smallness:
        raise HorizonTooShort(f"F(T) = {FT:.3g} is above {smallness:g}; extend the horizon")
    est = meta["S_limit_pooled"] + meta["pending_onset_mass"] * meta["E_gamma_final"]
    if FT == 0.0:
        return DiseaseFreeLimit(float(est), 0.0)
    k = max(2, len(F) // 10)
    tail = F[-k:]
    if np.any(tail <= 0) or tail[0] <= tail[-1]:
        raise HorizonTooShort("force of infection is not decaying at the end of the horizon")
    kappa = math.log(tail[0] / tail[-1]) / (grid.times[-1] - grid.times[-k])
    remaining = FT / kappa
    return DiseaseFreeLimit(float(est), float(est * -math.expm1(-remaining)))


def instability_check(grid: TrajectoryGrid, report: EquilibriumReport, floor: float = 0.05) -> tuple[bool, float]:
    """Whether ``F`` stays above ``floor`` over the whole grid (endemic regime only)."""
    f_min = float(np.min(grid.F_bar))
    if report.regime != ENDEMIC:
        return False, f_min
    return bool(f_min >= floor), f_min

"""Deterministic large-population limit of the reinfection model.

The limit couples the mean susceptibility ``S`` and the force of infection
``F`` through convolutions against the kernel law.  The solver steps on a
uniform grid of width ``dt``:

* infections during ``[t_m, t_{m+1})`` form cohort ``m`` with mass ``w_m``,
  spread uniformly over the cell;
* ``F`` is the convolution of cohort masses with the cell integrals of the
  mean infectivity (exact for piecewise-constant cohort densities);
* individuals whose susceptibility has switched on are held in onset
  cohorts per ``gstar`` level, decaying at rate ``level * F`` while the
  deterministic profile ramps up, then pooled once the profile is flat.

Cohort masses are the exact susceptible outflow over each cell, so the
total population is preserved to rounding.  The reported conservation
residual instead evaluates the conservation identity on the grid values of
``S`` and ``F`` (left-endpoint rule), which measures the time
discretization error.

Onset times follow the law of ``eta + theta + c``.  With ``method="exact"``
its distribution enters through closed-form cell transfers; with
``method="mc"`` it is replaced by ``M`` sampled kernels per cohort.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import durations as du
from .errors import ConfigError, HorizonTooShort, SolverDivergence
from .grid import TrajectoryGrid
from .kernels import InitialLaw, KernelLaw

MEMORY_BUDGET = 1e8


def _phi(x):
    """``(1 - exp(-x)) / x`` with the limit 1 at 0."""
    x = np.asarray(x, float)
    small = x < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, -np.expm1(-safe) / safe)


def _steps(T: float, dt: float) -> int:
    if not (dt > 0 and T > 0):
        raise ConfigError("T and dt must be positive")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigError(f"T={T} is not a multiple of dt={dt}")
    return n


@dataclass
class _Profile:
    """Discretized post-onset susceptibility profile."""

    D: int            # cohorts are pooled once d = m - k reaches D
    decay: np.ndarray  # level used for the decay during a step, index d = 1..D-1
    level: np.ndarray  # level at a grid point, index d = 1..D
    first: float       # mean level seen during the onset step
    final: float


def _discretize_profile(law: KernelLaw, dt: float) -> _Profile:
    rho = law.post_onset
    a_set = rho.settle
    D = int(math.ceil(a_set / dt - 1e-9)) + 1
    d = np.arange(D + 1, dtype=float)
    r1 = rho.integral
    r2 = rho.integral2
    level = np.empty(D + 1)
    level[1:] = (r1(d[1:] * dt) - r1((d[1:] - 1) * dt)) / dt
    level[0] = np.nan
    decay = np.full(D, np.nan)
    if D > 1:
        dd = d[1:D]
        decay[1:] = (r2((dd + 1) * dt) - 2 * r2(dd * dt) + r2((dd - 1) * dt)) / dt**2
    first = float(r2(dt) / (0.5 * dt * dt))
    return _Profile(D, decay, level, first, rho.final)


def _second_difference(J: np.ndarray, dt: float) -> np.ndarray:
    """``E[hat_k(Z)]`` from ``J(i dt)``, ``i = 0..n+1``: the share of a uniform-in-cell
    cohort whose onset lands ``k`` cells later."""
    x = dt * np.arange(J.size)
    IF = x - J
    T = np.empty(J.size - 1)
    T[0] = IF[1] / dt
    T[1:] = (IF[2:] - 2 * IF[1:-1] + IF[:-2]) / dt
    return np.maximum(T, 0.0)


def solve_limit(law: KernelLaw, init: InitialLaw, T: float, dt: float, M: int = 500, seed: int = 0,
                method: str = "auto", M0: int | None = None, residual_ceiling: float = 0.05,
                memory_budget: float = MEMORY_BUDGET) -> TrajectoryGrid:
    """Solve the limit system on ``[0, T]``.

    Parameters
    ----------
    method
        ``"exact"`` uses closed-form onset-time transfers, ``"mc"`` draws ``M``
        kernels per cohort (and ``M0`` per initial group), ``"auto"`` picks exact.
    residual_ceiling
        Raise :class:`SolverDivergence` when the conservation residual exceeds it.
    """
    n = _steps(T, dt)
    if M < 1:
        raise ConfigError("M must be >= 1")
    if method == "auto":
        method = "exact"
    if method not in ("exact", "mc"):
        raise ConfigError(f"unknown method {method!r}")
    M0 = M0 or M
    if method == "mc" and M * (n + 1) > memory_budget:
        raise ConfigError(f"M * steps = {M * (n + 1):.3g} exceeds the memory budget {memory_budget:.3g}")
    if init.base is not law:
        init = InitialLaw(law, init.i_fraction, init.xi, init.r_fraction, init.recovery_age)

    t = dt * np.arange(n + 1)
    ages = dt * np.arange(n + 2)
    g = law.gamma_star.v
    p = law.gamma_star.p
    G = g.size
    active = not law.never_susceptible
    prof = _discretize_profile(law, dt) if active else _Profile(1, np.full(1, np.nan), np.zeros(2), 0.0, 0.0)
    D = prof.D
    I0, R0f, S0 = init.i_fraction, init.r_fraction, init.s_fraction

    dLam = np.diff(law.cumulative_infectivity(ages))
    lam0 = init.mean_infectivity(t) if I0 > 0 else np.zeros(n + 1)

    # future onset inflow per (step, level, column); column 1 is the residual shadow
    inflow = np.zeros((n + 1, G, 2))
    off = D + 1
    Q = np.zeros((n + off + 1, G, 2))
    Y = np.zeros((G, 2))
    YS = S0
    if method == "exact":
        dJeta = np.diff(law.eta.integrated_sf(ages))
        zlaw = law.zeta_law
        Jz = zlaw.integrated_sf(ages) if active else ages.copy()
        dJz = np.diff(Jz)
        Tk = _second_difference(Jz, dt) if active else np.zeros(n + 1)
        I_init = I0 * init.eta0.sf(t) if I0 > 0 else np.zeros(n + 1)
        nz_init = np.zeros(n + 1)
        if I0 > 0:
            cz0 = init.zeta0.cdf(t) if active else np.zeros(n + 1)
            nz_init += I0 * (1.0 - cz0)
            inflow[:-1, :, 0] += I0 * np.diff(cz0)[:, None] * p
        if R0f > 0:
            cO = init.recovered_onset.cdf(t) if active else np.zeros(n + 1)
            nz_init += R0f * (1.0 - cO)
            inflow[:-1, :, 0] += R0f * np.diff(cO)[:, None] * p
            if active:
                ks = np.arange(-1, -D, -1)
                lo = init.recovered_onset.cdf(ks * dt)
                hi = init.recovered_onset.cdf((ks + 1) * dt)
                Q[ks + off, :, 0] = R0f * (hi - lo)[:, None] * p
                Y[:, 0] += R0f * float(init.recovered_onset.cdf((1 - D) * dt)) * p
    else:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
        diff_I = np.zeros((n + 2, 1))
        diff_nz = np.zeros((n + 2, 2))
        I_init = np.zeros(n + 1)
        nz_init = np.zeros(n + 1)
        if I0 > 0:
            u = rng.random((M0, 4))
            b = init.infected_from_uniforms(u)
            atom = np.searchsorted(np.cumsum(p)[:-1], u[:, 3], side="right")
            _scatter_initial(b.eta, b.zeta if active else np.full(M0, np.inf), atom, I0 / M0, dt, n,
                             diff_I, diff_nz, inflow, Q, Y, off, D, active, law)
        if R0f > 0:
            u = rng.random((M0, 3))
            b = init.recovered_from_uniforms(u)
            atom = np.searchsorted(np.cumsum(p)[:-1], u[:, 2], side="right")
            onset = _recovered_onset_signed(init, u) if active else np.full(M0, np.inf)
            _scatter_initial(np.zeros(M0), onset, atom, R0f / M0, dt, n, None, diff_nz, inflow, Q, Y, off, D,
                             active, law)
        I_init = np.cumsum(diff_I[:-1, 0])
        nz_init = np.cumsum(diff_nz[:-1, 0])
        diff_I[:] = 0.0
        diff_nz[:] = 0.0
        cum_p = np.cumsum(p)[:-1]
        c0 = law.onset_offset

    w = np.zeros(n + 1)
    gsh = np.zeros(n + 1)
    S = np.zeros(n + 1)
    F = np.zeros(n + 1)
    sus = np.zeros((n + 1, 2))
    F[0] = I0 * lam0[0]
    S[0] = YS + float(np.sum(g * (prof.final * Y[:, 0])))
    if active and D > 1:
        ks = np.arange(1 - D, 0)
        S[0] += float(np.sum(g[None, :] * prof.level[-ks][:, None] * Q[ks + off, :, 0]))
    sus[0] = Y.sum(0) + Q[: off + 1].sum((0, 1))
    sus[0, 0] += YS

    lev_dec = prof.decay
    lev_S = prof.level
    for m in range(n):
        x = F[m] * dt
        loss = 0.0
        if active:
            km = m - D
            if km >= -off:
                Y += Q[km + off]
                Q[km + off] = 0.0
            lo = max(m - D + 1, -D)
            if lo < m:
                d = m - np.arange(lo, m)
                fac = np.exp(-g[None, :] * lev_dec[d][:, None] * x)
                blk = Q[lo + off: m + off]
                before = blk[..., 0].sum()
                blk *= fac[..., None]
                loss += before - blk[..., 0].sum()
            fY = np.exp(-g * prof.final * x)
            loss += float(np.sum(Y[:, 0] * (1.0 - fY)))
            Y *= fY[:, None]
        eS = math.exp(-x)
        loss += YS * (1.0 - eS)
        YS *= eS

        if active:
            fE = _phi(g * prof.first * x)
            if method == "exact" and m > 0:
                tk = Tk[m:0:-1]
                inflow[m, :, 0] += float(np.dot(w[:m], tk)) * p
                inflow[m, :, 1] += float(np.dot(gsh[:m], tk)) * p
            A = inflow[m]
            Q[m + off] = A * fE[:, None]
            loss += float(np.sum(A[:, 0] * (1.0 - fE)))
            if method == "exact":
                share = Tk[0] * p
            else:
                born = _sample_cohort(law, rng, M, cum_p, c0)
                eta_s, zeta_s, atom_s, u_b = born
                births = t[m] + u_b * dt
                k_on = np.floor((births + zeta_s) / dt)
                same = k_on == m
                share = np.bincount(atom_s[same], minlength=G) / M
            c = float(np.sum(share * (1.0 - fE)))
            w[m] = loss / (1.0 - c)
            gsh[m] = S[m] * F[m] * dt - w[m]
            Q[m + off, :, 0] += w[m] * share * fE
            Q[m + off, :, 1] += gsh[m] * share * fE
            if method == "mc":
                fut = (~same) & (k_on <= n)
                kk = k_on[fut].astype(int)
                np.add.at(inflow, (kk, atom_s[fut], 0), w[m] / M)
                np.add.at(inflow, (kk, atom_s[fut], 1), gsh[m] / M)
        else:
            w[m] = loss
            gsh[m] = S[m] * F[m] * dt - w[m]
            if method == "mc":
                eta_s, zeta_s, atom_s, u_b = _sample_cohort(law, rng, M, None, 0.0)
                births = t[m] + u_b * dt
        if method == "mc":
            wi = np.array([w[m], gsh[m]]) / M
            e_inf = np.minimum(np.ceil((births + eta_s) / dt), n + 1).astype(int)
            np.add.at(diff_I[:, 0], e_inf, -wi[0])
            diff_I[m + 1, 0] += w[m]
            if active:
                e_nz = np.minimum(np.ceil(np.where(np.isfinite(zeta_s), (births + zeta_s) / dt, n + 1)),
                                  n + 1).astype(int)
                np.add.at(diff_nz[:, 0], e_nz, -wi[0])
                np.add.at(diff_nz[:, 1], e_nz, -wi[1])
            diff_nz[m + 1] += [w[m], gsh[m]]

        F[m + 1] = I0 * lam0[m + 1] + float(np.dot(w[: m + 1], dLam[m::-1])) / dt
        s_next = YS
        if active:
            s_next += float(np.sum(g * prof.final * Y[:, 0]))
            lo = max(m + 1 - D, -D)
            d = m + 1 - np.arange(lo, m + 1)
            blk = Q[lo + off: m + 1 + off]
            s_next += float(np.sum(g[None, :] * lev_S[d][:, None] * blk[..., 0]))
            sus[m + 1] = Y.sum(0) + blk.sum((0, 1))
        sus[m + 1, 0] += YS
        S[m + 1] = s_next

    if method == "exact":
        I_coh = np.zeros(n + 1)
        nz_coh = np.zeros((n + 1, 2))
        I_coh[1:] = np.convolve(w[:n], dJeta[:n])[:n] / dt
        nz_coh[1:, 0] = np.convolve(w[:n], dJz[:n])[:n] / dt
        nz_coh[1:, 1] = np.convolve(gsh[:n], dJz[:n])[:n] / dt
    else:
        I_coh = np.cumsum(diff_I[:-1, 0])
        nz_coh = np.cumsum(diff_nz[:-1], axis=0)
    I_bar = I_init + I_coh
    notyet = nz_init + nz_coh[:, 0]
    U_bar = notyet - I_bar + sus[:, 0]
    residual = np.abs(nz_coh[:, 1] + sus[:, 1])

    meta = {
        "method": method,
        "M": M if method == "mc" else 0,
        "cohort_mass": w,
        "balance": I_bar + U_bar,
        "S_limit_pooled": YS + float(np.sum(g * prof.final * (Y[:, 0] + Q[..., 0].sum(0)))) if active else YS,
        "pending_onset_mass": float(notyet[-1]),
        "E_gamma_final": float(np.sum(p * g) * prof.final) if active else 0.0,
    }
    grid = TrajectoryGrid(dt, t, F, S, I_bar, U_bar, residual, meta)
    worst = float(residual.max())
    if worst > residual_ceiling:
        raise SolverDivergence(f"conservation residual {worst:.3g} exceeds ceiling {residual_ceiling:.3g}; "
                               "reduce dt or increase M")
    return grid


def _sample_cohort(law: KernelLaw, rng, M: int, cum_p, c0: float):
    u = rng.random((M, 4))
    eta = np.asarray(law.eta.ppf(u[:, 0]), float)
    if cum_p is None:
        return eta, np.full(M, np.inf), np.zeros(M, int), u[:, 3]
    theta = np.asarray(law.theta.ppf(u[:, 1]), float)
    atom = np.searchsorted(cum_p, u[:, 2], side="right")
    return eta, eta + theta + c0, atom, u[:, 3]


def _recovered_onset_signed(init: InitialLaw, u: np.ndarray) -> np.ndarray:
    law = init.base
    age = np.asarray(init.recovery_age.ppf(u[:, 0]), float)
    theta = np.asarray(law.theta.ppf(u[:, 1]), float)
    return theta + law.onset_offset - age


def _scatter_initial(eta, onset, atom, weight, dt, n, diff_I, diff_nz, inflow, Q, Y, off, D, active, law):
    if diff_I is not None:
        e = np.minimum(np.ceil(eta / dt), n + 1).astype(int)
        diff_I[0, 0] += weight * eta.size
        np.add.at(diff_I[:, 0], e, -weight)
    diff_nz[0, 0] += weight * onset.size
    if not active:
        return
    fin = np.isfinite(onset)
    e = np.where(fin, np.ceil(np.where(fin, onset, 0.0) / dt), n + 1)
    e = np.clip(e, 0, n + 1).astype(int)
    np.add.at(diff_nz[:, 0], e, -weight)
    k = np.floor(np.where(fin, onset, np.inf) / dt)
    pos = fin & (k >= 0) & (k <= n)
    np.add.at(inflow, (k[pos].astype(int), atom[pos], 0), weight)
    neg = fin & (k < 0)
    old = neg & (k <= -D)
    np.add.at(Y, (atom[old], 0), weight)
    mid = neg & ~old
    np.add.at(Q, (k[mid].astype(int) + off, atom[mid], 0), weight)


def conservation_check(grid: TrajectoryGrid) -> float:
    """Largest conservation residual over the grid."""
    if grid.conservation_residual is None:
        raise ConfigError("grid carries no conservation residual")
    return float(np.max(grid.conservation_residual))


def auxiliary_fixed_point_check(grid: TrajectoryGrid, law: KernelLaw, init: InitialLaw, K: int = 10_000,
                                seed: int = 0) -> np.ndarray:
    """z-scores of a Monte Carlo estimate of ``E[lambda_{A(t)}(age(t))]`` against ``F(t)``.

    ``K`` independent single individuals are infected at rate ``gamma * m(t)``
    where ``m`` is the grid force of infection held constant on each cell.
    Grid points where the estimate has zero variance get a z-score of 0 when
    it matches ``F`` exactly and ``inf`` otherwise.
    """
    if K < 100:
        warnings.warn("K < 100 gives unreliable z-scores", stacklevel=2)
    if init.base is not law:
        init = InitialLaw(law, init.i_fraction, init.xi, init.r_fraction, init.recovery_age)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    dt, times = grid.dt, grid.times
    n = len(times) - 1
    T = float(times[-1])
    Fg = np.asarray(grid.F_bar, float)
    m_max = float(Fg.max())

    paths, _ = init.sample_batch(rng, K)
    bp, lam, gam = paths.bp, paths.lam, paths.gam
    start = np.zeros(K)
    t_now = np.zeros(K)
    acc1 = np.zeros(n + 2)
    acc2 = np.zeros(n + 2)

    def deposit(idx, t_end):
        # add lambda and lambda^2 of each finished segment onto the grid points it covers
        if idx.size == 0:
            return
        a = start[idx, None] + bp[idx]
        b = np.concatenate([a[:, 1:], np.full((idx.size, 1), np.inf)], axis=1)
        b = np.minimum(b, t_end[:, None])
        a = np.minimum(a, t_end[:, None])
        lo = np.clip(np.ceil(a / dt - 1e-12), 0, n + 1).astype(int)
        hi = np.clip(np.ceil(b / dt - 1e-12), 0, n + 1).astype(int)
        v = lam[idx]
        keep = (hi > lo) & (v > 0)
        np.add.at(acc1, lo[keep], v[keep])
        np.add.at(acc1, hi[keep], -v[keep])
        np.add.at(acc2, lo[keep], v[keep] ** 2)
        np.add.at(acc2, hi[keep], -v[keep] ** 2)

    alive = np.arange(K)
    if m_max > 0:
        while alive.size:
            t_now[alive] += rng.exponential(1.0 / m_max, alive.size)
            done = t_now[alive] > T
            deposit(alive[done], np.full(done.sum(), T + dt))
            alive = alive[~done]
            if alive.size == 0:
                break
            tc = t_now[alive]
            age = tc - start[alive]
            j = (bp[alive] <= age[:, None]).sum(1) - 1
            gv = gam[alive, j]
            mv = Fg[np.minimum((tc / dt).astype(int), n)]
            hit = rng.random(alive.size) * m_max < gv * mv
            if np.any(gv * mv > m_max * (1 + 1e-12)):
                raise AssertionError("auxiliary acceptance probability above one")
            idx = alive[hit]
            if idx.size:
                deposit(idx, t_now[idx])
                fresh = law.sample_batch(rng, idx.size)
                width = max(bp.shape[1], fresh.bp.shape[1])
                bp, lam, gam = _widen(bp, lam, gam, width)
                fb, fl, fg = _widen(fresh.bp, fresh.lam, fresh.gam, width)
                bp[idx], lam[idx], gam[idx] = fb, fl, fg
                start[idx] = t_now[idx]
    else:
        deposit(alive, np.full(K, T + dt))
    s1 = np.cumsum(acc1)[: n + 1]
    s2 = np.cumsum(acc2)[: n + 1]
    mean = s1 / K
    var = np.maximum(s2 / K - mean**2, 0.0)
    se = np.sqrt(var / (K - 1))
    diff = mean - Fg
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0),
                     np.where(np.abs(diff) <= 1e-12 * max(1.0, m_max), 0.0, np.inf))
    return z


def _widen(bp, lam, gam, width):
    k = width - bp.shape[1]
    if k <= 0:
        return bp, lam, gam
    n = bp.shape[0]
    return (np.hstack([bp, np.full((n, k), np.inf)]), np.hstack([lam, np.repeat(lam[:, -1:], k, 1)]),
            np.hstack([gam, np.repeat(gam[:, -1:], k, 1)]))

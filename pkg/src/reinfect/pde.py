"""Age-structured SIRS system solved along characteristics.

State at time ``t``: never-infected susceptibles ``S``, the density of
infected individuals over infection age ``I(t, a)`` and the density of
recovered individuals over recovery age ``R(t, a)``.  Individuals recovered
``a`` ago are reinfected at rate ``gamma_tilde(a) * F(t)``; newly infected
ones arrive at rate ``S_frak(t) * F(t)``.

The march keeps masses on age cells of width ``dt``.  A birth cohort of rate
``B`` spread over one step occupies infection-age cell ``j`` with mass
``B * int_cell Fc``, which is the characteristic solution integrated over the
cell, so nothing is differenced.  Initially infected mass follows the
conditional survival ``Fc(a + t) / Fc(a)`` along its own characteristic.
Recovered cells shift one cell per step and lose mass at the rate their
susceptibility allows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from . import durations as du
from .errors import ConfigError, GridMismatch
from .grid import write_columns
from .kernels import InitialLaw, KernelLaw, PiecewiseConstant

PDE_COLUMNS = ("t", "S_bar", "I_total", "R_total", "S_frak", "F_frak", "mass_residual")
TAIL = 1e-10
GL_NODES = 4


def _mass(density: PiecewiseConstant) -> float:
    if density.final != 0.0:
        raise ConfigError("initial densities must vanish beyond their last break")
    return float(density.integral(density.breaks[-1]))


@dataclass(frozen=True)
class PdeScenario:
    lambda_tilde: PiecewiseConstant
    gamma_tilde: PiecewiseConstant
    hazard: du.PiecewiseHazard
    S0: float
    I0_density: PiecewiseConstant
    R0_density: PiecewiseConstant = field(default_factory=lambda: PiecewiseConstant.constant(0.0))
    snapshot_times: tuple[float, ...] = ()

    def __post_init__(self):
        if not isinstance(self.hazard, du.PiecewiseHazard):
            raise ConfigError("hazard must be piecewise constant (atoms are not supported)")
        if self.gamma_tilde.max > 1:
            raise ConfigError("gamma_tilde must stay in [0, 1]")
        if not 0 <= self.S0 <= 1:
            raise ConfigError("S0 must lie in [0, 1]")
        total = self.S0 + self.I_mass + self.R_mass
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"S0 + int I0 + int R0 = {total!r}, expected 1")

    @property
    def I_mass(self) -> float:
        return _mass(self.I0_density)

    @property
    def R_mass(self) -> float:
        return _mass(self.R0_density)


def _density_law(density: PiecewiseConstant) -> du.Histogram:
    b = np.asarray(density.breaks)
    v = np.asarray(density.values)
    return du.Histogram(tuple(b), tuple(v[:-1] * np.diff(b)))


def kernel_laws(scn: PdeScenario) -> tuple[KernelLaw, InitialLaw]:
    """Kernel and initial laws with ``lambda = lambda_tilde 1{t<eta}``, ``gamma = gamma_tilde(t-eta) 1{t>eta}``."""
    law = KernelLaw.custom(scn.lambda_tilde, scn.hazard, scn.gamma_tilde)
    i_mass, r_mass = scn.I_mass, scn.R_mass
    xi = _density_law(scn.I0_density) if i_mass > 0 else du.Fixed(0.0)
    rec = _density_law(scn.R0_density) if r_mass > 0 else None
    return law, InitialLaw(law, i_mass, xi, r_mass, rec)


@dataclass
class PdeState:
    """Cell masses at one time; cell ``j`` covers ages ``[j dt, (j+1) dt)``."""

    t: float
    dt: float
    S_bar: float
    I_cells: np.ndarray
    R_cells: np.ndarray
    I_lambda: np.ndarray        # int_cell lambda_tilde * I
    R_gamma: np.ndarray         # cell average of gamma_tilde
    R_boundary: float = float("nan")

    @property
    def ages(self) -> np.ndarray:
        return self.dt * np.arange(max(self.I_cells.size, self.R_cells.size))

    def densities(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = max(self.I_cells.size, self.R_cells.size)
        i = np.zeros(k)
        r = np.zeros(k)
        i[: self.I_cells.size] = self.I_cells / self.dt
        r[: self.R_cells.size] = self.R_cells / self.dt
        return (np.arange(k) + 0.5) * self.dt, i, r

    @property
    def mass(self) -> float:
        return self.S_bar + float(self.I_cells.sum()) + float(self.R_cells.sum())


def aggregates_from_pde(state: PdeState) -> tuple[float, float]:
    """``(S_frak, F_frak)``: mean susceptibility and force of infection."""
    s = state.S_bar + float(np.dot(state.R_gamma[: state.R_cells.size], state.R_cells))
    return s, float(state.I_lambda.sum())


@dataclass
class PdeSolution:
    dt: float
    t: np.ndarray
    S_bar: np.ndarray
    I_total: np.ndarray
    R_total: np.ndarray
    S_frak: np.ndarray
    F_frak: np.ndarray
    mass_residual: np.ndarray
    R_boundary: np.ndarray          # recovery flux from the cell march
    R_boundary_formula: np.ndarray  # same flux from the characteristic formula
    truncated_mass: float
    final: PdeState
    snapshots: list = field(default_factory=list)

    def columns(self) -> dict:
        return {"t": self.t, "S_bar": self.S_bar, "I_total": self.I_total, "R_total": self.R_total,
                "S_frak": self.S_frak, "F_frak": self.F_frak, "mass_residual": self.mass_residual}

    def write_csv(self, path) -> None:
        write_columns(path, self.columns())

    def write_snapshots(self, path) -> None:
        cols = {"t": [], "age": [], "I_density": [], "R_density": []}
        for st in self.snapshots:
            a, i, r = st.densities()
            cols["t"].extend([st.t] * a.size)
            cols["age"].extend(a.tolist())
            cols["I_density"].extend(i.tolist())
            cols["R_density"].extend(r.tolist())
        write_columns(path, cols)


def _cell_int(f, edges):
    return np.diff(f(edges))


def _weighted_sf_integral(shape: PiecewiseConstant, hz: du.PiecewiseHazard, x: np.ndarray) -> np.ndarray:
    """``int_0^x shape(a) Fc(a) da``."""
    b = np.asarray(shape.breaks)
    v = np.asarray(shape.values)
    hi = np.concatenate([b[1:], [np.inf]])
    out = np.zeros_like(x)
    for lo_i, hi_i, v_i in zip(b, hi, v):
        if v_i:
            top = np.clip(x, lo_i, hi_i)
            out += v_i * (hz.integrated_sf(top) - hz.integrated_sf(lo_i))
    return out


class _InitialInfected:
    """Initially infected mass carried along characteristics ``a = a0 + t``."""

    def __init__(self, scn: PdeScenario, h: float):
        dens = scn.I0_density
        end = dens.breaks[-1]
        k = int(math.ceil(end / h - 1e-9)) if scn.I_mass > 0 else 0
        edges = h * np.arange(k + 1)
        self.mass0 = _cell_int(dens.integral, edges)
        self.k = k
        self.h = h
        self.hz = scn.hazard
        self.lam = scn.lambda_tilde
        self.constant = len(scn.hazard.rates) == 1
        u, w = np.polynomial.legendre.leggauss(GL_NODES)
        self.nodes = edges[:-1, None] + h * 0.5 * (u[None, :] + 1.0)
        self.w = 0.5 * w
        self.Fc0 = self.hz.sf(self.nodes)

    def at(self, t: float):
        """Cell masses, lambda-weighted masses and recovery flux at time ``t``."""
        if self.k == 0:
            z = np.zeros(0)
            return z, z, 0.0
        a = self.nodes + t
        if self.constant:
            # the survival ratio is exp(-beta t) on every characteristic
            e = math.exp(-self.hz.rates[0] * t)
            ratio = np.full(self.nodes.shape, e)
            I = self.mass0 * e
        else:
            ratio = self.hz.sf(a) / self.Fc0
            I = self.mass0 * (ratio @ self.w)
        IL = self.mass0 * ((self.lam(a) * ratio) @ self.w)
        rec = float(np.sum(self.mass0 * ((self.hz.hazard(a) * ratio) @ self.w)))
        return I, IL, rec

    def density(self, t: float) -> np.ndarray:
        """Point values ``I0(a0) Fc(a0 + t) / Fc(a0)`` at cell midpoints ``a0``."""
        mid = self.h * (np.arange(self.k) + 0.5)
        d0 = self.mass0 / self.h
        if self.constant:
            return d0 * math.exp(-self.hz.rates[0] * t)
        return d0 * self.hz.sf(mid + t) / self.hz.sf(mid)


def _steps(T: float, dt: float) -> int:
    if not (T > 0 and dt > 0):
        raise ConfigError("T and dt must be positive")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigError(f"T={T} is not a multiple of dt={dt}")
    return n


def solve_pde(scn: PdeScenario, T: float, dt: float, mass_tolerance: float = 1e-3,
              snapshot_times=None) -> PdeSolution:
    n = _steps(T, dt)
    h = dt
    hz = scn.hazard
    # birth cohorts are dropped once their survival falls below TAIL
    W = 1
    while hz.sf(W * h) >= TAIL and W < n + 1:
        W *= 2
    W = min(W, n + 1)
    edges = h * np.arange(W + 1)
    dJ = _cell_int(hz.integrated_sf, edges)
    dJL = np.diff(_weighted_sf_integral(scn.lambda_tilde, hz, edges))
    dFc = -np.diff(hz.sf(edges))

    init = _InitialInfected(scn, h)
    rd = scn.R0_density
    k_r0 = int(math.ceil(rd.breaks[-1] / h - 1e-9)) if scn.R_mass > 0 else 0
    NR = n + k_r0 + 1
    redges = h * np.arange(NR + 2)
    R = np.zeros(NR)
    R[:k_r0] = _cell_int(rd.integral, redges[: k_r0 + 1])
    gt = scn.gamma_tilde
    g_cell = _cell_int(gt.integral, redges[: NR + 1]) / h
    # average level seen by a cell while it moves one cell along
    i2 = gt.integral2(redges)
    g_move = (i2[2:] - 2 * i2[1:-1] + i2[:-2]) / (h * h)

    snap_steps = {int(round(s / h)) for s in (snapshot_times if snapshot_times is not None
                                               else scn.snapshot_times) if 0 <= s <= T}
    B = np.zeros(n + 1)
    S = scn.S0
    t = h * np.arange(n + 1)
    out = np.zeros((n + 1, 7))
    rb = np.zeros(n + 1)
    tail_J = float(hz.mean() - hz.integrated_sf(W * h))
    rb_formula = np.zeros(n + 1)
    truncated = 0.0
    snaps = []

    def births(m):
        k = min(m, W)
        return B[m - 1::-1][:k] if k else B[:0], k

    def state_at(m, S_m):
        b, k = births(m)
        I0c, IL0c, rec0 = init.at(t[m])
        nb = max(k, I0c.size + m if init.k else 0)
        I = np.zeros(nb)
        IL = np.zeros(nb)
        I[:k] = b * dJ[:k]
        IL[:k] = b * dJL[:k]
        if init.k:
            I[m: m + init.k] += I0c
            IL[m: m + init.k] += IL0c
        flux = float(np.dot(b, dFc[:k])) + rec0
        return PdeState(float(t[m]), h, S_m, I, R, IL, g_cell, flux)

    st = state_at(0, S)
    for m in range(n + 1):
        s_frak, f_frak = aggregates_from_pde(st)
        I_tot = float(st.I_cells.sum())
        R_tot = float(R.sum())
        resid = S + I_tot + R_tot - 1.0
        out[m] = (t[m], S, I_tot, R_tot, s_frak, f_frak, resid)
        rb[m] = st.R_boundary
        if m in snap_steps:
            snaps.append(st)
        if abs(resid) > mass_tolerance:
            raise ConfigError(f"mass leaked by {resid:.3g} at t={t[m]:.6g}; reduce dt or widen the age window")
        if m == n:
            break
        x = f_frak * h
        eS = math.exp(-x)
        dec = np.exp(-g_move[:NR] * x)
        out_R = float(np.dot(R, 1.0 - dec))
        B[m] = (S * (1.0 - eS) + out_R) / h
        S *= eS
        moved = R * dec
        if m >= W:
            truncated += float(B[m - W]) * tail_J
        nxt = state_at(m + 1, S)
        rho = I_tot + B[m] * h - float(nxt.I_cells.sum())
        R[1:] = moved[:-1]
        R[0] = max(rho, 0.0)
        if m + 1 in snap_steps:
            nxt.R_cells = R.copy()
        st = nxt

    # recovery flux from the characteristic formula, for comparison with the march
    Bnode = out[:, 4] * out[:, 5]
    f_node = hz.pdf(t)
    for m in range(n + 1):
        conv = 0.0
        if m:
            y = f_node[: m + 1] * Bnode[m::-1]
            conv = h * (y.sum() - 0.5 * (y[0] + y[-1]))
        rb_formula[m] = conv + _initial_recovery_formula(scn, t[m], h)

    final = st
    return PdeSolution(h, t, out[:, 1].copy(), out[:, 2].copy(), out[:, 3].copy(), out[:, 4].copy(),
                       out[:, 5].copy(), out[:, 6].copy(), rb, rb_formula, truncated, final, snaps)


def _initial_recovery_formula(scn: PdeScenario, t: float, h: float) -> float:
    """``int_t^inf I0(a - t) f(a) / Fc(a - t) da`` by the trapezoid rule."""
    if scn.I_mass == 0:
        return 0.0
    dens = scn.I0_density
    end = dens.breaks[-1]
    k = max(int(math.ceil(end / h)), 1)
    a0 = np.linspace(0.0, end, 4 * k + 1)
    # density at left limits so the right edge of the support contributes zero
    d = dens(np.maximum(a0 - 1e-12 * max(end, 1.0), 0.0))
    d[0] = dens(0.0)
    hz = scn.hazard
    y = d * hz.pdf(a0 + t) / hz.sf(a0)
    return float(trapezoid(y, a0))


def crosscheck_against_limit(scn: PdeScenario, T: float, dt: float, **kw) -> dict:
    """Sup-norm gaps between the PDE aggregates and the integral-equation limit."""
    from .limit import solve_limit

    law, init = kernel_laws(scn)
    sol = solve_pde(scn, T, dt)
    lim = solve_limit(law, init, T, dt, **kw)
    if lim.times.size != sol.t.size or not np.allclose(lim.times, sol.t, atol=1e-9):
        raise GridMismatch("PDE and limit grids differ")
    return {
        "S_frak": float(np.max(np.abs(sol.S_frak - lim.S_bar))),
        "F_frak": float(np.max(np.abs(sol.F_frak - lim.F_bar))),
        "pde": sol,
        "limit": lim,
    }

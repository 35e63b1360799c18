"""Multi-run comparisons: particle-system convergence sweeps and PDE cross-checks."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .abm import coupling_distance, init_population, run
from .errors import ConfigError
from .limit import solve_limit
from .scenario import Scenario, grid_every

SLOPE_BAND = (-0.65, -0.35)
MIN_REPLICATIONS = 10


def replication_seed(seed: int, n: int, r: int) -> int:
    return int(np.random.SeedSequence([seed, n, r]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def _limit_on_grid(scn: Scenario, law, init, T: float, seed: int):
    lim = solve_limit(law, init, T, scn.dt, M=scn.M, seed=seed, method=scn.method)
    return lim.subsample(grid_every(scn, scn.abm.grid_dt))


def _one(args):
    data, n, seed, T = args
    scn = Scenario.model_validate(data)
    law = scn.law()
    init = scn.initial_law(law)
    grid, _ = run(init_population(n, law, init, seed), T, scn.abm.grid_dt, log_limit=0)
    return grid


def _errors(grid, lim) -> tuple[float, float]:
    grid.check_same_grid(lim)
    return (float(np.max(np.abs(grid.F_bar - lim.F_bar))), float(np.max(np.abs(grid.I_bar - lim.I_bar))))


def converge(scn: Scenario, seed_offset: int = 0, threads: int = 1) -> dict:
    """Mean sup-norm gap between particle runs and the limit for each population size."""
    Ns = sorted(scn.abm.N)
    R = scn.abm.replications
    if len(Ns) < 3 or Ns[-1] < 100 * Ns[0]:
        raise ConfigError("abm.N needs at least three sizes spanning two decades")
    if R < MIN_REPLICATIONS:
        raise ConfigError(f"abm.replications={R} is below the minimum of {MIN_REPLICATIONS}")
    seed = scn.seed + seed_offset
    T = scn.abm.T or scn.T
    law = scn.law()
    init = scn.initial_law(law)
    lim = _limit_on_grid(scn, law, init, T, seed)
    data = scn.model_dump(mode="json")
    jobs = [(data, n, replication_seed(seed, n, r), T) for n in Ns for r in range(R)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            grids = list(pool.map(_one, jobs))
    else:
        grids = [_one(j) for j in jobs]
    err = np.array([_errors(g, lim) for g in grids]).reshape(len(Ns), R, 2)
    mean_F = err[:, :, 0].mean(1)
    mean_I = err[:, :, 1].mean(1)
    # slope of the coupling distance (sup of both gaps) against N
    sup = err.max(2).mean(1)
    if np.all(sup == 0):
        slope, ok = None, True
    elif np.any(sup == 0):
        slope, ok = None, False
    else:
        slope = float(np.polyfit(np.log(Ns), np.log(sup), 1)[0])
        ok = bool(SLOPE_BAND[0] <= slope <= SLOPE_BAND[1])
    return {"N": [int(n) for n in Ns], "mean_error_F": mean_F.tolist(), "mean_error_I": mean_I.tolist(),
            "slope": slope, "pass": ok}


def single_run_distance(scn: Scenario, n: int, seed: int) -> float:
    """Coupling distance of one particle run from the limit, on the particle grid."""
    T = scn.abm.T or scn.T
    law = scn.law()
    init = scn.initial_law(law)
    lim = _limit_on_grid(scn, law, init, T, seed)
    grid, _ = run(init_population(n, law, init, seed), T, scn.abm.grid_dt, log_limit=0)
    return coupling_distance(grid, lim)


def crosscheck(scn: Scenario, seed_offset: int = 0) -> dict:
    """PDE against the integral-equation limit on the scenario grid."""
    from .pde import crosscheck_against_limit

    res = crosscheck_against_limit(scn.pde_scenario(), scn.T, scn.dt, M=scn.M, seed=scn.seed + seed_offset,
                                   method=scn.method)
    sol = res["pde"]
    return {"T": scn.T, "dt": scn.dt, "sup_S_frak": res["S_frak"], "sup_F_frak": res["F_frak"],
            "max_mass_residual": float(np.max(np.abs(sol.mass_residual))),
            "max_boundary_gap": float(np.max(np.abs(sol.R_boundary - sol.R_boundary_formula))),
            "finite": bool(math.isfinite(res["S_frak"]) and math.isfinite(res["F_frak"]))}

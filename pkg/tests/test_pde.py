import math

import numpy as np
import pytest

from conftest import SCENARIOS
from oracles import sirs_delay
from reinfect import durations as du
from reinfect.errors import ConfigError
from reinfect.kernels import PiecewiseConstant as PC
from reinfect.pde import PdeScenario, crosscheck_against_limit, kernel_laws, solve_pde
from reinfect.scenario import load_scenario


def markov_sirs(S0=0.6, snaps=()):
    return PdeScenario(PC.constant(2.0), PC((0.0, 1.0), (0.0, 1.0)), du.PiecewiseHazard((0.0,), (1.0,)), S0,
                       PC((0.0, 1.0), (1.0 - S0 - 0.1, 0.0)), PC((0.0, 2.0), (0.05, 0.0)), snaps)


def test_no_epidemic():
    scn = PdeScenario(PC.constant(2.0), PC.constant(1.0), du.PiecewiseHazard((0.0,), (1.0,)), 1.0, PC.constant(0.0))
    sol = solve_pde(scn, 5.0, 0.01)
    assert np.all(sol.S_bar == 1.0) and np.all(sol.I_total == 0.0) and np.all(sol.R_total == 0.0)


def test_initial_characteristics_with_constant_hazard():
    scn = markov_sirs(snaps=(0.0, 0.25, 0.5))
    sol = solve_pde(scn, 1.0, 0.01)
    cells0 = sol.snapshots[0].I_cells.copy()
    k = 100
    for st in sol.snapshots[1:]:
        m = int(round(st.t / 0.01))
        assert np.array_equal(st.I_cells[m:m + k], cells0[:k] * math.exp(-st.t))


def test_mass_and_nonnegativity():
    scn = load_scenario(SCENARIOS / "pde_general.yaml").pde_scenario()
    sol = solve_pde(scn, 20.0, 0.01, snapshot_times=(0.0, 5.0, 20.0))
    assert np.max(np.abs(sol.S_bar + sol.I_total + sol.R_total - 1.0)) <= 1e-3
    assert np.max(np.abs(sol.mass_residual)) <= 1e-3
    for arr in (sol.S_bar, sol.I_total, sol.R_total, sol.F_frak, sol.S_frak):
        assert np.all(arr >= -1e-12)
    for st in sol.snapshots:
        _, i, r = st.densities()
        assert np.all(i >= 0) and np.all(r >= 0)


def test_boundary_flux_matches_formula_to_first_order():
    gaps = []
    for dt in (0.01, 0.005):
        sol = solve_pde(markov_sirs(), 10.0, dt)
        gaps.append(np.max(np.abs(sol.R_boundary - sol.R_boundary_formula)))
    assert gaps[1] <= 1e-3
    assert gaps[0] > gaps[1]


def test_no_reinfection_means_susceptibility_is_never_infected_mass():
    scn = PdeScenario(PC.constant(2.0), PC.constant(0.0), du.PiecewiseHazard((0.0,), (1.0,)), 0.9,
                      PC((0.0, 1.0), (0.1, 0.0)))
    sol = solve_pde(scn, 10.0, 0.01)
    assert np.array_equal(sol.S_frak, sol.S_bar)


def test_markov_sirs_against_delay_oracle():
    scn = markov_sirs()
    sol = solve_pde(scn, 10.0, 0.005)
    t, I, X, F = sirs_delay(2.0, 1.0, 1.0, 0.6, 0.3, lambda a: np.where(a < 2.0, 0.05, 0.0), 10.0, 0.005)
    assert np.max(np.abs(sol.I_total - I)) < 1e-3
    assert np.max(np.abs(sol.S_frak - X)) < 1e-3
    assert np.max(np.abs(sol.F_frak - F)) < 2e-3


def test_general_instance_converges_at_first_order():
    scn = load_scenario(SCENARIOS / "pde_general.yaml").pde_scenario()
    d = []
    for dt in (0.02, 0.01):
        res = crosscheck_against_limit(scn, 10.0, dt)
        d.append(max(res["S_frak"], res["F_frak"]))
    assert d[1] <= 1e-2
    assert 1.6 <= d[0] / d[1] <= 2.4


def test_kernel_law_mapping():
    law, init = kernel_laws(markov_sirs())
    assert law.family == "Custom"
    assert init.i_fraction == pytest.approx(0.3) and init.r_fraction == pytest.approx(0.1)
    assert float(law.mean_infectivity(1.0)) == pytest.approx(2.0 * math.exp(-1.0))


def test_scenario_validation():
    hz = du.PiecewiseHazard((0.0,), (1.0,))
    with pytest.raises(ConfigError):
        PdeScenario(PC.constant(2.0), PC.constant(1.0), hz, 0.5, PC((0.0, 1.0), (0.1, 0.0)))
    with pytest.raises(ConfigError):
        PdeScenario(PC.constant(2.0), PC.constant(1.0), du.Fixed(1.0), 1.0, PC.constant(0.0))
    with pytest.raises(ConfigError):
        PdeScenario(PC.constant(2.0), PC.constant(1.5), hz, 1.0, PC.constant(0.0))
    with pytest.raises(ConfigError):
        PdeScenario(PC.constant(2.0), PC.constant(1.0), hz, 0.9, PC.constant(0.1))


def test_snapshot_csv(tmp_path):
    sol = solve_pde(markov_sirs(snaps=(0.0, 1.0)), 1.0, 0.01)
    sol.write_snapshots(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t,age,I_density,R_density"
    assert len(sol.snapshots) == 2

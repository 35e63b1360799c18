import numpy as np
import pytest
from scipy import stats

from reinfect import durations as du
from reinfect.abm import coupling_bound, coupling_distance, init_population, run, simulate
from reinfect.errors import ConfigError, GridMismatch, InvariantViolation
from reinfect.kernels import GammaStar, InitialLaw, KernelLaw
from reinfect.limit import solve_limit

EXP1 = du.Exponential(1.0)
SIS = KernelLaw.markov_sis(2.0, 1.0)


def test_initial_aggregates():
    one = init_population(1, SIS, InitialLaw(SIS, 1.0), seed=0)
    assert one.aggregate_F == 2.0 and one.aggregate_S == 0.0
    empty = init_population(100, SIS, InitialLaw(SIS, 0.0), seed=0)
    assert empty.aggregate_F == 0.0 and empty.aggregate_S == 100.0


def test_initial_infected_fraction():
    g, _ = simulate(SIS, InitialLaw(SIS, 0.05), 10_000, 0.1, 0.1, seed=1)
    assert 0.037 <= g.I_bar[0] <= 0.063


def test_no_infection_without_infectives():
    g, log = simulate(SIS, InitialLaw(SIS, 0.0), 1, 5.0, 0.1, seed=0)
    assert len(log) == 0 and np.all(g.F_bar == 0)


def test_sir_infects_each_individual_at_most_once():
    law = KernelLaw.sir(2.0, EXP1)
    _, log = simulate(law, InitialLaw(law, 0.05), 2000, 20.0, 0.5, seed=2)
    assert len(log) > 100
    assert max(log.infection_count) == 1
    assert len(set(log.individual)) == len(log)


def test_counts_partition_population():
    g, _ = simulate(KernelLaw.sirs(2.0, EXP1, EXP1), InitialLaw(KernelLaw.sirs(2.0, EXP1, EXP1), 0.3),
                    500, 10.0, 0.1, seed=3)
    assert np.all(g.meta["I_count"] + g.meta["U_count"] == 500)
    assert np.allclose(g.I_bar + g.U_bar, 1.0)


def test_aggregate_drift_stays_small():
    law = KernelLaw.gradual_gamma(3.0, du.GammaLaw(2.0, 2.0), du.Fixed(0.5), GammaStar((0.5, 1.0), (0.5, 0.5)),
                                  ramp=2.0)
    state = init_population(300, law, InitialLaw(law, 0.2), seed=4, debug=True)
    g, log = run(state, 5.0, 0.1)
    assert log.accepted > 0
    assert g.meta["max_drift"] <= 1e-9 * 300 * law.lambda_star


def test_event_log_is_reproducible(tmp_path):
    init = InitialLaw(SIS, 0.3)
    a = simulate(SIS, init, 200, 5.0, 0.1, seed=9)
    b = simulate(SIS, init, 200, 5.0, 0.1, seed=9)
    assert a[1].t == b[1].t and a[1].individual == b[1].individual
    a[1].write_csv(tmp_path / "a.csv")
    b[1].write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    c = simulate(SIS, init, 200, 5.0, 0.1, seed=10)
    assert c[1].t != a[1].t


def test_resume_continues_the_clock():
    state = init_population(200, SIS, InitialLaw(SIS, 0.3), seed=5)
    g1, _ = run(state, 2.0, 0.1)
    g2, _ = run(state, 4.0, 0.1)
    assert g2.times[0] == pytest.approx(2.0) and g2.times[-1] == pytest.approx(4.0)
    assert g2.I_bar[0] == pytest.approx(g1.I_bar[-1], abs=1.0 / 200)


def test_acceptance_probability_guard():
    state = init_population(50, SIS, InitialLaw(SIS, 1.0), seed=6)
    state.gam_cur = [5.0] * 50
    with pytest.raises(InvariantViolation):
        run(state, 1.0, 0.1)


def test_bad_grid_rejected():
    state = init_population(10, SIS, InitialLaw(SIS, 0.3), seed=0)
    with pytest.raises(ConfigError):
        run(state, 1.05, 0.1)
    with pytest.raises(ConfigError):
        init_population(0, SIS, InitialLaw(SIS, 0.3))


def test_first_infection_time_in_a_pair():
    # one infective (recovers at rate 1), one susceptible (infected at rate 2 * 1/2):
    # given infection wins the race, its time is Exp(2)
    init = InitialLaw(SIS, 0.5)
    times = []
    for r in range(10_000):
        g, log = simulate(SIS, init, 2, 20.0, 20.0, seed=r)
        if g.meta["I_count"][0] == 1 and len(log):
            times.append(log.t[0])
    times = np.array(times)
    assert 1500 < times.size < 3500
    assert stats.kstest(times, stats.expon(scale=0.5).cdf).pvalue > 0.01


@pytest.mark.slow
def test_markov_sis_endemic_level():
    g, _ = simulate(SIS, InitialLaw(SIS, 0.3), 10_000, 40.0, 0.1, seed=11)
    assert abs(g.I_bar[-1] - 0.5) <= 0.02


def test_coupling_bound_holds():
    assert coupling_bound(2.0, 10_000, 0.5) == pytest.approx(2.0 / 100 * 0.5 * np.exp(2.0), rel=1e-14)
    init = InitialLaw(SIS, 0.3)
    lim = solve_limit(SIS, init, 0.5, 0.01).subsample(10)
    bound = coupling_bound(2.0, 10_000, 0.5)
    for seed in range(3):
        g, _ = simulate(SIS, init, 10_000, 0.5, 0.1, seed=seed)
        assert coupling_distance(g, lim) <= bound


def test_coupling_distance_requires_same_grid():
    init = InitialLaw(SIS, 0.3)
    g, _ = simulate(SIS, init, 100, 1.0, 0.1, seed=0)
    lim = solve_limit(SIS, init, 1.0, 0.01)
    with pytest.raises(GridMismatch):
        coupling_distance(g, lim)


def test_sirs_tracks_the_limit():
    law = KernelLaw.sirs(2.0, EXP1, EXP1)
    init = InitialLaw(law, 0.3)
    g, _ = simulate(law, init, 5000, 10.0, 0.1, seed=12)
    lim = solve_limit(law, init, 10.0, 0.01).subsample(10)
    assert coupling_distance(g, lim) < 0.05

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from reinfect import durations as du
from reinfect.equilibrium import (classify, disease_free_limit_S, evaluate_H, instability_check,
                                  solve_endemic)
from reinfect.errors import HorizonTooShort
from reinfect.kernels import GammaStar, InitialLaw, KernelLaw
from reinfect.limit import solve_limit

EXP1 = du.Exponential(1.0)


def indicator(lam=3.0, gs=GammaStar((0.5,), (1.0,)), theta=EXP1):
    return KernelLaw.indicator_gamma(lam, EXP1, theta, gs)


def gradual(lam=3.0):
    return KernelLaw.gradual_gamma(lam, du.GammaLaw(2.0, 2.0), du.Fixed(0.5), GammaStar((0.5, 1.0), (0.5, 0.5)),
                                   ramp=2.0)


def test_h_at_zero_is_harmonic_mean():
    law = indicator(gs=GammaStar((0.25, 1.0), (0.5, 0.5)))
    assert evaluate_H(law, 0.0) == 2.5


def test_h_constant_when_susceptibility_is_immediate():
    law = KernelLaw.indicator_gamma(1.0, du.Fixed(0.0), du.Fixed(0.0), GammaStar((0.5, 1.0), (0.5, 0.5)))
    for x in (0.0, 0.3, 1.0, 10.0, 100.0):
        assert evaluate_H(law, x) == pytest.approx(1.5, rel=1e-14)


def test_h_indicator_closed_form():
    law = indicator(gs=GammaStar((0.25, 1.0), (0.5, 0.5)), theta=du.Uniform(0.0, 2.0))
    e_zeta = 1.0 + 1.0
    for x in np.linspace(0, 4, 9):
        assert evaluate_H(law, x) == pytest.approx(x * e_zeta + 2.5, rel=1e-13)


def test_h_monte_carlo_agrees_with_exact():
    law = gradual()
    for x in (0.2, 1.0, 3.0):
        est, se = evaluate_H(law, x, method="mc", samples=40_000, seed=1)
        assert abs(est - evaluate_H(law, x)) <= 4 * se + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 20.0), st.floats(0.0, 20.0))
def test_h_monotone_and_h_over_x_non_increasing(a, b):
    law = gradual()
    lo, hi = sorted((a, b))
    assert evaluate_H(law, lo) <= evaluate_H(law, hi) * (1 + 1e-12)
    if lo > 0:
        assert evaluate_H(law, hi) / hi <= evaluate_H(law, lo) / lo * (1 + 1e-12)


def test_h_strictly_increasing_for_non_constant_gamma():
    h = [evaluate_H(gradual(), x) for x in np.linspace(0, 5, 50)]
    assert np.all(np.diff(h) > 0)


def test_indicator_equilibrium():
    rep = solve_endemic(indicator())
    assert rep.regime == "Endemic"
    assert rep.F_star == pytest.approx(0.5, abs=1e-12)
    assert rep.solver_diagnostics["bisection_root"] == pytest.approx(0.5, rel=1e-6)
    assert rep.I_star == pytest.approx(0.5 / 3, abs=1e-12)
    assert rep.S_star == pytest.approx(1 / 3)


def test_bisection_residual_for_gradual_profile():
    law = gradual()
    rep = solve_endemic(law)
    assert abs(evaluate_H(law, rep.F_star) - rep.R0) <= 1e-8 * rep.R0
    assert rep.solver_diagnostics["iterations"] > 0
    lo, hi = rep.solver_diagnostics["bracket"]
    assert lo <= rep.F_star <= hi


def test_markov_sis_equilibrium():
    rep = solve_endemic(KernelLaw.markov_sis(2.0, 1.0))
    assert rep.I_star == pytest.approx(0.5, abs=1e-12)
    assert rep.F_star == pytest.approx(1.0, abs=1e-12)


def test_disease_free_regime():
    rep = solve_endemic(KernelLaw.markov_sis(0.8, 1.0))
    assert rep.regime == "DiseaseFree"
    assert rep.F_star == 0.0 and rep.I_star == 0.0
    assert json.loads(rep.to_json())["regime"] == "DiseaseFree"


def test_critical_classification():
    assert classify(2.0, 2.0) == "Critical"
    assert classify(2.0 + 1e-12, 2.0) == "Critical"
    assert classify(2.1, 2.0) == "Endemic"
    assert classify(1.9, 2.0) == "DiseaseFree"
    rep = solve_endemic(KernelLaw.markov_sis(1.0, 1.0))
    assert rep.regime == "Critical" and rep.F_star == 0.0


def test_sir_report_serialises_infinite_threshold():
    rep = solve_endemic(KernelLaw.sir(2.0, EXP1))
    d = json.loads(rep.to_json())
    assert d["regime"] == "DiseaseFree" and d["E_inv_gamma_star"] == "inf"


def test_long_run_consistency_with_limit():
    law = indicator()
    rep = solve_endemic(law)
    g = solve_limit(law, InitialLaw(law, 0.1), 80.0, 0.01)
    assert g.F_bar[-1] == pytest.approx(rep.F_star, abs=5e-3)
    assert g.I_bar[-1] == pytest.approx(rep.I_star, abs=5e-3)


def test_disease_free_limit_with_full_susceptibility():
    law = KernelLaw.markov_sis(0.8, 1.0)
    g = solve_limit(law, InitialLaw(law, 0.3), 60.0, 0.01)
    res = disease_free_limit_S(g, law, InitialLaw(law, 0.3))
    assert res.S_star == pytest.approx(1.0, abs=1e-6)


def test_disease_free_limit_without_epidemic():
    law = KernelLaw.sirs(2.0, EXP1, EXP1)
    init = InitialLaw(law, 0.0)
    res = disease_free_limit_S(solve_limit(law, init, 5.0, 0.01), law, init)
    assert res.S_star == 1.0 and res.truncation_bound == 0.0


def test_disease_free_limit_sir_final_size():
    law = KernelLaw.sir(2.0, EXP1)
    init = InitialLaw(law, 0.05)
    g = solve_limit(law, init, 40.0, 0.005)
    res = disease_free_limit_S(g, law, init)
    assert res.S_star == pytest.approx(g.S_bar[-1], abs=1e-9)
    # final-size relation for exponential recovery: s = 0.95 exp(-2 (1 - s))
    s_inf = optimize.brentq(lambda s: s - 0.95 * math.exp(-2.0 * (1.0 - s)), 1e-9, 0.5)
    assert res.S_star == pytest.approx(s_inf, abs=5e-3)


def test_disease_free_limit_needs_long_horizon():
    law = KernelLaw.sir(2.0, EXP1)
    init = InitialLaw(law, 0.05)
    with pytest.raises(HorizonTooShort):
        disease_free_limit_S(solve_limit(law, init, 5.0, 0.01), law, init)


def test_instability_check():
    law = KernelLaw.markov_sis(2.0, 1.0)
    g = solve_limit(law, InitialLaw(law, 0.3), 40.0, 0.01)
    ok, fmin = instability_check(g, solve_endemic(law), floor=0.1)
    assert ok and fmin >= 0.1
    law = indicator()
    g = solve_limit(law, InitialLaw(law, 0.1), 60.0, 0.01)
    ok, fmin = instability_check(g, solve_endemic(law))
    assert ok and fmin > 0
    law = KernelLaw.markov_sis(0.8, 1.0)
    g = solve_limit(law, InitialLaw(law, 0.3), 60.0, 0.01)
    ok, fmin = instability_check(g, solve_endemic(law))
    assert not ok and fmin < 1e-3

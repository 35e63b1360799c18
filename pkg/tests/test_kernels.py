import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reinfect import durations as du
from reinfect.errors import ConfigError
from reinfect.kernels import (GammaStar, InitialLaw, KernelLaw, PiecewiseConstant, law_statistics,
                              mean_infectivity, r0_by_quadrature, sample_initial, sample_kernel, survival)

EXP1 = du.Exponential(1.0)


def families():
    return [
        KernelLaw.markov_sis(2.0, 1.0),
        KernelLaw.general_sis(2.0, du.GammaLaw(2.0, 2.0)),
        KernelLaw.sir(2.0, EXP1),
        KernelLaw.sirs(2.0, EXP1, EXP1),
        KernelLaw.indicator_gamma(3.0, EXP1, EXP1, GammaStar((0.5, 1.0), (0.3, 0.7))),
        KernelLaw.gradual_gamma(3.0, du.GammaLaw(2.0, 2.0), du.Fixed(0.5), GammaStar((0.5, 1.0), (0.5, 0.5)),
                                ramp=2.0),
        KernelLaw.custom(PiecewiseConstant((0.0, 1.0), (1.0, 2.0)), du.Uniform(0.5, 2.0),
                         PiecewiseConstant((0.0, 1.0), (0.2, 1.0))),
    ]


@pytest.mark.parametrize("law", families(), ids=lambda l: l.family)
def test_sampled_paths_satisfy_invariants(law):
    batch = law.sample_batch(np.random.default_rng(0), 500)
    for i in range(len(batch)):
        batch.row(i).check(law.lambda_star)


def test_markov_sis_path_shape():
    path = sample_kernel(KernelLaw.markov_sis(2.0, 1.0), np.random.default_rng(4))
    eta = path.eta
    t = np.array([0.0, 0.5 * eta, np.nextafter(eta, 0), eta, eta + 3.0])
    assert path.lam(t).tolist() == [2.0, 2.0, 2.0, 0.0, 0.0]
    assert path.gam(t).tolist() == [0.0, 0.0, 0.0, 1.0, 1.0]
    assert path.zeta == eta


def test_indicator_gamma_deterministic_path():
    law = KernelLaw.indicator_gamma(3.0, du.Fixed(1.0), du.Fixed(1.0), GammaStar((0.5,), (1.0,)))
    path = sample_kernel(law, np.random.default_rng(0))
    assert path.eta == 1.0 and path.zeta == 2.0
    t = np.array([0.0, 0.99, 1.0, 1.99, 2.0, 10.0])
    assert path.gam(t).tolist() == [0.0, 0.0, 0.0, 0.0, 0.5, 0.5]
    assert path.lam(t).tolist() == [3.0, 3.0, 0.0, 0.0, 0.0, 0.0]


def test_sir_never_susceptible():
    law = KernelLaw.sir(2.0, EXP1)
    path = sample_kernel(law, np.random.default_rng(1))
    assert path.zeta == np.inf
    assert np.all(path.gam(np.linspace(0, 50, 11)) == 0)
    assert law.never_susceptible


def test_mean_infectivity_against_monte_carlo():
    law = KernelLaw.custom(PiecewiseConstant((0.0, 1.0), (1.0, 2.0)), du.Uniform(0.5, 2.0),
                           PiecewiseConstant.constant(1.0))
    t = np.linspace(0.0, 2.5, 20)
    est, se = law.mean_infectivity_mc(t, np.random.default_rng(9), 100_000)
    exact = law.mean_infectivity(t)
    assert np.all(np.abs(est - exact) <= 4 * se + 1e-12)


def test_markov_sis_mean_infectivity_and_survival():
    law = KernelLaw.markov_sis(2.0, 1.0)
    assert float(mean_infectivity(law, np.log(2.0))) == pytest.approx(1.0, rel=1e-14)
    assert float(survival(law, 1.0)) == pytest.approx(np.exp(-1.0), rel=1e-15)


def test_r0_quadrature_matches_closed_form():
    for eta in (du.GammaLaw(2.0, 2.0), du.Uniform(0.5, 1.5), du.Fixed(0.8), EXP1):
        law = KernelLaw.general_sis(2.5, eta)
        assert r0_by_quadrature(law) == pytest.approx(2.5 * eta.mean(), rel=1e-6)
        assert law_statistics(law).R0 == pytest.approx(2.5 * eta.mean(), rel=1e-12)


def test_harmonic_mean_of_mixture():
    law = KernelLaw.indicator_gamma(2.0, EXP1, EXP1, GammaStar((0.25, 1.0), (0.5, 0.5)))
    assert law_statistics(law).E_inv_gamma_star == pytest.approx(2.5, rel=1e-15)


def test_law_statistics_fields():
    law = KernelLaw.indicator_gamma(3.0, EXP1, EXP1, GammaStar((0.5,), (1.0,)))
    s = law_statistics(law)
    assert (s.R0, s.E_eta, s.E_zeta, s.E_inv_gamma_star) == pytest.approx((3.0, 1.0, 2.0, 2.0))
    assert s.equilibrium_available
    assert law_statistics(KernelLaw.sir(2.0, EXP1)).E_inv_gamma_star == np.inf


def test_gamma_star_validation():
    with pytest.raises(ConfigError):
        GammaStar((1.5,), (1.0,))
    with pytest.raises(ConfigError):
        GammaStar((0.5, 1.0), (1.0,))


def test_lambda_star_below_shape_rejected():
    with pytest.raises(ConfigError):
        KernelLaw.markov_sis(2.0, 1.0, lambda_star=1.0)


def test_initial_law_zero_fraction_gives_susceptible_paths():
    init = InitialLaw(KernelLaw.markov_sis(2.0, 1.0), 0.0)
    batch, grp = init.sample_batch(np.random.default_rng(0), 100)
    assert np.all(grp == 0)
    assert np.all(batch.lam == 0) and np.all(batch.gam == 1)


def test_initial_law_fresh_infection_matches_base():
    law = KernelLaw.general_sis(2.0, du.GammaLaw(2.0, 2.0))
    init = InitialLaw(law, 1.0)
    t = np.linspace(0, 3, 13)
    assert np.allclose(init.mean_infectivity(t), law.mean_infectivity(t), rtol=1e-14)
    a, _ = init.sample_batch(np.random.default_rng(2), 20_000)
    b = law.sample_batch(np.random.default_rng(3), 20_000)
    # two-sample KS on the infectious period
    from scipy.stats import ks_2samp
    assert ks_2samp(a.eta, b.eta).pvalue > 0.001


def test_initial_law_with_age_uses_residual():
    law = KernelLaw.general_sis(2.0, du.Fixed(1.0))
    init = InitialLaw(law, 0.5, du.Uniform(0.0, 0.5))
    path = sample_initial(init, np.random.default_rng(5))
    path.check(law.lambda_star)
    # remaining infectious time of the initially infected is U(0.5, 1]
    assert float(init.survival(0.75)) == pytest.approx(0.5, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.1, 3.0), st.floats(0.0, 8.0))
def test_mean_infectivity_bounded(lam, beta, t):
    law = KernelLaw.markov_sis(lam, beta)
    m = float(law.mean_infectivity(t))
    assert 0.0 <= m <= law.lambda_star
    assert m == pytest.approx(lam * np.exp(-beta * t), rel=1e-12, abs=1e-300)

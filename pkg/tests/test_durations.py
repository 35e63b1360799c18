import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from reinfect import durations as du
from reinfect.errors import ConfigError

LAWS = [
    du.Exponential(1.5),
    du.Fixed(0.7),
    du.Uniform(0.2, 1.3),
    du.GammaLaw(2.0, 2.0),
    du.Weibull(1.5, 1.0),
    du.PiecewiseHazard((0.0, 0.5, 2.0), (0.0, 1.0, 3.0)),
    du.Histogram((0.0, 0.5, 2.0), (0.25, 0.75)),
]


@pytest.mark.parametrize("law", LAWS, ids=lambda d: type(d).__name__)
def test_integrated_sf_matches_mean_and_quadrature(law):
    assert float(law.integrated_sf(np.inf)) == pytest.approx(law.mean(), rel=1e-9)
    x = 1.1
    ref, _ = integrate.quad(lambda t: float(law.sf(t)), 0, x, points=list(law.kinks) or None, limit=200)
    assert float(law.integrated_sf(x)) == pytest.approx(ref, abs=1e-8)


@pytest.mark.parametrize("law", [d for d in LAWS if not isinstance(d, du.Fixed)], ids=lambda d: type(d).__name__)
def test_ppf_inverts_cdf(law):
    u = np.linspace(0.05, 0.95, 19)
    assert np.allclose(law.cdf(law.ppf(u)), u, atol=1e-9)


@pytest.mark.parametrize("law", LAWS, ids=lambda d: type(d).__name__)
def test_sampling_mean(law):
    x = law.sample(np.random.default_rng(3), 40_000)
    se = x.std() / np.sqrt(x.size) + 1e-12
    assert abs(x.mean() - law.mean()) < 5 * se + 1e-12


def test_exponential_survival_value():
    assert float(du.Exponential(1.0).sf(1.0)) == pytest.approx(np.exp(-1.0), rel=1e-15)


def test_piecewise_hazard_matches_exponential_when_constant():
    h = du.PiecewiseHazard((0.0,), (2.0,))
    t = np.linspace(0, 3, 7)
    assert np.allclose(h.sf(t), np.exp(-2 * t), rtol=1e-14)
    assert h.mean() == pytest.approx(0.5)


def test_piecewise_hazard_rejects_bad_input():
    with pytest.raises(ConfigError):
        du.PiecewiseHazard((0.0, 1.0), (1.0, 0.0))
    with pytest.raises(ConfigError):
        du.PiecewiseHazard((0.5,), (1.0,))


def test_add_closed_forms():
    assert du.add(du.Fixed(1.0), du.Fixed(0.5)) == du.Fixed(1.5)
    assert du.add(du.Exponential(1.0), du.Fixed(0.0)) == du.Exponential(1.0)
    assert isinstance(du.add(du.Exponential(1.0), du.Never()), du.Never)
    s = du.add(du.Exponential(1.0), du.Exponential(1.0))
    # sum of two Exp(1) is Gamma(2, 1)
    t = np.linspace(0, 5, 11)
    assert np.allclose(s.sf(t), stats.gamma(2).sf(t), atol=1e-12)


def test_sum_of_general_laws_against_monte_carlo():
    a, b = du.Uniform(0.0, 1.0), du.GammaLaw(2.0, 2.0)
    s = du.add(a, b)
    rng = np.random.default_rng(1)
    x = a.sample(rng, 200_000) + b.sample(rng, 200_000)
    for t in (0.5, 1.0, 2.0):
        assert float(s.sf(t)) == pytest.approx(np.mean(x > t), abs=5e-3)
    assert s.mean() == pytest.approx(1.5, rel=1e-9)


def test_residual_of_exponential_is_memoryless():
    assert du.residual(du.Exponential(2.0), du.Uniform(0.0, 1.0)) == du.Exponential(2.0)


def test_residual_histogram_age_against_direct_integral():
    base = du.Fixed(1.0)
    age = du.Histogram((0.0, 0.5), (1.0,))
    r = du.residual(base, age)
    # remaining time 1 - A with A ~ U(0, 0.5): uniform on (0.5, 1]
    for t in (0.3, 0.6, 0.75, 0.99):
        assert float(r.sf(t)) == pytest.approx(min(1.0, max(0.0, (1.0 - t) / 0.5)), abs=1e-12)


def test_signed_onset_fixed_delay():
    so = du.SignedOnset(du.Fixed(1.0), du.Uniform(0.0, 2.0))
    # O = 1 - V with V ~ U(0, 2): P(O <= u) = P(V >= 1 - u)
    u = np.array([-1.5, -0.5, 0.0, 0.5, 1.5])
    expect = np.clip((2 - (1 - u)) / 2, 0, 1)
    assert np.allclose(so.cdf(u), expect, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.0, 10.0))
def test_exponential_survival_property(rate, t):
    e = du.Exponential(rate)
    assert 0.0 <= float(e.sf(t)) <= 1.0
    assert float(e.integrated_sf(t)) <= e.mean() + 1e-12

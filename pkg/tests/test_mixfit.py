import math

import numpy as np
import pytest
from scipy import integrate, special

from heavyfreq.calibrative import _logit_grid, poisson_mix_density
from heavyfreq.distributions import Beta
from heavyfreq.estimation import FitOptions
from heavyfreq.glm import MixingSample
from heavyfreq.mixfit import (MixingTarget, exact_log_likelihood, fit_mixing, interval_chisq,
                              knot_log_likelihood, lambda_density, lambda_log_density,
                              lambda_survival, p_cell_edges, p_density_at_r, p_log_density_at_r)
from heavyfreq.numerics import DomainError

FAMILY_PARAMS = [("Waring", (3.72, 0.725)), ("GZY", (0.062, 0.9187, 26.39)),
                 ("HGZY", (0.0049, 3.31, 939.2, 70.07))]


def waring_lambda_draws(a, b, n, rng):
    # given p ~ Beta(a, b), lambda is exponential with mean p / (1 - p)
    p = rng.beta(a, b, n)
    return rng.exponential(1.0, n) * p / (1.0 - p)


def test_waring_lambda_density_oracle():
    for lam in (0.01, 0.3, 2.0, 15.0):
        oracle = integrate.quad(lambda y: y / (y + 1) ** 2 * math.exp(-y * lam), 0, np.inf,
                                epsabs=0, epsrel=1e-13, limit=400)[0]
        assert lambda_density("Waring", (1.0, 1.0), lam) == pytest.approx(oracle, rel=1e-9)
        assert lambda_density("Waring", (1.0, 1.0), lam) == pytest.approx(
            poisson_mix_density(Beta(1.0, 1.0), lam), rel=1e-12)


@pytest.mark.parametrize("family,params", FAMILY_PARAMS)
def test_lambda_density_normalised(family, params):
    x, w = np.polynomial.legendre.leggauss(20)
    edges = np.linspace(-60.0, 60.0, 301)
    half = 0.5 * np.diff(edges)
    t = (0.5 * (edges[1:] + edges[:-1])[:, None] + half[:, None] * x).ravel()
    wt = (half[:, None] * w).ravel()
    mass = np.dot(wt, np.exp(lambda_log_density(family, params, np.exp(t)) + t))
    assert mass == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("family,params", FAMILY_PARAMS)
def test_p_density_normalised(family, params):
    v, wv = _logit_grid(-60.0, 34.0)
    lp, lq = -np.logaddexp(0, -v), -np.logaddexp(0, v)
    log_g = p_log_density_at_r(family, params, 110.6, special.expit(v))
    assert np.dot(wv, np.exp(log_g + lp + lq)) == pytest.approx(1.0, abs=1e-5)


def test_lambda_survival_matches_density():
    params = (3.72, 0.725)
    for t in (0.5, 3.0, 20.0):
        tail = integrate.quad(lambda s: lambda_density("Waring", params, s), t, np.inf,
                              epsabs=1e-12, limit=400)[0]
        assert lambda_survival("Waring", params, t)[0] == pytest.approx(tail, rel=1e-7)
    assert lambda_survival("Waring", params, 0.0)[0] == pytest.approx(1.0, abs=1e-12)


def test_p_density_near_r_one_is_beta():
    p = np.array([0.05, 0.3, 0.6, 0.9])
    got = p_density_at_r("Waring", (2.0, 3.0), 1 + 1e-6, p)
    assert np.allclose(got, Beta(2.0, 3.0).pdf(p), rtol=1e-4)


def test_p_density_domain():
    with pytest.raises(DomainError):
        p_density_at_r("Waring", (2.0, 3.0), 1.0, 0.5)
    with pytest.raises(DomainError):
        MixingTarget("Waring", "p")
    with pytest.raises(DomainError):
        MixingTarget("Yule", "lambda")


def test_p_cells_are_images_of_lambda_cells():
    r = 110.5986
    edges = p_cell_edges(20, r)
    n = np.arange(22)
    assert np.allclose(r * edges / (1 - edges), n, rtol=0, atol=1e-11)
    assert np.all(np.diff(edges) > 0)


def test_knot_likelihood_close_to_exact():
    rng = np.random.default_rng(40)
    lam = waring_lambda_draws(3.72, 0.725, 2000, rng)
    target = MixingTarget("Waring", "lambda")
    exact = exact_log_likelihood(target, (3.72, 0.725), lam)
    approx, knots = knot_log_likelihood(target, (3.72, 0.725), lam)
    assert knots >= 200
    assert approx == pytest.approx(exact, abs=1e-3)


@pytest.fixture(scope="module")
def waring_fit():
    rng = np.random.default_rng(41)
    lam = waring_lambda_draws(3.0, 0.9, 10_000, rng)
    sample = MixingSample("lambda", lam)
    target = MixingTarget("Waring", "lambda")
    return sample, target, fit_mixing(sample, target)


def test_waring_lambda_recovery(waring_fit):
    _, _, fit = waring_fit
    assert fit.status == "ok"
    z = (fit.estimates - np.array([3.0, 0.9])) / fit.std_errors
    assert np.all(np.abs(z) < 3), z
    assert fit.log_likelihood >= max(fit.start_logliks) - 1e-3


def test_interval_chisq_lambda(waring_fit):
    sample, target, fit = waring_fit
    rep = interval_chisq(sample, target, fit)
    assert sum(o for _, o, _ in rep.cells) == sample.values.size
    assert sum(e for _, _, e in rep.cells) == pytest.approx(sample.values.size, rel=1e-9)
    assert all(e >= 10 for _, _, e in rep.cells[:-1])
    assert rep.df == len(rep.cells) - 3
    # the sample is drawn from the fitted family
    assert rep.p_value > 0.001


def test_p_pipeline_runs():
    rng = np.random.default_rng(42)
    r = 50.0
    lam = waring_lambda_draws(3.0, 0.9, 400, rng)
    sample = MixingSample("p", lam / (lam + r), r)
    target = MixingTarget("Waring", "p", r)
    opts = FitOptions(starts=1, explore_evals=60, polish_evals=200, max_restarts=1,
                      tol=1e-6, xatol=1e-5)
    fit = fit_mixing(sample, target, opts)
    assert np.all(np.isfinite(fit.estimates))
    assert fit.log_likelihood == pytest.approx(
        exact_log_likelihood(target, fit.estimates, sample.values), rel=1e-12)
    rep = interval_chisq(sample, target, fit)
    assert sum(o for _, o, _ in rep.cells) == 400
    assert sum(e for _, _, e in rep.cells) == pytest.approx(400.0, rel=1e-7)


def test_support_checked():
    target = MixingTarget("Waring", "p", 20.0)
    with pytest.raises(DomainError):
        fit_mixing(MixingSample("p", np.array([0.2, 1.5]), 20.0), target)

import dataclasses
import math

import numpy as np
import pytest
import statsmodels.api as sm

from heavyfreq.glm import (FACTORS, RankError, RiskRecord, best_subsets, derive_mixing_sample,
                           encode_design, fit_negbin, fit_poisson, subset_search)
from heavyfreq.numerics import DomainError
from sampling import synthetic_records


@pytest.fixture(scope="module")
def poisson_data():
    return synthetic_records(np.random.default_rng(31))


@pytest.fixture(scope="module")
def nb_data():
    return synthetic_records(np.random.default_rng(32), r=40.0)


# --- design ------------------------------------------------------------------------

def test_design_columns_and_baseline(poisson_data):
    records, _ = poisson_data
    d = encode_design(records)
    assert d.matrix.shape == (len(records), 25)
    assert d.names[:6] == ["(Intercept)", "KILO2", "KILO3", "KILO4", "KILO5", "ZONE2"]
    assert d.names[-1] == "MAKE9"
    base = encode_design([RiskRecord(1, 1, 1, 1, 10.0, 2)])
    assert np.all(base.matrix[0, 1:] == 0) and base.matrix[0, 0] == 1
    assert base.offset[0] == pytest.approx(math.log(10.0))
    row = encode_design([RiskRecord(3, 1, 1, 1, 1.0, 0)]).matrix[0]
    kilo = row[1:5]
    assert kilo.sum() == 1 and kilo[1] == 1


def test_design_errors_name_the_row():
    good = RiskRecord(1, 1, 1, 1, 1.0, 0)
    with pytest.raises(DomainError, match="row 2"):
        encode_design([good, RiskRecord(6, 1, 1, 1, 1.0, 0)])
    with pytest.raises(DomainError, match="row 1"):
        encode_design([RiskRecord(1, 1, 1, 1, 0.0, 0)])
    with pytest.raises(DomainError):
        encode_design([])


def test_rank_error_names_columns():
    records = [RiskRecord(k, 1, 1, 1, 5.0, k) for k in (1, 2, 3)]
    with pytest.raises(RankError, match="KILO4"):
        fit_poisson(records)


# --- Poisson --------------------------------------------------------------------------

def test_poisson_matches_statsmodels(poisson_data):
    records, _ = poisson_data
    d = encode_design(records)
    fit = fit_poisson(d)
    ref = sm.GLM(d.response, d.matrix, family=sm.families.Poisson(), offset=d.offset).fit(tol=1e-13)
    assert np.allclose(fit.coefficients, ref.params, rtol=0, atol=1e-9)
    assert np.allclose(fit.std_errors, ref.bse, rtol=1e-7)
    assert fit.log_likelihood == pytest.approx(ref.llf, rel=1e-11)
    assert fit.residual_deviance == pytest.approx(ref.deviance, rel=1e-9)
    assert fit.df == len(records) - 25


def test_poisson_score_equations(poisson_data):
    records, _ = poisson_data
    d = encode_design(records)
    fit = fit_poisson(d)
    score = d.matrix.T @ (d.response - fit.fitted_mu)
    assert np.max(np.abs(score)) < 1e-6
    assert fit.fitted_mu.sum() == pytest.approx(d.response.sum(), rel=1e-6)


def test_poisson_recovers_truth(poisson_data):
    records, coef = poisson_data
    fit = fit_poisson(records)
    z = (fit.coefficients - coef) / fit.std_errors
    assert np.max(np.abs(z)) < 4


def test_offset_scaling_shifts_intercept_only(poisson_data):
    records, _ = poisson_data
    k = 7.5
    scaled = [dataclasses.replace(r, exposure=r.exposure * k) for r in records]
    a, b = fit_poisson(records), fit_poisson(scaled)
    assert b.coefficients[0] == pytest.approx(a.coefficients[0] - math.log(k), abs=1e-10)
    assert np.allclose(b.coefficients[1:], a.coefficients[1:], rtol=0, atol=1e-10)


def test_z_values_exact(poisson_data):
    fit = fit_poisson(poisson_data[0])
    assert np.array_equal(fit.z_values, fit.coefficients / fit.std_errors)


def test_saturated_single_row():
    rec = [RiskRecord(1, 1, 1, 1, 4.0, 12)]
    fit = fit_poisson(encode_design(rec, factors=()))
    assert fit.residual_deviance == pytest.approx(0.0, abs=1e-12)
    assert fit.coefficients[0] == pytest.approx(math.log(3.0), abs=1e-10)


def test_intercept_only_aic(poisson_data):
    fit = fit_poisson(encode_design(poisson_data[0], factors=()))
    assert fit.aic == -2 * fit.log_likelihood + 2


# --- negative binomial ------------------------------------------------------------------

def test_negbin_matches_statsmodels(nb_data):
    records, _ = nb_data
    d = encode_design(records)
    fit = fit_negbin(d)
    ref = sm.NegativeBinomial(d.response, d.matrix, offset=d.offset, loglike_method="nb2")
    res = ref.fit(start_params=np.r_[fit.coefficients, 1 / fit.r_hat], method="bfgs",
                  maxiter=2000, gtol=1e-10, disp=0)
    assert 1 / res.params[-1] == pytest.approx(fit.r_hat, rel=1e-5)
    assert np.allclose(fit.coefficients, res.params[:-1], rtol=0, atol=1e-6)
    assert fit.log_likelihood == pytest.approx(res.llf, rel=1e-10)
    assert fit.df == len(records) - 26


def test_negbin_recovers_r(nb_data):
    records, coef = nb_data
    fit = fit_negbin(records)
    assert abs(fit.r_hat - 40.0) < 3 * fit.r_se
    assert np.max(np.abs((fit.coefficients - coef) / fit.std_errors)) < 4


def test_negbin_large_fixed_r_is_poisson(poisson_data):
    records, _ = poisson_data
    a = fit_poisson(records)
    b = fit_negbin(records, r_fixed=1e12)
    assert np.allclose(b.coefficients, a.coefficients, rtol=0, atol=1e-6)


def test_negbin_equidispersed_flags_divergence(poisson_data):
    fit = fit_negbin(poisson_data[0])
    assert fit.r_divergent
    assert fit.status == "Poisson-equivalent"


# --- mixing samples and subsets --------------------------------------------------------

def test_derive_mixing_samples(nb_data):
    records, _ = nb_data
    fit = fit_negbin(records)
    lam = derive_mixing_sample(fit, "lambda")
    p = derive_mixing_sample(fit, "p")
    assert np.all(lam.values > 0) and lam.values.size == len(records)
    assert np.all((p.values > 0) & (p.values < 1))
    assert np.allclose(p.values, fit.fitted_mu / (fit.fitted_mu + fit.r_hat))
    with pytest.raises(DomainError):
        derive_mixing_sample(fit_poisson(records), "p")


def test_p_is_half_when_mu_equals_r(nb_data):
    fit = fit_negbin(nb_data[0])
    fit.fitted_mu = np.array([110.5986])
    fit.r_hat = 110.5986
    assert derive_mixing_sample(fit, "p").values[0] == 0.5


def test_subset_search(nb_data):
    rows = subset_search(nb_data[0])
    assert len(rows) == 32
    assert {r.factors for r in rows} >= {(), tuple(f[0] for f in FACTORS)}
    full = tuple(f[0] for f in FACTORS)
    best = best_subsets(rows)
    assert best[("Poisson", "aic")] == full
    assert best[("NegativeBinomial", "aic")] == full

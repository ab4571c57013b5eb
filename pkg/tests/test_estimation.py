import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from heavyfreq.distributions import ZY, Poisson, Waring, Yule
from heavyfreq.estimation import (HG_FAMILIES, CountSample, FitOptions, HessianError,
                                  chisq_gof, determine_convention, fit_all_hg,
                                  hessian_std_errors, information_criteria, log_likelihood,
                                  mle_fit, moment_conventions, pearson_cells, std_errors,
                                  summary_stats)
from heavyfreq.numerics import DomainError
from sampling import draw_counts

# --- summary statistics ---------------------------------------------------------


def test_moment_conventions_match_scipy():
    rng = np.random.default_rng(1)
    x = rng.lognormal(0, 1.2, 500)
    mc = moment_conventions(x)
    assert mc["pop_skew"] == pytest.approx(stats.skew(x), rel=1e-12)
    assert mc["pop_excess"] == pytest.approx(stats.kurtosis(x), rel=1e-12)
    assert mc["pop_kurt"] == pytest.approx(stats.kurtosis(x, fisher=False), rel=1e-12)
    assert mc["sample_skew"] == pytest.approx(stats.skew(x, bias=False), rel=1e-12)
    assert mc["sample_excess"] == pytest.approx(stats.kurtosis(x, bias=False), rel=1e-12)


def test_summary_stats_basic():
    s = summary_stats([1.0, 2.0, 3.0, 4.0, 10.0])
    assert s["n"] == 5 and s["min"] == 1.0 and s["max"] == 10.0
    assert s["mean"] == pytest.approx(4.0)
    assert s["sd"] == pytest.approx(np.std([1, 2, 3, 4, 10], ddof=1))
    assert s["convention"] in ("population_raw", "population_excess", "sample_raw", "sample_excess")


def test_summary_stats_degenerate():
    s = summary_stats([0, 0, 0, 0])
    assert s["mean"] == 0 and s["sd"] == 0
    assert math.isnan(s["skewness"]) and math.isnan(s["kurtosis"])
    with pytest.raises(DomainError):
        summary_stats([1.0])


def test_determine_convention_picks_the_generating_one():
    rng = np.random.default_rng(2)
    x = rng.gamma(0.5, 3.0, 300)
    mc = moment_conventions(x)
    assert determine_convention(x, mc["sample_skew"], mc["sample_excess"]) == ["sample_excess"]
    assert "population_raw" in determine_convention(x, mc["pop_skew"], mc["pop_kurt"])


# --- samples ---------------------------------------------------------------------

def test_count_sample_validation():
    with pytest.raises(DomainError):
        CountSample(np.array([], dtype=int))
    with pytest.raises(DomainError):
        CountSample(np.array([1, -1]))
    with pytest.raises(DomainError):
        CountSample(np.array([1.5]))
    assert CountSample(np.array([3.0, 0.0])).counts.dtype == np.int64


# --- maximum likelihood -------------------------------------------------------------

def test_poisson_mle_and_analytic_se():
    rng = np.random.default_rng(3)
    s = CountSample(rng.poisson(4.2, 3000))
    fit = mle_fit("Poisson", s)
    lam = s.counts.mean()
    assert fit.estimates[0] == pytest.approx(lam, rel=1e-6)
    assert fit.std_errors[0] == pytest.approx(math.sqrt(lam / s.n), rel=1e-4)


def test_information_criteria_identities():
    rng = np.random.default_rng(4)
    s = CountSample(draw_counts(Waring(2.0, 1.5), 1000, rng))
    fit = mle_fit("Waring", s)
    assert fit.aic == -2 * fit.log_likelihood + 2 * fit.k
    assert fit.bic == -2 * fit.log_likelihood + fit.k * math.log(fit.n)
    assert information_criteria(fit.log_likelihood, fit.k, fit.n) == (fit.aic, fit.bic)
    assert fit.log_likelihood == pytest.approx(log_likelihood(fit.model(), s), rel=1e-14)


@settings(max_examples=10)
@given(st.integers(0, 10_000))
def test_optimum_beats_every_start(seed):
    rng = np.random.default_rng(seed)
    s = CountSample(draw_counts(Yule(1.2), 400, rng))
    for family in ("Yule", "Waring"):
        fit = mle_fit(family, s, FitOptions(starts=3))
        assert fit.start_logliks
        assert all(fit.log_likelihood >= ll - 1e-9 for ll in fit.start_logliks)


def test_reparameterisation_invariance():
    rng = np.random.default_rng(5)
    s = CountSample(draw_counts(Waring(2.5, 1.3), 3000, rng))
    fit = mle_fit("Waring", s)
    values, freq = s.tabulate()

    def nll(q):
        # square-root parameters instead of logs
        a, b = q ** 2
        if a <= 0 or b <= 0:
            return math.inf
        return -float(np.dot(freq, Waring(a, b).log_pmf(values)))

    res = optimize.minimize(nll, np.sqrt(fit.estimates) * 1.05, method="Nelder-Mead",
                            options=dict(xatol=1e-12, fatol=1e-13, maxiter=20000))
    assert np.allclose(res.x ** 2, fit.estimates, rtol=0, atol=1e-6)


@pytest.mark.parametrize("model,family", [(Yule(0.9), "Yule"), (Waring(3.0, 0.9), "Waring"),
                                          (ZY(1.1, 5.0), "ZY")], ids=str)
def test_parameter_recovery(model, family):
    rng = np.random.default_rng(20)
    s = CountSample(draw_counts(model, 50_000, rng))
    fit = mle_fit(family, s)
    assert fit.converged
    z = (fit.estimates - np.array(model.params)) / fit.std_errors
    assert np.all(np.abs(z) < 3), z


def test_singleton_not_identifiable():
    s = CountSample(np.array([3]))
    for family in ("Waring", "ZY", "GZY", "HGZY", "GW2"):
        fit = mle_fit(family, s)
        assert fit.status == "non-identifiable" and not fit.converged


def test_unknown_family():
    with pytest.raises(DomainError):
        mle_fit("Nope", CountSample(np.array([1, 2])))


def test_std_errors_wrapper_and_hessian_error():
    rng = np.random.default_rng(6)
    s = CountSample(draw_counts(Yule(1.5), 2000, rng))
    fit = mle_fit("Yule", s)
    assert np.allclose(std_errors(fit, s), fit.std_errors, rtol=1e-10)
    with pytest.raises(HessianError) as info:
        hessian_std_errors(lambda t: -float(t @ t), np.zeros(2), np.ones(2))
    assert np.all(info.value.eigenvalues < 0)


# --- chi-square goodness of fit ------------------------------------------------------

def test_pearson_cells_partition():
    rng = np.random.default_rng(7)
    model = Waring(3.0, 0.8)
    s = CountSample(draw_counts(model, 2182, rng))
    rep = chisq_gof(model, s, 2)
    assert sum(o for _, o, _ in rep.cells) == s.n
    assert sum(e for _, _, e in rep.cells) / s.n == pytest.approx(1.0, abs=1e-12)
    assert all(e >= 10 for _, _, e in rep.cells[:-1])
    assert rep.df == len(rep.cells) - 2 - 1
    assert rep.p_value == pytest.approx(stats.chi2.sf(rep.statistic, rep.df), rel=1e-10)


def test_pearson_cells_catch_all_by_complement():
    cells = pearson_cells([0, 1, 2], [0.5, 0.3, 0.004], [48, 31, 1], 100)
    assert [c[0] for c in cells] == [0, 1, "rest"]
    assert cells[-1] == ("rest", 21, pytest.approx(20.0, abs=1e-12))


def test_chisq_too_few_cells():
    s = CountSample(np.zeros(30, dtype=int))
    with pytest.raises(DomainError):
        chisq_gof(Poisson(0.01), s, 1)


def test_chisq_minimized_not_above_at_mle():
    rng = np.random.default_rng(8)
    s = CountSample(draw_counts(Waring(3.0, 0.8), 2182, rng))
    fit = mle_fit("Waring", s)
    at = chisq_gof(fit.model(), s, 2)
    mn = chisq_gof(fit.model(), s, 2, mode="minimized", family="Waring")
    assert mn.statistic <= at.statistic + 1e-9
    assert mn.df == at.df


# --- family comparison -----------------------------------------------------------------

def test_fit_all_hg_ranking_and_reporting():
    rng = np.random.default_rng(9)
    s = CountSample(draw_counts(Waring(3.0, 0.8), 1500, rng))
    reports = fit_all_hg(s, families=("Zeta", "Yule", "Waring", "ZY"))
    assert {r.fit.family for r in reports} == {"Zeta", "Yule", "Waring", "ZY"}
    kept = [r for r in reports if r.ic_reported]
    assert [r.fit.aic for r in kept] == sorted(r.fit.aic for r in kept)
    assert any(r.fit.family == "Waring" for r in kept)
    for r in reports:
        if r.gof is not None:
            assert r.rejected == (r.gof.p_value < 0.05)


def test_fit_all_hg_singleton():
    reports = fit_all_hg(CountSample(np.array([3])))
    assert len(reports) == len(HG_FAMILIES)
    for r in reports:
        if r.fit.k > 1:
            assert r.fit.status == "non-identifiable"

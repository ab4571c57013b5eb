import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from heavyfreq.calibrative import (PROPER, QUASI, BaseDensity, as_base, calibrate_general,
                                   calibrate_up, calibrated, classify, poisson_mix_density,
                                   tail_index, verify_mixture)
from heavyfreq.distributions import (GB1, ZY, Beta, GSigmaB, Kumaraswamy, LogitNormal, SigmaB,
                                     SigmaBLimit, Waring, Yule)
from heavyfreq.numerics import DomainError, SigmaBArgs, riemann_zeta, sigma_b

P5 = np.array([0.03, 0.2, 0.45, 0.7, 0.95])


def _logit_mass(g):
    """Integral of a signed density g(ln p, ln(1-p)) over (0, 1) in logit coordinates."""
    x, w = np.polynomial.legendre.leggauss(20)
    edges = np.linspace(-120.0, 60.0, 601)
    half = 0.5 * np.diff(edges)
    v = (0.5 * (edges[1:] + edges[:-1])[:, None] + half[:, None] * x).ravel()
    wv = (half[:, None] * w).ravel()
    lp, lq = -np.logaddexp(0, -v), -np.logaddexp(0, v)
    return float(np.dot(wv, np.asarray(g(lp, lq)) * np.exp(lp + lq)))


def _direct_up(f, r, p):
    """The defining r > 1 integral without any substitution."""
    g = lambda w: (w - p) ** (r - 2) * (1 - w) * w ** (1 - r) * f(w)
    val = integrate.quad(g, p, 1, epsabs=0, epsrel=1e-13, limit=200)[0]
    return (r - 1) * (1 - p) ** -r * val


# --- calibrate_up -----------------------------------------------------------

def test_calibrate_up_near_one_recovers_base():
    base = Beta(2.0, 3.0)
    got = calibrate_up(base, 1 + 1e-6, P5)
    assert np.allclose(got, base.pdf(P5), rtol=1e-4, atol=0)


def test_calibrate_up_regenerates_waring():
    g = calibrated(Beta(2.0, 3.0), 2.0)
    assert verify_mixture(Waring(2.0, 3.0), g, 2.0, 30, 1e-8).passed


@pytest.mark.parametrize("base,r", [(SigmaB(1.0, 1.0), 3.0), (SigmaB(2.0, 0.5), 3.0),
                                    (Beta(0.7, 1.5), 2.5), (Beta(2.0, 3.0), 6.0)])
def test_calibrate_up_matches_untransformed_integral(base, r):
    for p in (0.05, 0.3, 0.6, 0.9):
        assert calibrate_up(base, r, p) == pytest.approx(_direct_up(base.pdf, r, p), rel=1e-10)


def test_calibrate_up_uniform_base_closed_form():
    # base uniform, r = 3: f(p) = 2 (1-p)^-3 int_p^1 (w-p)(1-w) w^-2 dw
    p = 0.3
    closed = 2 * (1 - p) ** -3 * ((1 + p) * -math.log(p) - 2 * (1 - p))
    assert calibrate_up(SigmaB(1.0, 1.0), 3.0, p) == pytest.approx(closed, rel=1e-10)


def test_calibrate_up_large_r_normalised():
    g = calibrated(Beta(3.7, 0.73), 110.6)
    assert _logit_mass(g) == pytest.approx(1.0, abs=1e-7)


def test_calibrate_up_domain():
    with pytest.raises(DomainError):
        calibrate_up(Beta(1, 1), 1.0, 0.5)
    with pytest.raises(DomainError):
        calibrate_up(Beta(1, 1), 2.0, 1.0)


@settings(max_examples=10)
@given(st.sampled_from([Beta(0.6, 2.0), Beta(2.0, 0.8), SigmaB(1.2, 3.0), GB1(1.2, 1.5, 0.8),
                        GSigmaB(0.5, 1.1, 2.0)]),
       st.floats(1.05, 12.0))
def test_calibrate_up_integrates_to_one(base, r):
    assert _logit_mass(calibrated(base, r)) == pytest.approx(1.0, abs=1e-7)


# --- calibrate_general ------------------------------------------------------

def test_calibrate_general_proper_case_nonnegative():
    p = (np.arange(200) + 0.5) / 200
    assert np.all(calibrate_general(Beta(0.5, 1.0), 0.7, p) >= 0)


@pytest.mark.parametrize("base", [Beta(1.0, 1.0), SigmaB(1.2, 2.0)])
def test_calibrate_general_negative_near_zero(base):
    p = np.array([1e-6, 1e-4, 1e-3])
    assert np.all(calibrate_general(base, 0.5, p) < -1e-12)


@pytest.mark.parametrize("base,r", [(Beta(1.0, 1.0), 0.5), (Beta(0.5, 1.0), 0.7),
                                    (SigmaB(1.2, 2.0), 0.5), (Beta(2.0, 3.0), 0.4)])
def test_calibrate_general_signed_mass_one(base, r):
    assert _logit_mass(calibrated(base, r)) == pytest.approx(1.0, abs=1e-6)


def test_calibrate_general_domain():
    with pytest.raises(DomainError):
        calibrate_general(Beta(1, 1), 1.0, 0.5)


# --- classify ---------------------------------------------------------------

CLASSIFY_CASES = [
    (Beta(2.0, 3.0), 0.5, QUASI),
    (Beta(1.0, 1.0), 0.5, QUASI),
    (Beta(0.5, 1.0), 0.3, QUASI),
    (Beta(0.5, 1.0), 0.7, PROPER),
    (Beta(0.4, 2.0), 0.4, PROPER),
    (SigmaB(1.2, 2.0), 0.5, QUASI),
    (Kumaraswamy(0.5, 0.3), 0.3, QUASI),
]


@pytest.mark.parametrize("base,r,verdict", CLASSIFY_CASES, ids=repr)
def test_classify_verdicts(base, r, verdict):
    res = classify(base, r)
    assert res.verdict == verdict
    if verdict == QUASI:
        p, v = res.witness
        assert v <= -1e-12
        assert calibrate_general(base, r, p) == pytest.approx(v, rel=1e-6)


@pytest.mark.parametrize("base,r,verdict", CLASSIFY_CASES, ids=repr)
def test_classify_agrees_with_direct_sign(base, r, verdict):
    vals = calibrate_general(base, r, np.array([1e-4, 1e-3, 1e-2]), check=False)
    grid = calibrate_general(base, r, 10.0 ** -np.arange(30, 1, -0.5), check=False)
    negative = bool(np.any(vals < -1e-12) or np.any(grid < -1e-12))
    assert negative == (verdict == QUASI)


def test_kumaraswamy_is_boundary_case():
    # -p f'/f -> 1 - c = 1 - r exactly, so the sufficient conditions are silent
    res = classify(Kumaraswamy(0.5, 0.3), 0.3)
    assert "boundary" in res.reason


def test_classify_domain():
    with pytest.raises(DomainError):
        classify(Beta(1, 1), 1.5)


# --- Poisson mixing densities -----------------------------------------------

def _quad_halfline(g):
    return integrate.quad(g, 0, np.inf, epsabs=0, epsrel=1e-13, limit=400)[0]


@pytest.mark.parametrize("lam", [0.05, 0.7, 3.0, 25.0])
def test_poisson_mix_beta(lam):
    a, b = 2.5, 1.3
    oracle = _quad_halfline(lambda y: y ** b / (y + 1) ** (a + b) * math.exp(-y * lam)) \
        / math.exp(special.betaln(a, b))
    assert poisson_mix_density(Beta(a, b), lam) == pytest.approx(oracle, rel=1e-10)


@pytest.mark.parametrize("lam", [0.05, 0.7, 3.0])
def test_poisson_mix_sigma_b(lam):
    b, c = 1.2, 2.5
    s = sigma_b(SigmaBArgs(1 / c, 1 / c, b))
    oracle = _quad_halfline(lambda y: c * (1 - (1 + y) ** -c) ** b * math.exp(-lam * y)
                            / ((1 + y) * s))
    assert poisson_mix_density(SigmaB(b, c), lam) == pytest.approx(oracle, rel=1e-10)


@pytest.mark.parametrize("lam", [0.05, 0.7, 3.0])
def test_poisson_mix_sigma_b_limit(lam):
    b = 0.8
    norm = riemann_zeta(b + 1) * math.gamma(b + 1)
    oracle = _quad_halfline(lambda y: math.log1p(y) ** b * math.exp(-lam * y) / ((1 + y) * norm))
    assert poisson_mix_density(SigmaBLimit(b), lam) == pytest.approx(oracle, rel=1e-10)


@pytest.mark.parametrize("base,model", [(Beta(2.0, 3.0), Waring(2.0, 3.0)),
                                        (Beta(1.0, 1.5), Yule(1.5)),
                                        (SigmaB(1.2, 2.0), ZY(1.2, 2.0))])
def test_poisson_composition_reproduces_pmf(base, model):
    # int Poisson(x | lam) f_lambda(lam) dlam in t = ln lam
    x, w = np.polynomial.legendre.leggauss(20)
    edges = np.linspace(-40.0, 6.0, 461)
    half = 0.5 * np.diff(edges)
    t = (0.5 * (edges[1:] + edges[:-1])[:, None] + half[:, None] * x).ravel()
    wt = (half[:, None] * w).ravel()
    lam = np.exp(t)
    dens = poisson_mix_density(base, lam) * lam * wt
    k = np.arange(21)
    pois = np.exp(k[:, None] * t[None, :] - lam[None, :] - special.gammaln(k + 1)[:, None])
    assert np.max(np.abs(pois @ dens - model.pmf(k))) < 1e-7


def test_poisson_mix_domain():
    with pytest.raises(DomainError):
        poisson_mix_density(Beta(1, 1), 0.0)


# --- verify_mixture -----------------------------------------------------------

@pytest.mark.parametrize("model,density,tol", [
    (Yule(1.7), Beta(1.0, 1.7), 1e-9),
    (ZY(1.0909, 60.8621), SigmaB(1.0909, 60.8621), 1e-8),
    (ZY(0.7, 3.0), SigmaB(0.7, 3.0), 1e-8),
    (ZY(1.0909, 0.0), SigmaBLimit(1.0909), 1e-8),
], ids=repr)
def test_verify_mixture_examples(model, density, tol):
    rep = verify_mixture(model, density, 1.0, 50, tol)
    assert rep.passed, rep.max_abs_error


def test_verify_mixture_detects_wrong_density():
    rep = verify_mixture(Yule(1.7), Beta(1.0, 1.8), 1.0, 20, 1e-9)
    assert not rep.passed
    assert rep.max_abs_error > 1e-3


# --- tail index ----------------------------------------------------------------

@pytest.mark.parametrize("base,limit", [(GB1(0.7, 1.4, 2.2), 0.4), (SigmaB(1.09, 60.86), 0.09),
                                        (SigmaB(0.3, 2.0), -0.7), (Beta(2.0, 3.0), 2.0)], ids=repr)
def test_tail_index_heavy(base, limit):
    rep = tail_index(base)
    assert rep.heavy
    assert rep.limit_estimate == pytest.approx(limit, abs=1e-3)
    assert rep.delta_floor == pytest.approx(limit + 1, abs=1e-3)


def test_tail_index_logit_normal_not_heavy():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = tail_index(LogitNormal(0.0, 1.0))
    assert not rep.heavy
    assert math.isinf(rep.limit_estimate)


# --- BaseDensity ----------------------------------------------------------------

def test_numeric_fallback_base_matches_analytic():
    model = Beta(0.7, 2.2)
    analytic = as_base(model)
    numeric = BaseDensity.from_log_pdf(model.log_pdf_logs, math.inf, 0.3)
    p = np.linspace(0.05, 0.95, 19)
    assert np.allclose(numeric.dlog(p), analytic.dlog(p), rtol=1e-5, atol=1e-5)
    assert calibrate_up(numeric, 2.0, 0.4) == pytest.approx(calibrate_up(model, 2.0, 0.4), rel=1e-12)


def test_as_base_rejects_other_types():
    with pytest.raises(DomainError):
        as_base(3.0)

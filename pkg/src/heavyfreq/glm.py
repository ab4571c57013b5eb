"""Poisson and negative binomial regression with log link and exposure offset."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .numerics import DomainError, chisq_upper_tail

# (coefficient label, record attribute, number of levels)
FACTORS = (
    ("KILO", "kilometres", 5),
    ("ZONE", "zone", 7),
    ("BONUS", "bonus", 7),
    ("MAKE", "make", 9),
)

R_DIVERGENT = 1e8


class RankError(DomainError):
    """Design matrix does not have full column rank."""


@dataclass(frozen=True)
class RiskRecord:
    kilometres: int
    zone: int
    bonus: int
    make: int
    exposure: float
    claims: int
    payment: float = 0.0


@dataclass
class Design:
    matrix: np.ndarray
    names: list
    offset: np.ndarray
    response: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def encode_design(records: Sequence[RiskRecord], factors: Sequence[str] = None) -> Design:
    """Treatment coding with level 1 of each factor as the baseline.

    ``factors`` selects a subset of the labels in ``FACTORS``; the default
    uses all four.
    """
    if len(records) == 0:
        raise DomainError("no records")
    chosen = [f for f in FACTORS if factors is None or f[0] in factors]
    if factors is not None and len(chosen) != len(set(factors)):
        raise DomainError(f"unknown factor in {list(factors)}")
    n = len(records)
    cols = [np.ones(n)]
    names = ["(Intercept)"]
    for label, attr, levels in chosen:
        vals = np.array([getattr(rec, attr) for rec in records])
        bad = np.flatnonzero((vals < 1) | (vals > levels) | (vals != np.round(vals)))
        if bad.size:
            i = int(bad[0])
            raise DomainError(f"row {i + 1}: {attr}={vals[i]} outside 1..{levels}")
        for j in range(2, levels + 1):
            cols.append((vals == j).astype(float))
            names.append(f"{label}{j}")
    exposure = np.array([rec.exposure for rec in records], dtype=float)
    bad = np.flatnonzero(~(exposure > 0))
    if bad.size:
        raise DomainError(f"row {int(bad[0]) + 1}: exposure must be positive")
    y = np.array([rec.claims for rec in records], dtype=float)
    if np.any(y < 0):
        raise DomainError(f"row {int(np.flatnonzero(y < 0)[0]) + 1}: negative claims")
    return Design(np.column_stack(cols), names, np.log(exposure), y)


def _check_rank(design: Design) -> None:
    x = design.matrix
    rank = np.linalg.matrix_rank(x)
    if rank == x.shape[1]:
        return
    # columns that add nothing to the span of the ones before them
    dependent = []
    for j in range(x.shape[1]):
        if np.linalg.matrix_rank(x[:, : j + 1]) <= j - len(dependent):
            dependent.append(design.names[j])
    raise RankError(f"design is rank deficient; collinear columns: {', '.join(dependent)}")


@dataclass
class GLMFit:
    observation_family: str
    names: list
    coefficients: np.ndarray
    std_errors: np.ndarray
    log_likelihood: float
    residual_deviance: float
    df: int
    deviance_p_value: float
    fitted_mu: np.ndarray
    r_hat: Optional[float] = None
    r_se: Optional[float] = None
    r_divergent: bool = False
    iterations: int = 0
    status: str = "ok"
    extra: dict = field(default_factory=dict)

    @property
    def z_values(self) -> np.ndarray:
        return self.coefficients / self.std_errors

    @property
    def n_params(self) -> int:
        return self.coefficients.size + (1 if self.observation_family == "NegativeBinomial" else 0)

    @property
    def aic(self) -> float:
        return -2.0 * self.log_likelihood + 2.0 * self.n_params

    @property
    def bic(self) -> float:
        return -2.0 * self.log_likelihood + self.n_params * math.log(self.fitted_mu.size)

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])


def _as_design(data) -> Design:
    return data if isinstance(data, Design) else encode_design(data)


def _poisson_loglik(y, mu):
    return float(np.sum(special.xlogy(y, mu) - mu - special.gammaln(y + 1)))


def _poisson_deviance(y, mu):
    return float(2.0 * np.sum(special.xlogy(y, y / mu) - (y - mu)))


def _nb_loglik(y, mu, r):
    return float(np.sum(special.gammaln(y + r) - special.gammaln(r) - special.gammaln(y + 1)
                        + r * (np.log(r) - np.log(r + mu)) + special.xlogy(y, mu / (r + mu))))


def _nb_deviance(y, mu, r):
    return float(2.0 * np.sum(special.xlogy(y, y / mu) - (y + r) * np.log((y + r) / (mu + r))))


def _irls(design: Design, weight_fn, deviance_fn, beta0=None, tol=1e-10, max_iter=100):
    """Weighted least squares iterations for a log-link model."""
    x, y, off = design.matrix, design.response, design.offset
    if beta0 is None:
        mu = y + 0.1 * max(float(np.mean(y)), 1.0) + 0.1
        eta = np.log(mu)
    else:
        eta = x @ beta0 + off
        mu = np.exp(eta)
    dev_old = deviance_fn(y, mu)
    beta = beta0
    for it in range(1, max_iter + 1):
        w = weight_fn(mu)
        z = eta - off + (y - mu) / mu
        sw = np.sqrt(w)
        beta_new, *_ = np.linalg.lstsq(x * sw[:, None], z * sw, rcond=None)
        # halve the step if the deviance goes up
        for _ in range(30):
            eta_new = x @ beta_new + off
            mu_new = np.exp(eta_new)
            dev = deviance_fn(y, mu_new)
            if beta is None or (math.isfinite(dev) and dev <= dev_old * (1 + 1e-12)):
                break
            beta_new = 0.5 * (beta_new + beta)
        beta, eta, mu = beta_new, eta_new, mu_new
        change = abs(dev - dev_old) / (abs(dev) + 0.1)
        dev_old = dev
        if change < tol:
            return beta, mu, it
    return beta, mu, max_iter


def fit_poisson(data) -> GLMFit:
    """Poisson regression by IRLS (relative deviance change below 1e-10)."""
    design = _as_design(data)
    _check_rank(design)
    y = design.response
    beta, mu, its = _irls(design, lambda m: m, _poisson_deviance)
    info = design.matrix.T @ (design.matrix * mu[:, None])
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    dev = _poisson_deviance(y, mu)
    df = design.n - beta.size
    return GLMFit("Poisson", list(design.names), beta, se, _poisson_loglik(y, mu), dev, df,
                  chisq_upper_tail(dev, df) if df > 0 else math.nan, mu, iterations=its)


def _r_score(y, mu, r):
    """First and second derivatives of the NB log-likelihood in ln r."""
    s1 = np.sum(special.digamma(y + r) - special.digamma(r) + np.log(r) + 1.0
                - np.log(r + mu) - (r + y) / (r + mu))
    s2 = np.sum(special.polygamma(1, y + r) - special.polygamma(1, r) + 1.0 / r
                - 2.0 / (r + mu) + (r + y) / (r + mu) ** 2)
    # chain rule to theta = ln r
    return r * s1, r * r * s2 + r * s1


def _update_log_r(y, mu, log_r, max_steps=50):
    """Newton steps on ln r with step halving, for fixed mu."""
    ll = _nb_loglik(y, mu, math.exp(log_r))
    for _ in range(max_steps):
        g, h = _r_score(y, mu, math.exp(log_r))
        step = -g / h if h < 0 else math.copysign(1.0, g)
        step = max(min(step, 2.0), -2.0)
        for _ in range(40):
            cand = log_r + step
            ll_new = _nb_loglik(y, mu, math.exp(cand))
            if ll_new >= ll - 1e-12:
                break
            step *= 0.5
        moved = abs(cand - log_r)
        log_r, ll = cand, ll_new
        if moved < 1e-12 or log_r > math.log(R_DIVERGENT):
            break
    return log_r


def _initial_r(y, mu):
    excess = np.sum((y - mu) ** 2 - y)
    if excess <= 0:
        return R_DIVERGENT
    return float(np.sum(mu ** 2) / excess)


def _nb_joint_information(design: Design, mu, r):
    """Observed information of (beta, r)."""
    x, y = design.matrix, design.response
    d_eta = r * mu * (r + y) / (r + mu) ** 2
    d_cross = -(y - mu) * mu / (r + mu) ** 2
    d_rr = -(special.polygamma(1, y + r) - special.polygamma(1, r) + 1.0 / r
             - 2.0 / (r + mu) + (r + y) / (r + mu) ** 2)
    k = x.shape[1]
    info = np.empty((k + 1, k + 1))
    info[:k, :k] = x.T @ (x * d_eta[:, None])
    info[:k, k] = info[k, :k] = x.T @ d_cross
    info[k, k] = np.sum(d_rr)
    return info


def fit_negbin(data, r_fixed: float = None, tol: float = 1e-8, max_outer: int = 200) -> GLMFit:
    """NB regression with variance mu + mu^2/r.

    IRLS for the coefficients alternates with Newton steps on ln r until the
    joint relative change is below ``tol``.  With ``r_fixed`` only the
    coefficients are estimated.
    """
    design = _as_design(data)
    _check_rank(design)
    y = design.response
    pois = fit_poisson(design)
    beta, mu = pois.coefficients, pois.fitted_mu
    log_r = math.log(r_fixed) if r_fixed is not None else math.log(_initial_r(y, mu))
    divergent = False
    its = 0
    for its in range(1, max_outer + 1):
        r = math.exp(log_r)
        beta_new, mu, _ = _irls(design, lambda m: m / (1.0 + m / r),
                                lambda yy, m: _nb_deviance(yy, m, r), beta0=beta, tol=1e-12)
        new_log_r = log_r if r_fixed is not None else _update_log_r(y, mu, log_r)
        change = max(float(np.max(np.abs(beta_new - beta) / (np.abs(beta_new) + 1e-8))),
                     abs(new_log_r - log_r) / max(abs(new_log_r), 1.0))
        beta, log_r = beta_new, new_log_r
        if r_fixed is None and log_r > math.log(R_DIVERGENT):
            divergent = True
            break
        if change < tol:
            break
    r = math.exp(log_r)
    k = beta.size
    if divergent:
        # the Poisson limit: report Poisson coefficients with the flag set
        fit = GLMFit("NegativeBinomial", list(design.names), pois.coefficients, pois.std_errors,
                     pois.log_likelihood, pois.residual_deviance, design.n - k - 1, math.nan,
                     pois.fitted_mu, r_hat=math.inf, r_se=math.nan, r_divergent=True,
                     iterations=its, status="Poisson-equivalent")
        fit.deviance_p_value = chisq_upper_tail(fit.residual_deviance, fit.df)
        return fit
    info = _nb_joint_information(design, mu, r)
    if r_fixed is not None:
        cov = np.linalg.inv(info[:k, :k])
        se, r_se = np.sqrt(np.diag(cov)), None
    else:
        cov = np.linalg.inv(info)
        se, r_se = np.sqrt(np.diag(cov)[:k]), float(math.sqrt(cov[k, k]))
    dev = _nb_deviance(y, mu, r)
    df = design.n - k - (0 if r_fixed is not None else 1)
    return GLMFit("NegativeBinomial", list(design.names), beta, se, _nb_loglik(y, mu, r), dev, df,
                  chisq_upper_tail(dev, df) if df > 0 else math.nan, mu, r_hat=r, r_se=r_se,
                  iterations=its)


@dataclass
class MixingSample:
    kind: str
    values: np.ndarray
    r_hat: Optional[float] = None


def derive_mixing_sample(fit: GLMFit, kind: str) -> MixingSample:
    """lambda_i = mu_i for a Poisson fit; p_i = mu_i / (mu_i + r) for an NB fit."""
    mu = np.asarray(fit.fitted_mu, dtype=float)
    if kind == "lambda":
        return MixingSample("lambda", mu.copy(), fit.r_hat)
    if kind != "p":
        raise DomainError(f"unknown kind {kind!r}")
    if fit.r_hat is None or not math.isfinite(fit.r_hat):
        raise DomainError("a p sample needs a finite r estimate")
    return MixingSample("p", mu / (mu + fit.r_hat), fit.r_hat)


@dataclass
class SubsetRow:
    family: str
    factors: tuple
    log_likelihood: float
    aic: float
    bic: float


def subset_search(records: Sequence[RiskRecord]) -> list[SubsetRow]:
    """AIC and BIC for every subset of the rating factors under both families."""
    labels = [f[0] for f in FACTORS]
    rows = []
    for size in range(len(labels) + 1):
        for subset in itertools.combinations(labels, size):
            design = encode_design(records, subset)
            for family, fitter in (("Poisson", fit_poisson), ("NegativeBinomial", fit_negbin)):
                fit = fitter(design)
                rows.append(SubsetRow(family, subset, fit.log_likelihood, fit.aic, fit.bic))
    return rows


def best_subsets(rows: Sequence[SubsetRow]) -> dict:
    """Subset minimising each criterion, keyed by (family, criterion)."""
    out = {}
    for family in sorted({r.family for r in rows}):
        mine = [r for r in rows if r.family == family]
        out[(family, "aic")] = min(mine, key=lambda r: r.aic).factors
        out[(family, "bic")] = min(mine, key=lambda r: r.bic).factors
    return out

"""Fit Poisson-rate and NB-probability mixing densities to regression-implied samples."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import special
from scipy.interpolate import PchipInterpolator

from .calibrative import _logit_grid, as_base, calibrate_up_log, poisson_mix_log_density
from .distributions import make_count_model, r1_mixing_density
from .estimation import (FAMILIES, FitOptions, FitResult, GofReport, _jacobian, _to_free,
                         _to_natural, fit_from_nll, pearson_cells, pearson_statistic)
from .glm import MixingSample
from .numerics import AccuracyError, DomainError, chisq_upper_tail

MIXING_TARGETS = ("HGZY", "GZY", "Waring")

KNOTS = 200
KNOT_TOL = 1e-4
MAX_KNOTS = 6400

# each likelihood evaluation costs hundreds of quadratures, so explore less and
# stop at a tolerance matched to the knot interpolation
MIXING_OPTIONS = FitOptions(starts=3, explore_evals=100, polish_evals=400, max_restarts=2,
                            tol=1e-6, xatol=1e-5)


@dataclass(frozen=True)
class MixingTarget:
    family: str
    kind: str
    r_hat: Optional[float] = None

    def __post_init__(self):
        if self.family not in MIXING_TARGETS:
            raise DomainError(f"mixing family must be one of {MIXING_TARGETS}")
        if self.kind not in ("lambda", "p"):
            raise DomainError(f"unknown kind {self.kind!r}")
        if self.kind == "p" and (self.r_hat is None or not self.r_hat > 1):
            raise DomainError("a p target needs r > 1")


def base_density(family: str, params):
    """NB(r = 1) mixing density of the count family, as a calibration base."""
    return as_base(r1_mixing_density(make_count_model(family, params)))


def lambda_log_density(family: str, params, lam, check: bool = True):
    """ln of the Poisson-rate mixing density generating the count family."""
    return poisson_mix_log_density(base_density(family, params), lam, check)


def lambda_density(family: str, params, lam):
    out = np.exp(lambda_log_density(family, params, lam))
    return float(out[0]) if np.ndim(lam) == 0 else out


def p_log_density_at_r(family: str, params, r: float, p, check: bool = True):
    """ln of the NB(r) probability mixing density generating the count family."""
    if not r > 1:
        raise DomainError("p densities are computed for r > 1")
    return calibrate_up_log(base_density(family, params), r, p, check)


def p_density_at_r(family: str, params, r: float, p):
    out = np.exp(p_log_density_at_r(family, params, r, p))
    return float(out[0]) if np.ndim(p) == 0 else out


def lambda_survival(family: str, params, t):
    """Pr{lambda > t}: given p, lambda is exponential with rate (1 - p) / p."""
    base = base_density(family, params)
    v, w = _logit_grid()
    lp, lq = -np.logaddexp(0.0, -v), -np.logaddexp(0.0, v)
    with np.errstate(over="ignore", invalid="ignore"):
        log_f = base.log_pdf(lp, lq) + lp + lq
    t = np.atleast_1d(np.asarray(t, dtype=float))
    log_terms = np.log(w) + log_f - t[:, None] * np.exp(-v)
    return np.exp(special.logsumexp(log_terms, axis=1))


# ---------------------------------------------------------------------------
# likelihood on a sample, exact or through knots
# ---------------------------------------------------------------------------

def _coord(kind: str, values):
    values = np.asarray(values, dtype=float)
    return np.log(values) if kind == "lambda" else special.logit(values)


def _from_coord(kind: str, t):
    return np.exp(t) if kind == "lambda" else special.expit(t)


def _exact_log_density(target: MixingTarget, params, values, check: bool = True):
    if target.kind == "lambda":
        return lambda_log_density(target.family, params, values, check)
    return p_log_density_at_r(target.family, params, target.r_hat, values, check)


def exact_log_likelihood(target: MixingTarget, params, values) -> float:
    """Sum of ln densities, one quadrature per distinct sample value."""
    uniq, counts = np.unique(np.asarray(values, dtype=float), return_inverse=False,
                             return_counts=True)
    return float(np.dot(counts, _exact_log_density(target, params, uniq)))


def _knot_grid(t, knots):
    lo, hi = float(t.min()), float(t.max())
    pad = 1e-6 * max(hi - lo, 1.0)
    return np.linspace(lo - pad, hi + pad, knots)


def knot_log_likelihood(target: MixingTarget, params, values, knots: int = KNOTS,
                        tol: float = KNOT_TOL) -> tuple[float, int]:
    """Log-likelihood from a monotone cubic fit to ln density at knots.

    Knots are equally spaced in ln lambda (or logit p) over the sample range
    and doubled until the log-likelihood moves by less than ``tol``.
    Returns the value and the knot count used.
    """
    t = _coord(target.kind, values)
    grid = _knot_grid(t, knots)
    vals = _exact_log_density(target, params, _from_coord(target.kind, grid))
    ll = float(np.sum(PchipInterpolator(grid, vals)(t)))
    while knots < MAX_KNOTS:
        mid = 0.5 * (grid[1:] + grid[:-1])
        mid_vals = _exact_log_density(target, params, _from_coord(target.kind, mid))
        new_grid = np.empty(2 * knots - 1)
        new_vals = np.empty(2 * knots - 1)
        new_grid[0::2], new_grid[1::2] = grid, mid
        new_vals[0::2], new_vals[1::2] = vals, mid_vals
        grid, vals, knots = new_grid, new_vals, 2 * knots - 1
        ll_new = float(np.sum(PchipInterpolator(grid, vals)(t)))
        if abs(ll_new - ll) < tol:
            return ll_new, knots
        ll = ll_new
    raise AccuracyError("knot refinement did not settle", ll)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def _check_support(sample: MixingSample, target: MixingTarget):
    v = np.asarray(sample.values, dtype=float)
    if v.size == 0:
        raise DomainError("empty mixing sample")
    if target.kind != sample.kind:
        raise DomainError(f"target kind {target.kind} does not match sample kind {sample.kind}")
    if target.kind == "lambda" and np.any(~(v > 0)):
        raise DomainError("lambda values must be positive")
    if target.kind == "p" and np.any(~((v > 0) & (v < 1))):
        raise DomainError("p values must lie in (0, 1)")
    return v


def default_center(target: MixingTarget, sample: MixingSample):
    """Start point from the count family's own start rule on a count-scale proxy."""
    from .estimation import CountSample
    v = np.asarray(sample.values, dtype=float)
    if target.kind == "p":
        v = target.r_hat * v / (1.0 - v)
    return FAMILIES[target.family].start(CountSample(np.round(v).astype(int)))


def fit_mixing(sample: MixingSample, target: MixingTarget, options: FitOptions = MIXING_OPTIONS,
               knots: int = KNOTS) -> FitResult:
    """Maximum likelihood for the mixing density's parameters.

    The optimiser is the one used for count families; the reported
    log-likelihood is recomputed exactly at the optimum.
    """
    values = _check_support(sample, target)
    spec = FAMILIES[target.family]
    center = np.asarray(options.center if options.center is not None
                        else default_center(target, sample), dtype=float)
    state = {"boundary_hits": 0}
    t = _coord(target.kind, values)

    def make_nll(n_knots):
        # fixed knots keep the objective smooth, which the Hessian relies on
        grid = _knot_grid(t, n_knots)
        at = _from_coord(target.kind, grid)

        def nll(theta):
            if np.any(np.abs(theta) > 30.0):
                state["boundary_hits"] += 1
                return math.inf
            try:
                vals = _exact_log_density(target, _to_natural(spec, theta), at, check=False)
                ll = float(np.sum(PchipInterpolator(grid, vals)(t)))
            except (DomainError, AccuracyError, FloatingPointError, OverflowError, ValueError):
                return math.inf
            return -ll if math.isfinite(ll) else math.inf
        return nll

    # a knot count is adequate when doubling it moves the log-likelihood by < tol
    knots = (knot_log_likelihood(target, center, values, knots=knots)[1] + 1) // 2
    for _ in range(3):
        fit = fit_from_nll(target.family, spec.param_names, make_nll(knots), _to_free(spec, center),
                           values.size, lambda th: _to_natural(spec, th),
                           lambda v: _jacobian(spec, v), options, state)
        if not np.all(np.isfinite(fit.estimates)):
            break
        # refine at the optimum; refit only if the knot count was too small
        needed = (knot_log_likelihood(target, fit.estimates, values, knots=knots)[1] + 1) // 2
        if needed <= knots:
            break
        knots, center = needed, fit.estimates
    fit.diagnostics["knots"] = knots
    if np.all(np.isfinite(fit.estimates)):
        ll = exact_log_likelihood(target, fit.estimates, values)
        fit.diagnostics["knot_log_likelihood"] = fit.log_likelihood
        fit.log_likelihood = ll
        fit.aic = -2 * ll + 2 * fit.k
        fit.bic = -2 * ll + fit.k * math.log(values.size)
    fit.diagnostics["kind"] = target.kind
    fit.diagnostics["r_hat"] = target.r_hat
    return fit


# ---------------------------------------------------------------------------
# interval chi-square
# ---------------------------------------------------------------------------

def lambda_cell_edges(n_max: int) -> np.ndarray:
    return np.arange(n_max + 2, dtype=float)


def p_cell_edges(n_max: int, r: float) -> np.ndarray:
    """Edges n / (n + r): the image of the lambda edges under p = lambda / (lambda + r)."""
    n = np.arange(n_max + 2, dtype=float)
    return n / (n + r)


def _lambda_cell_masses(target, params, n_obs, min_expected):
    # survival at integers until the remaining mass cannot fill another cell
    n_max = 64
    while True:
        surv = lambda_survival(target.family, params, np.arange(n_max + 1, dtype=float))
        if surv[-1] * n_obs < min_expected or n_max > 1_000_000:
            break
        n_max *= 2
    masses = -np.diff(surv)
    return lambda_cell_edges(n_max - 1), masses


def _p_interval_mass(target, params, ta, tb, panels, order=16):
    """Integral of the p density over logit p in (ta, tb)."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(ta, tb, panels + 1)
    half = 0.5 * np.diff(edges)
    t = (0.5 * (edges[1:] + edges[:-1])[:, None] + half[:, None] * x).ravel()
    p = special.expit(t)
    log_g = p_log_density_at_r(target.family, params, target.r_hat, p)
    log_jac = -np.logaddexp(0.0, -t) - np.logaddexp(0.0, t)
    return float(np.dot(np.repeat(half, order) * np.tile(w, panels), np.exp(log_g + log_jac)))


def _p_cell_masses(target, params, n_obs, min_expected):
    masses = []
    cum = 0.0
    n = 0
    while 1.0 - cum >= min_expected / n_obs and n < 100_000:
        tb = special.logit((n + 1) / (n + 1 + target.r_hat))
        if n == 0:
            # the first cell reaches down to p = 0
            mass = _p_interval_mass(target, params, tb - 80.0, tb, 80)
        else:
            mass = _p_interval_mass(target, params, special.logit(n / (n + target.r_hat)), tb, 1)
        masses.append(mass)
        cum += mass
        n += 1
    return p_cell_edges(n - 1, target.r_hat), np.array(masses)


def interval_chisq(sample: MixingSample, target: MixingTarget, fit: FitResult,
                   min_expected: float = 10.0) -> GofReport:
    """Pearson statistic over cells (n, n+1] in lambda or their p images."""
    values = _check_support(sample, target)
    n_obs = values.size
    if target.kind == "lambda":
        edges, masses = _lambda_cell_masses(target, fit.estimates, n_obs, min_expected)
    else:
        edges, masses = _p_cell_masses(target, fit.estimates, n_obs, min_expected)
    # cells are left-open, right-closed
    idx = np.searchsorted(edges, values, side="left") - 1
    inside = (idx >= 0) & (idx < masses.size)
    observed = np.bincount(idx[inside], minlength=masses.size)
    labels = [f"({edges[i]:.6g},{edges[i + 1]:.6g}]" for i in range(masses.size)]
    cells = pearson_cells(labels, masses, observed, n_obs, min_expected)
    df = len(cells) - fit.k - 1
    if df < 1:
        raise DomainError(f"only {len(cells)} cells for {fit.k} parameters")
    stat = pearson_statistic(cells)
    return GofReport(stat, cells, df, chisq_upper_tail(stat, df), "at_mle",
                     np.asarray(fit.estimates))


@dataclass
class MixingReport:
    fit: FitResult
    gof: Optional[GofReport]
    rejected: Optional[bool]
    error: Optional[str] = None


def fit_all_mixing(sample: MixingSample, families: Sequence[str] = MIXING_TARGETS,
                   r_hat: float = None, alpha: float = 0.05,
                   options: FitOptions = MIXING_OPTIONS) -> list[MixingReport]:
    """Fit each target family; simpler families seed the richer ones."""
    r_hat = r_hat if r_hat is not None else sample.r_hat
    order = [f for f in ("Waring", "GZY", "HGZY") if f in families]
    done = {}
    reports = {}
    for fam in order:
        target = MixingTarget(fam, sample.kind, r_hat if sample.kind == "p" else None)
        center = options.center
        if fam == "GZY" and "Waring" in done:
            a, b = done["Waring"]
            center = np.array([a, b, 1.0])
        if fam == "HGZY" and "GZY" in done:
            center = np.r_[done["GZY"], 1.0]
        opts = FitOptions(**{**options.__dict__, "center": center})
        try:
            fit = fit_mixing(sample, target, opts)
        except (DomainError, AccuracyError) as exc:
            reports[fam] = MixingReport(None, None, None, str(exc))
            continue
        if fit.status == "ok":
            done[fam] = fit.estimates
        try:
            gof = interval_chisq(sample, target, fit)
            reports[fam] = MixingReport(fit, gof, gof.p_value < alpha)
        except (DomainError, AccuracyError) as exc:
            reports[fam] = MixingReport(fit, None, None, str(exc))
    return [reports[f] for f in families if f in reports]

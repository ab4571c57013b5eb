"""Maximum likelihood, standard errors and chi-square goodness of fit for count models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize, special

from .distributions import (GW2, GZY, HGZY, ZY, CountModel, GeneralizedWaring, Geometric,
                            NegativeBinomial, Poisson, Waring, Yule, Zeta)
from .numerics import AccuracyError, DomainError, chisq_upper_tail, riemann_zeta

LOG_BOUND = 30.0

# Moment convention used by summary_stats for skewness and kurtosis.  Both
# conventions are always computed; this selects which pair is reported.
MOMENT_CONVENTION = "sample_excess"


# ---------------------------------------------------------------------------
# samples and summary statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CountSample:
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1 or c.size < 1:
            raise DomainError("a count sample needs at least one observation")
        if np.any(c < 0) or np.any(c != np.floor(c)):
            raise DomainError("counts must be non-negative integers")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def n(self) -> int:
        return int(self.counts.size)

    def tabulate(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct values and their frequencies."""
        return np.unique(self.counts, return_counts=True)


def moment_conventions(values) -> dict:
    """Skewness and kurtosis under the population and sample-adjusted conventions."""
    x = np.asarray(values, dtype=float)
    n = x.size
    d = x - x.mean()
    m2 = np.mean(d ** 2)
    if m2 == 0:
        nan = math.nan
        return dict(pop_skew=nan, pop_kurt=nan, pop_excess=nan,
                    sample_skew=nan, sample_excess=nan, sample_kurt=nan)
    g1 = np.mean(d ** 3) / m2 ** 1.5
    b2 = np.mean(d ** 4) / m2 ** 2
    g2 = b2 - 3.0
    out = dict(pop_skew=g1, pop_kurt=b2, pop_excess=g2)
    if n > 3:
        G1 = g1 * math.sqrt(n * (n - 1)) / (n - 2)
        G2 = ((n + 1) * g2 + 6.0) * (n - 1) / ((n - 2) * (n - 3))
        out.update(sample_skew=G1, sample_excess=G2, sample_kurt=G2 + 3.0)
    else:
        out.update(sample_skew=math.nan, sample_excess=math.nan, sample_kurt=math.nan)
    return out


_CONVENTIONS = {
    "population_raw": ("pop_skew", "pop_kurt"),
    "population_excess": ("pop_skew", "pop_excess"),
    "sample_raw": ("sample_skew", "sample_kurt"),
    "sample_excess": ("sample_skew", "sample_excess"),
}


def determine_convention(values, skewness: float, kurtosis: float, rel_tol: float = 0.005):
    """Names of the conventions reproducing published skewness and kurtosis."""
    mc = moment_conventions(values)
    hits = []
    for name, (sk, ku) in _CONVENTIONS.items():
        if (abs(mc[sk] - skewness) <= rel_tol * abs(skewness)
                and abs(mc[ku] - kurtosis) <= rel_tol * abs(kurtosis)):
            hits.append(name)
    return hits


def summary_stats(values, convention: str = None) -> dict:
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise DomainError("summary statistics need at least two values")
    mc = moment_conventions(x)
    convention = convention or MOMENT_CONVENTION
    sk, ku = _CONVENTIONS[convention]
    return dict(n=int(x.size), min=float(x.min()), max=float(x.max()), mean=float(x.mean()),
                sd=float(x.std(ddof=1)), skewness=float(mc[sk]), kurtosis=float(mc[ku]),
                convention=convention, moments=mc)


# ---------------------------------------------------------------------------
# families available to the fitter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FamilySpec:
    name: str
    param_names: tuple[str, ...]
    build: Callable[[np.ndarray], CountModel]
    start: Callable[["CountSample"], np.ndarray]
    fixed_log: Optional[dict] = None


def _freqs(sample: CountSample):
    c = sample.counts
    f0 = max(np.mean(c == 0), 1e-3)
    f1 = max(np.mean(c == 1), 1e-3)
    return min(f0, 0.999), f1


def _start_yule(s):
    f0, _ = _freqs(s)
    return np.array([f0 / (1 - f0)])


def _start_zeta(s):
    f0, _ = _freqs(s)
    # 1 / zeta(b + 1) = f0
    g = lambda lb: 1.0 / riemann_zeta(math.exp(lb) + 1) - f0
    try:
        return np.array([math.exp(optimize.brentq(g, -8.0, 5.0))])
    except ValueError:
        return np.array([1.0])


def _start_waring(s):
    f0, f1 = _freqs(s)
    r1 = f1 / f0
    tot = r1 / (1 - f0 - r1) if 1 - f0 - r1 > 0 else 2.0
    tot = min(max(tot, 0.1), 100.0)
    return np.array([max((1 - f0) * tot, 0.05), max(f0 * tot, 0.05)])


def _start_mean(s):
    return np.array([max(s.counts.mean(), 0.1)])


def _start_nb(s):
    m, v = s.counts.mean(), s.counts.var()
    r = m * m / (v - m) if v > m else 10.0
    return np.array([max(r, 0.05), min(max(m / (m + r), 0.01), 0.99)])


FAMILIES: dict[str, FamilySpec] = {
    "Poisson": FamilySpec("Poisson", ("lam",), lambda t: Poisson(*t), _start_mean),
    "Geometric": FamilySpec("Geometric", ("p",), lambda t: Geometric(*t),
                            lambda s: np.array([min(s.counts.mean() / (1 + s.counts.mean()), .99)])),
    "NegativeBinomial": FamilySpec("NegativeBinomial", ("r", "p"),
                                   lambda t: NegativeBinomial(*t), _start_nb),
    "Zeta": FamilySpec("Zeta", ("b",), lambda t: Zeta(t[0] + 1.0), _start_zeta),
    "Yule": FamilySpec("Yule", ("b",), lambda t: Yule(*t), _start_yule),
    "Waring": FamilySpec("Waring", ("a", "b"), lambda t: Waring(*t), _start_waring),
    "GeneralizedWaring": FamilySpec("GeneralizedWaring", ("r", "a", "b"),
                                    lambda t: GeneralizedWaring(*t),
                                    lambda s: np.concatenate([[1.0], _start_waring(s)])),
    "ZY": FamilySpec("ZY", ("b", "c"), lambda t: ZY(*t),
                     lambda s: np.array([_start_yule(s)[0], 1.0])),
    "GZY": FamilySpec("GZY", ("a", "b", "c"), lambda t: GZY(*t),
                      lambda s: np.array([1.0, _start_yule(s)[0], 1.0])),
    "GW2": FamilySpec("GW2", ("a", "b", "c"), lambda t: GW2(*t),
                      lambda s: np.concatenate([_start_waring(s), [1.0]])),
    "HGZY": FamilySpec("HGZY", ("a", "b", "c", "d"), lambda t: HGZY(*t),
                       lambda s: np.array([1.0, _start_yule(s)[0], 1.0, 1.0])),
}

# Table order for the heavy-tailed comparison
HG_FAMILIES = ("HGZY", "GZY", "GW2", "ZY", "Waring", "Zeta", "Yule")

# probability parameters are mapped through logit instead of log
_UNIT_PARAMS = {("Geometric", "p"), ("NegativeBinomial", "p")}


def _to_free(spec: FamilySpec, natural):
    out = []
    for name, v in zip(spec.param_names, natural):
        out.append(special.logit(v) if (spec.name, name) in _UNIT_PARAMS else math.log(v))
    return np.array(out)


def _to_natural(spec: FamilySpec, free):
    out = []
    for name, v in zip(spec.param_names, free):
        out.append(special.expit(v) if (spec.name, name) in _UNIT_PARAMS else math.exp(v))
    return np.array(out)


def _jacobian(spec: FamilySpec, natural):
    """d natural / d free, elementwise."""
    return np.array([v * (1 - v) if (spec.name, n) in _UNIT_PARAMS else v
                     for n, v in zip(spec.param_names, natural)])


# ---------------------------------------------------------------------------
# likelihood and fitting
# ---------------------------------------------------------------------------

def log_likelihood(model: CountModel, sample: CountSample) -> float:
    x, w = sample.tabulate()
    return float(np.dot(w, model.log_pmf(x)))


@dataclass
class FitResult:
    family: str
    param_names: tuple[str, ...]
    estimates: np.ndarray
    std_errors: Optional[np.ndarray]
    log_likelihood: float
    aic: float
    bic: float
    converged: bool
    boundary_flag: bool
    n: int
    status: str = "ok"
    start_logliks: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.param_names)

    def model(self) -> CountModel:
        return FAMILIES[self.family].build(self.estimates)


def information_criteria(loglik: float, k: int, n: int) -> tuple[float, float]:
    return -2.0 * loglik + 2.0 * k, -2.0 * loglik + k * math.log(n)


@dataclass(frozen=True)
class FitOptions:
    starts: int = 5
    explore_evals: int = 300
    polish_evals: int = 1500
    max_restarts: int = 4
    tol: float = 1e-10
    xatol: float = 1e-7
    center: Optional[Sequence[float]] = None


def _start_grid(center: np.ndarray, count: int) -> list[np.ndarray]:
    k = center.size
    alt = np.where(np.arange(k) % 2 == 0, 1.0, -1.0)
    offsets = [np.zeros(k), np.ones(k), -np.ones(k), alt, -alt]
    while len(offsets) < count:
        j = len(offsets)
        offsets.append(np.where(np.arange(k) == j % k, 2.0, 0.0) * (1 if j % 2 else -1))
    return [center + o for o in offsets[:count]]


def _nll_factory(spec: FamilySpec, sample: CountSample, state: dict):
    x, w = sample.tabulate()

    def nll(theta):
        if np.any(np.abs(theta) > LOG_BOUND):
            state["boundary_hits"] += 1
            return math.inf
        try:
            model = spec.build(_to_natural(spec, theta))
            val = -float(np.dot(w, model.log_pmf(x)))
        except (DomainError, AccuracyError, FloatingPointError, OverflowError, ValueError):
            return math.inf
        return val if math.isfinite(val) else math.inf

    return nll


@dataclass
class Optimum:
    x: np.ndarray
    fun: float
    start_logliks: list
    evaluations: int
    drifting: bool


def minimize_free(nll: Callable, center: np.ndarray, options: FitOptions = FitOptions()) -> Optional[Optimum]:
    """Nelder-Mead over free parameters from the deterministic start grid.

    Short exploratory runs from every start are followed by restarts of the
    best point.  ``drifting`` is set when restarts keep improving while
    moving, the signature of a ridge running off to the boundary.
    """
    k = center.size
    nm = dict(xatol=options.xatol, fatol=options.tol, adaptive=k > 2)
    best = None
    start_ll = []
    evaluations = 0
    for theta0 in _start_grid(center, options.starts):
        f0 = nll(theta0)
        start_ll.append(-f0)
        if not math.isfinite(f0):
            continue
        res = optimize.minimize(nll, theta0, method="Nelder-Mead",
                                options=dict(maxfev=options.explore_evals * k, **nm))
        evaluations += res.nfev
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not math.isfinite(best.fun):
        return None
    drifting = False
    for _ in range(options.max_restarts):
        res = optimize.minimize(nll, best.x, method="Nelder-Mead",
                                options=dict(maxfev=options.polish_evals * k, **nm))
        evaluations += res.nfev
        gain = best.fun - res.fun
        moved = float(np.max(np.abs(res.x - best.x)))
        if res.fun <= best.fun:
            best = res
        # a settled optimum neither improves nor moves on restart
        drifting = bool(gain > 1e-6 and moved > 0.05)
        if not drifting and res.success:
            break
    return Optimum(np.asarray(best.x), float(best.fun), start_ll, evaluations, drifting)


def fit_from_nll(family: str, param_names, nll: Callable, center_free: np.ndarray, n: int,
                 to_natural: Callable, jacobian: Callable,
                 options: FitOptions = FitOptions(), state: dict = None) -> FitResult:
    """Optimise ``nll`` and package estimates, standard errors and flags."""
    k = len(param_names)
    state = state if state is not None else {"boundary_hits": 0}
    opt = minimize_free(nll, np.asarray(center_free, dtype=float), options)
    if opt is None:
        nan = np.full(k, math.nan)
        return FitResult(family, tuple(param_names), nan, None, math.nan, math.nan, math.nan,
                         False, True, n, status="all starts diverged")
    theta = opt.x
    ll = -opt.fun
    aic, bic = information_criteria(ll, k, n)
    near_edge = bool(np.max(np.abs(theta)) > LOG_BOUND - 5.0) or opt.drifting
    fit = FitResult(family, tuple(param_names), to_natural(theta), None, ll, aic, bic,
                    not opt.drifting, near_edge, n, start_logliks=opt.start_logliks,
                    diagnostics=dict(free=theta.tolist(), boundary_hits=state["boundary_hits"],
                                     evaluations=int(opt.evaluations), drifting=opt.drifting))
    if near_edge:
        fit.converged = False
        fit.status = "no interior maximum"
        return fit
    try:
        fit.std_errors = hessian_std_errors(nll, theta, jacobian(fit.estimates))
    except HessianError as exc:
        fit.diagnostics["hessian_eigenvalues"] = exc.eigenvalues.tolist()
        fit.converged = False
        fit.boundary_flag = state["boundary_hits"] > 0 or fit.boundary_flag
        fit.status = "no interior maximum"
    return fit


def mle_fit(family: str, sample: CountSample, options: FitOptions = FitOptions()) -> FitResult:
    """Maximise the likelihood over log-parameters from a deterministic start grid."""
    try:
        spec = FAMILIES[family]
    except KeyError:
        raise DomainError(f"unknown family {family!r}") from None
    k = len(spec.param_names)
    n = sample.n
    distinct = np.unique(sample.counts).size
    if k > 1 and distinct < k:
        nan = np.full(k, math.nan)
        return FitResult(family, spec.param_names, nan, None, math.nan, math.nan, math.nan,
                         False, False, n, status="non-identifiable")
    center = np.asarray(options.center if options.center is not None else spec.start(sample),
                        dtype=float)
    state = {"boundary_hits": 0}
    nll = _nll_factory(spec, sample, state)
    return fit_from_nll(family, spec.param_names, nll, _to_free(spec, center), n,
                        lambda t: _to_natural(spec, t), lambda v: _jacobian(spec, v),
                        options, state)


class HessianError(ArithmeticError):
    def __init__(self, message, eigenvalues):
        super().__init__(message)
        self.eigenvalues = np.asarray(eigenvalues)


def _hessian(f, x, h):
    k = x.size
    hmat = np.zeros((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h
        hmat[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = h
            hmat[i, j] = hmat[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej)
                                       + f(x - ei - ej)) / (4 * h * h)
    return hmat


def hessian_std_errors(nll: Callable, theta: np.ndarray, jac: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Inverse observed information by central differences in free parameters.

    The delta method maps SEs back to natural parameters through ``jac``
    (d natural / d free); at an interior optimum this equals differencing in
    natural parameters directly.
    """
    hmat = _hessian(nll, np.asarray(theta, dtype=float), h)
    if not np.all(np.isfinite(hmat)):
        raise HessianError("Hessian has non-finite entries", np.full(len(theta), math.nan))
    eig = np.linalg.eigvalsh(hmat)
    if eig.min() <= 0:
        raise HessianError("observed information is not positive definite", eig)
    cov = np.linalg.inv(hmat)
    return np.sqrt(np.diag(cov)) * jac


def std_errors(fit: FitResult, sample: CountSample, h: float = 1e-3) -> np.ndarray:
    """Standard errors of a count-family fit."""
    spec = FAMILIES[fit.family]
    nll = _nll_factory(spec, sample, {"boundary_hits": 0})
    return hessian_std_errors(nll, _to_free(spec, fit.estimates), _jacobian(spec, fit.estimates), h)


# ---------------------------------------------------------------------------
# chi-square goodness of fit
# ---------------------------------------------------------------------------

@dataclass
class GofReport:
    statistic: float
    cells: list
    df: int
    p_value: float
    mode: str = "at_mle"
    estimates: Optional[np.ndarray] = None

    @property
    def head_cells(self) -> int:
        return len(self.cells) - 1


def pearson_cells(values_in_head, head_probs, observed_head, n, min_expected=10.0):
    """Assemble cells plus the catch-all from head cell probabilities."""
    head_probs = np.asarray(head_probs, dtype=float)
    keep = n * head_probs >= min_expected
    cells = []
    for cell, p, o in zip(np.asarray(values_in_head, dtype=object)[keep], head_probs[keep],
                          np.asarray(observed_head)[keep]):
        cells.append((cell, int(o), float(n * p)))
    rest_obs = n - sum(c[1] for c in cells)
    rest_exp = n * (1.0 - math.fsum(head_probs[keep]))
    cells.append(("rest", int(rest_obs), float(rest_exp)))
    return cells


def pearson_statistic(cells) -> float:
    return float(sum((o - e) ** 2 / e for _, o, e in cells))


def _count_cells(model: CountModel, sample: CountSample, x_top: int):
    x = np.arange(x_top + 1)
    probs = np.exp(model.log_pmf(x))
    obs = np.bincount(sample.counts[sample.counts <= x_top], minlength=x_top + 1)
    return pearson_cells(x, probs, obs, sample.n)


def chisq_gof(model: CountModel, sample: CountSample, n_params: int,
              mode: str = "at_mle", family: str = None, x_top: int = 20000) -> GofReport:
    """Pearson chi-square with cells {x : n f(x) >= 10} plus one catch-all."""
    cells = _count_cells(model, sample, x_top)
    if len(cells) < n_params + 2:
        raise DomainError(f"only {len(cells)} cells for {n_params} parameters")
    df = len(cells) - n_params - 1
    if mode == "at_mle":
        stat = pearson_statistic(cells)
        return GofReport(stat, cells, df, chisq_upper_tail(stat, df), mode,
                         np.array(model.params))
    if mode != "minimized":
        raise DomainError(f"unknown mode {mode!r}")
    if family is None:
        raise DomainError("minimized mode needs the family name")
    # cells stay as chosen at the MLE; parameters move to minimise the statistic
    spec = FAMILIES[family]
    head = [c[0] for c in cells[:-1]]
    obs = np.array([c[1] for c in cells])
    n = sample.n
    est0 = fit_params_of(model, family)

    def stat_of(theta):
        try:
            m = spec.build(_to_natural(spec, theta))
            p = np.exp(m.log_pmf(np.array(head, dtype=float)))
        except (DomainError, AccuracyError, ValueError):
            return math.inf
        e = n * np.append(p, 1.0 - math.fsum(p))
        if np.any(e <= 0):
            return math.inf
        return float(np.sum((obs - e) ** 2 / e))

    res = optimize.minimize(stat_of, _to_free(spec, est0), method="Nelder-Mead",
                            options=dict(xatol=1e-8, fatol=1e-10, maxiter=4000 * len(est0)))
    stat = float(res.fun)
    m = spec.build(_to_natural(spec, res.x))
    p = np.exp(m.log_pmf(np.array(head, dtype=float)))
    new_cells = [(c, int(o), float(n * q)) for c, o, q in zip(head, obs[:-1], p)]
    new_cells.append(("rest", int(obs[-1]), float(n * (1.0 - math.fsum(p)))))
    return GofReport(stat, new_cells, df, chisq_upper_tail(stat, df), mode,
                     _to_natural(spec, res.x))


def fit_params_of(model: CountModel, family: str) -> np.ndarray:
    """Natural parameter vector of ``model`` in the fitter's parameterisation."""
    if family == "Zeta":
        return np.array([model.s - 1.0])
    return np.array(model.params, dtype=float)


# ---------------------------------------------------------------------------
# the heavy-tailed family comparison
# ---------------------------------------------------------------------------

@dataclass
class FamilyReport:
    fit: FitResult
    gof: Optional[GofReport]
    rejected: Optional[bool]
    error: str = ""

    @property
    def ic_reported(self) -> bool:
        return self.rejected is False


def _hierarchy_center(name, done: dict, sample):
    """Start centres taken from an already fitted sub-family, when available."""
    ok = lambda f: f in done and done[f].converged
    if name == "GZY" and ok("ZY"):
        b, c = done["ZY"].estimates
        return np.array([1.0 / c, b, c])
    if name == "HGZY" and ok("GZY"):
        a, b, c = done["GZY"].estimates
        return np.array([a, b, c, 1.0])
    if name == "GW2" and ok("Waring"):
        a, b = done["Waring"].estimates
        return np.array([a, b, 1.0])
    if name == "ZY" and ok("Yule"):
        return np.array([done["Yule"].estimates[0], 1.0])
    return None


def fit_all_hg(sample: CountSample, families: Sequence[str] = HG_FAMILIES,
               alpha: float = 0.05, options: FitOptions = FitOptions()) -> list[FamilyReport]:
    """Fit each family, test it, and rank the non-rejected ones by AIC."""
    order = ["Zeta", "Yule", "Waring", "ZY", "GZY", "GW2", "HGZY"]
    todo = [f for f in order if f in families] + [f for f in families if f not in order]
    done: dict[str, FitResult] = {}
    reports: dict[str, FamilyReport] = {}
    for name in todo:
        center = _hierarchy_center(name, done, sample)
        opts = replace(options, center=center) if center is not None else options
        try:
            fit = mle_fit(name, sample, opts)
        except (DomainError, AccuracyError) as exc:
            k = len(FAMILIES[name].param_names)
            fit = FitResult(name, FAMILIES[name].param_names, np.full(k, math.nan), None,
                            math.nan, math.nan, math.nan, False, False, sample.n,
                            status=f"failed: {exc}")
        done[name] = fit
        if not fit.converged:
            reports[name] = FamilyReport(fit, None, None, fit.status)
            continue
        try:
            gof = chisq_gof(fit.model(), sample, fit.k)
            reports[name] = FamilyReport(fit, gof, gof.p_value < alpha)
        except DomainError as exc:
            reports[name] = FamilyReport(fit, None, None, str(exc))
    kept = sorted((r for r in reports.values() if r.ic_reported), key=lambda r: r.fit.aic)
    rest = [reports[f] for f in families if not reports[f].ic_reported]
    return kept + rest

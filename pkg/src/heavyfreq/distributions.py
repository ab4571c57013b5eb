"""Count families of the HGZY hierarchy and mixing densities on (0, 1).

Count models (sample space x = 0, 1, 2, ...) are immutable dataclasses with a
vectorised ``log_pmf``.  Mixing models expose ``log_pdf(p, q)`` where ``q`` is
``1 - p`` supplied separately, so that callers working near p = 1 (tails) or
p = 0 keep full relative precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import ClassVar

import numpy as np
from scipy import special

from .numerics import (AccuracyError, DomainError, SigmaBArgs, log_sigma_b_diff_vec,
                       log_sigma_b_vec, riemann_zeta, sigma_b)

ZY_MIN_C = 1e-6
PARAM_EQ_TOL = 1e-12


def _positive(name: str, value: float) -> None:
    if not (value > 0 and math.isfinite(value)):
        raise DomainError(f"{name} must be a positive finite real, got {value!r}")


def _probability(name: str, value: float) -> None:
    if not 0 < value < 1:
        raise DomainError(f"{name} must lie in (0, 1), got {value!r}")


def log_sigma_b(gamma: float, u: float, w: float) -> float:
    """ln Sigma_B(gamma, u, w) certified to 1e-12 relative."""
    rough = float(np.exp(log_sigma_b_vec(gamma, [u], w)[0]))
    return math.log(sigma_b(SigmaBArgs(gamma, u, w), tol=1e-12 * rough))


def _as_counts(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr).astype(float)
    if np.any(arr < 0) or np.any(arr != np.floor(arr)):
        raise DomainError("count support is {0, 1, 2, ...}")
    return arr, scalar


def _log1mexp(logx):
    """ln(1 - e^logx) for logx < 0."""
    logx = np.asarray(logx, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(logx > -0.6931, np.log(-np.expm1(logx)), np.log1p(-np.exp(logx)))


# ---------------------------------------------------------------------------
# count models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CountModel:
    """Base class; subclasses are the tagged variants."""

    family: ClassVar[str] = ""

    @property
    def params(self) -> tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))

    @classmethod
    def param_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def _log_pmf(self, x: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def log_pmf(self, x):
        arr, scalar = _as_counts(x)
        out = self._log_pmf(arr)
        return float(out[0]) if scalar else out

    def pmf(self, x):
        return np.exp(self.log_pmf(x))


@dataclass(frozen=True)
class Poisson(CountModel):
    lam: float
    family: ClassVar[str] = "Poisson"

    def __post_init__(self):
        _positive("lam", self.lam)

    def _log_pmf(self, x):
        return x * math.log(self.lam) - self.lam - special.gammaln(x + 1)


@dataclass(frozen=True)
class NegativeBinomial(CountModel):
    """NB(r, p) with p the per-trial 'failure' probability: (1-p)^r p^x."""

    r: float
    p: float
    family: ClassVar[str] = "NegativeBinomial"

    def __post_init__(self):
        _positive("r", self.r)
        _probability("p", self.p)

    def _log_pmf(self, x):
        r = self.r
        return (special.gammaln(x + r) - special.gammaln(r) - special.gammaln(x + 1)
                + r * math.log1p(-self.p) + x * math.log(self.p))


@dataclass(frozen=True)
class Geometric(CountModel):
    p: float
    family: ClassVar[str] = "Geometric"

    def __post_init__(self):
        _probability("p", self.p)

    def _log_pmf(self, x):
        return math.log1p(-self.p) + x * math.log(self.p)


@dataclass(frozen=True)
class Zeta(CountModel):
    s: float
    family: ClassVar[str] = "Zeta"

    def __post_init__(self):
        if not (self.s > 1 and math.isfinite(self.s)):
            raise DomainError(f"Zeta requires s > 1, got {self.s!r}")

    def _log_pmf(self, x):
        return -self.s * np.log1p(x) - math.log(riemann_zeta(self.s))


@dataclass(frozen=True)
class Yule(CountModel):
    b: float
    family: ClassVar[str] = "Yule"

    def __post_init__(self):
        _positive("b", self.b)

    def _log_pmf(self, x):
        return math.log(self.b) + special.betaln(x + 1, self.b + 1)


@dataclass(frozen=True)
class Waring(CountModel):
    a: float
    b: float
    family: ClassVar[str] = "Waring"

    def __post_init__(self):
        _positive("a", self.a)
        _positive("b", self.b)

    def _log_pmf(self, x):
        return special.betaln(x + self.a, self.b + 1) - special.betaln(self.a, self.b)


@dataclass(frozen=True)
class GeneralizedWaring(CountModel):
    """Gamma-ratio form Gamma(x+r)/(Gamma(r) x!) B(x+a, b+r)/B(a, b).

    Equal to B(x+a, b+r) / (B(a, b) x B(x, r)) for x >= 1 and finite at x = 0.
    """

    r: float
    a: float
    b: float
    family: ClassVar[str] = "GeneralizedWaring"

    def __post_init__(self):
        for n in ("r", "a", "b"):
            _positive(n, getattr(self, n))

    def _log_pmf(self, x):
        r, a, b = self.r, self.a, self.b
        return (special.gammaln(x + r) - special.gammaln(r) - special.gammaln(x + 1)
                + special.betaln(x + a, b + r) - special.betaln(a, b))


@dataclass(frozen=True)
class ZY(CountModel):
    """ZY(b, c); ``c = 0`` is the explicit Zeta(b + 1) limit."""

    b: float
    c: float
    family: ClassVar[str] = "ZY"

    def __post_init__(self):
        _positive("b", self.b)
        if self.c != 0:
            _positive("c", self.c)
            if self.c < ZY_MIN_C:
                raise DomainError(
                    f"ZY with 0 < c < {ZY_MIN_C} is numerically degenerate; "
                    "use c = 0 for the Zeta limit")

    def _log_pmf(self, x):
        b, c = self.b, self.c
        if c == 0:
            return -(b + 1) * np.log1p(x) - math.log(riemann_zeta(b + 1))
        g = 1.0 / c
        return special.betaln((x + 1) * g, b + 1) - log_sigma_b(g, g, b)


@dataclass(frozen=True)
class GZY(CountModel):
    """Generalized ZY; the Sigma_B difference telescopes to one beta term."""

    a: float
    b: float
    c: float
    family: ClassVar[str] = "GZY"

    def __post_init__(self):
        for n in ("a", "b", "c"):
            _positive(n, getattr(self, n))

    def _log_pmf(self, x):
        a, b, c = self.a, self.b, self.c
        return special.betaln(x / c + a, b + 1) - log_sigma_b(1.0 / c, a, b)

    def numerator_as_difference(self, x) -> np.ndarray:
        """Sigma_B(1/c, x/c+a, b) - Sigma_B(1/c, (x+1)/c+a, b), untelescoped."""
        arr, _ = _as_counts(x)
        a, b, c = self.a, self.b, self.c
        return np.exp(log_sigma_b_diff_vec(1.0 / c, arr / c + a, 1.0 / c, b))


@dataclass(frozen=True)
class GW2(CountModel):
    a: float
    b: float
    c: float
    family: ClassVar[str] = "GW2"

    def __post_init__(self):
        for n in ("a", "b", "c"):
            _positive(n, getattr(self, n))

    def _log_pmf(self, x):
        a, b, c = self.a, self.b, self.c
        lb1 = special.betaln(x / c + a, b)
        lb2 = special.betaln((x + 1) / c + a, b)
        return lb1 + np.log(-np.expm1(lb2 - lb1)) - special.betaln(a, b)


@dataclass(frozen=True)
class HGZY(CountModel):
    a: float
    b: float
    c: float
    d: float
    family: ClassVar[str] = "HGZY"

    def __post_init__(self):
        for n in ("a", "b", "c", "d"):
            _positive(n, getattr(self, n))

    def _log_pmf(self, x):
        a, b, c, d = self.a, self.b, self.c, self.d
        g = d / c
        num = log_sigma_b_diff_vec(g, x / c + a, 1.0 / c, b)
        return num - log_sigma_b(g, a, b)


COUNT_FAMILIES: dict[str, type[CountModel]] = {
    cls.family: cls for cls in (Poisson, NegativeBinomial, Geometric, Zeta, Yule, Waring,
                                GeneralizedWaring, ZY, GZY, GW2, HGZY)
}


def make_count_model(family: str, params) -> CountModel:
    try:
        cls = COUNT_FAMILIES[family]
    except KeyError:
        raise DomainError(f"unknown count family {family!r}") from None
    return cls(*[float(v) for v in params])


def log_pmf(model: CountModel, x):
    return model.log_pmf(x)


def pmf_ratio(model: CountModel, x):
    """f(x) / f(x + 1)."""
    arr, scalar = _as_counts(x)
    if isinstance(model, ZY) and model.c == 0:
        out = ((arr + 2) / (arr + 1)) ** (model.b + 1)
    else:
        out = np.exp(model._log_pmf(arr) - model._log_pmf(arr + 1))
    return float(out[0]) if scalar else out


def _close(u: float, v: float) -> bool:
    return abs(u - v) <= PARAM_EQ_TOL


def reduce(model: CountModel) -> CountModel | None:
    """One specialisation step down the hierarchy, or None."""
    m = model
    if isinstance(m, HGZY) and _close(m.d, 1.0):
        return GZY(m.a, m.b, m.c)
    if isinstance(m, GZY) and _close(m.a, 1.0 / m.c):
        return ZY(m.b, m.c)
    if isinstance(m, ZY):
        if m.c == 0:
            return Zeta(m.b + 1)
        if _close(m.c, 1.0):
            return Yule(m.b)
    if isinstance(m, GW2) and _close(m.c, 1.0):
        return Waring(m.a, m.b)
    if isinstance(m, Waring) and _close(m.a, 1.0):
        return Yule(m.b)
    if isinstance(m, GeneralizedWaring) and _close(m.r, 1.0):
        return Waring(m.a, m.b)
    if isinstance(m, NegativeBinomial) and _close(m.r, 1.0):
        return Geometric(m.p)
    return None


@dataclass(frozen=True)
class NormalizationReport:
    sum: float
    tail_bound: float
    terms: int


def normalization_check(model: CountModel, tol: float = 1e-10,
                        max_terms: int = 50_000_000) -> NormalizationReport:
    """Sum the PMF until a tail bound certifies the remainder is below ``tol``.

    The tail is bounded by fitting the local power law f(x) ~ C x^-s from the
    PMF ratio at the last summed term and integrating it (with a factor-two
    safety margin).  For light tails (ratio growing) the
    geometric bound f(n+1)/(1 - rho) is used instead.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    total = 0.0
    start = 0
    chunk = 4096
    while start < max_terms:
        x = np.arange(start, start + chunk, dtype=float)
        lp = model._log_pmf(x)
        total += math.fsum(np.exp(lp))
        start += chunk
        n = float(start - 1)
        l1, l0 = lp[-1], lp[-2]
        rho = math.exp(l1 - l0)
        local_s = (l0 - l1) / math.log((n + 1) / n)
        if rho < 0.99 and local_s > 1.0 * (n + 1):
            # faster than any power: geometric decay bound
            bound = math.exp(l1) * rho / (1 - rho)
        elif local_s > 1.0:
            # f(x) ~ f(n) (x/n)^-s for x > n gives remainder ~ f(n) n / (s - 1);
            # doubled because the local exponent drifts down by O(1/n)
            bound = 2.0 * math.exp(l1) * n / (local_s - 1.0)
        else:
            bound = math.inf
        if bound < tol:
            return NormalizationReport(total, bound, start)
        chunk = min(chunk * 2, 1 << 22)
    raise AccuracyError("normalization tail bound did not converge", total)


# ---------------------------------------------------------------------------
# mixing densities on (0, 1)
# ---------------------------------------------------------------------------

def _pq(p, q=None):
    p = np.asarray(p, dtype=float)
    if q is None:
        q = 1.0 - p
    q = np.asarray(q, dtype=float)
    if np.any(p <= 0) or np.any(q <= 0):
        raise DomainError("mixing densities are defined on the open interval (0, 1)")
    return p, q


def _log_1m_pow(lp, c):
    """ln(1 - p^c) from ln p."""
    return _log1mexp(c * lp)


def _odds_pow(lp, c):
    """p^c / (1 - p^c) from ln p."""
    return np.exp(c * lp - _log_1m_pow(lp, c))


@dataclass(frozen=True)
class MixingModel:
    family: ClassVar[str] = ""

    @property
    def params(self) -> tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))

    def _log_pdf(self, lp, lq):  # pragma: no cover - abstract
        raise NotImplementedError

    def _elasticity_parts(self, lp, lq):  # pragma: no cover - abstract
        """Split -p f'(p)/f(p) as (1 - kappa) + rest(p).

        Returns ``(kappa, rest)``.  Keeping kappa separate lets callers form
        r - kappa exactly, which matters where 1/p is huge.
        """
        raise NotImplementedError

    def elasticity(self, lp, lq):
        """-p f'(p) / f(p) from (ln p, ln(1 - p))."""
        kappa, rest = self._elasticity_parts(np.asarray(lp, dtype=float),
                                             np.asarray(lq, dtype=float))
        return (1.0 - kappa) + rest

    def log_pdf(self, p, q=None):
        p, q = _pq(p, q)
        out = self._log_pdf(np.log(p), np.log(q))
        return float(out) if out.ndim == 0 else out

    def log_pdf_logs(self, lp, lq):
        """ln f from (ln p, ln(1 - p)); usable where p or 1 - p underflows."""
        lp = np.asarray(lp, dtype=float)
        lq = np.asarray(lq, dtype=float)
        if np.any(lp > 0) or np.any(lq > 0) or np.any((lp == 0) & (lq == 0)):
            raise DomainError("mixing densities are defined on the open interval (0, 1)")
        out = self._log_pdf(lp, lq)
        return float(out) if np.ndim(out) == 0 else out

    def pdf(self, p, q=None):
        return np.exp(self.log_pdf(p, q))

    def dlog_pdf(self, p, q=None):
        """f'(p) / f(p)."""
        p, q = _pq(p, q)
        out = -self.elasticity(np.log(p), np.log(q)) / p
        return float(out) if np.ndim(out) == 0 else out

    # behaviour at p -> 0+, used by the quasi-PDF classifier
    def limit_at_zero(self) -> float:  # pragma: no cover - abstract
        raise NotImplementedError

    def tail_exponent_at_zero(self) -> float:  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass(frozen=True)
class Beta(MixingModel):
    a: float
    b: float
    family: ClassVar[str] = "Beta"

    def __post_init__(self):
        _positive("a", self.a)
        _positive("b", self.b)

    def _log_pdf(self, lp, lq):
        return (self.a - 1) * lp + (self.b - 1) * lq - special.betaln(self.a, self.b)

    def _elasticity_parts(self, lp, lq):
        return self.a, (self.b - 1) * np.exp(lp - lq)

    def limit_at_zero(self):
        if self.a > 1:
            return 0.0
        if self.a == 1:
            return float(self.b)
        return math.inf

    def tail_exponent_at_zero(self):
        return 1.0 - self.a


@dataclass(frozen=True)
class GB1(MixingModel):
    a: float
    b: float
    c: float
    family: ClassVar[str] = "GB1"

    def __post_init__(self):
        for n in ("a", "b", "c"):
            _positive(n, getattr(self, n))

    def _log_pdf(self, lp, lq):
        a, b, c = self.a, self.b, self.c
        return (math.log(c) - special.betaln(a, b) + (c * a - 1) * lp
                + (b - 1) * _log_1m_pow(lp, c))

    def _elasticity_parts(self, lp, lq):
        return self.c * self.a, (self.b - 1) * self.c * _odds_pow(lp, self.c)

    def limit_at_zero(self):
        ca = self.c * self.a
        if ca > 1:
            return 0.0
        if ca == 1:
            return self.c / math.exp(special.betaln(self.a, self.b))
        return math.inf

    def tail_exponent_at_zero(self):
        return 1.0 - self.c * self.a


@dataclass(frozen=True)
class Kumaraswamy(MixingModel):
    b: float
    c: float
    family: ClassVar[str] = "Kumaraswamy"

    def __post_init__(self):
        _positive("b", self.b)
        _positive("c", self.c)

    def _log_pdf(self, lp, lq):
        b, c = self.b, self.c
        return math.log(b * c) + (c - 1) * lp + (b - 1) * _log_1m_pow(lp, c)

    def _elasticity_parts(self, lp, lq):
        return self.c, (self.b - 1) * self.c * _odds_pow(lp, self.c)

    def limit_at_zero(self):
        if self.c > 1:
            return 0.0
        return self.b if self.c == 1 else math.inf

    def tail_exponent_at_zero(self):
        return 1.0 - self.c


class _SigmaBFamily(MixingModel):
    """Shared body of c p^(ca-1) (1-p^c)^b / ((1-p^d) Sigma_B(d/c, a, b))."""

    def _shape(self) -> tuple[float, float, float, float]:  # pragma: no cover - abstract
        raise NotImplementedError

    def _init_norm(self):
        a, b, c, d = self._shape()
        for name, v in zip("abcd", (a, b, c, d)):
            _positive(name, v)
        object.__setattr__(self, "_log_norm", math.log(c) - log_sigma_b(d / c, a, b))

    def _log_pdf(self, lp, lq):
        a, b, c, d = self._shape()
        tail = -lq if d == 1.0 else -_log_1m_pow(lp, d)
        return self._log_norm + (c * a - 1) * lp + b * _log_1m_pow(lp, c) + tail

    def _elasticity_parts(self, lp, lq):
        a, b, c, d = self._shape()
        tail = np.exp(lp - lq) if d == 1.0 else d * _odds_pow(lp, d)
        return c * a, b * c * _odds_pow(lp, c) - tail

    def limit_at_zero(self):
        a, _, c, _ = self._shape()
        if c * a > 1:
            return 0.0
        if c * a == 1:
            return math.exp(self._log_norm)
        return math.inf

    def tail_exponent_at_zero(self):
        a, _, c, _ = self._shape()
        return 1.0 - c * a


@dataclass(frozen=True)
class HGSigmaB(_SigmaBFamily):
    a: float
    b: float
    c: float
    d: float
    family: ClassVar[str] = "HGSigmaB"

    def __post_init__(self):
        self._init_norm()

    def _shape(self):
        return self.a, self.b, self.c, self.d


@dataclass(frozen=True)
class GSigmaB(_SigmaBFamily):
    a: float
    b: float
    c: float
    family: ClassVar[str] = "GSigmaB"

    def __post_init__(self):
        self._init_norm()

    def _shape(self):
        return self.a, self.b, self.c, 1.0


@dataclass(frozen=True)
class SigmaB(_SigmaBFamily):
    b: float
    c: float
    family: ClassVar[str] = "SigmaB"

    def __post_init__(self):
        _positive("c", self.c)
        self._init_norm()

    def _shape(self):
        return 1.0 / self.c, self.b, self.c, 1.0


@dataclass(frozen=True)
class SigmaBLimit(MixingModel):
    """(-ln p)^b / (zeta(b+1) Gamma(b+1) (1-p)), the c -> 0 Sigma-B."""

    b: float
    family: ClassVar[str] = "SigmaBLimit"

    def __post_init__(self):
        _positive("b", self.b)
        object.__setattr__(
            self, "_log_norm",
            -math.log(riemann_zeta(self.b + 1)) - float(special.gammaln(self.b + 1)))

    def _log_pdf(self, lp, lq):
        return self._log_norm + self.b * np.log(-lp) - lq

    def _elasticity_parts(self, lp, lq):
        return 1.0, -self.b / lp - np.exp(lp - lq)

    def limit_at_zero(self):
        return math.inf

    def tail_exponent_at_zero(self):
        return 0.0


@dataclass(frozen=True)
class LogitNormal(MixingModel):
    mu: float
    sigma: float
    family: ClassVar[str] = "LogitNormal"

    def __post_init__(self):
        _positive("sigma", self.sigma)

    def _log_pdf(self, lp, lq):
        z = (lp - lq - self.mu) / self.sigma
        return -0.5 * math.log(2 * math.pi) - math.log(self.sigma) - lp - lq - 0.5 * z * z

    def _elasticity_parts(self, lp, lq):
        # no finite limit at 0; kappa = 0 is only a bookkeeping split
        return 0.0, -np.exp(lp - lq) + (lp - lq - self.mu) / (self.sigma ** 2 * np.exp(lq))

    def limit_at_zero(self):
        return 0.0

    def tail_exponent_at_zero(self):
        return -math.inf


MIXING_FAMILIES: dict[str, type[MixingModel]] = {
    cls.family: cls for cls in (Beta, GB1, Kumaraswamy, SigmaB, SigmaBLimit, GSigmaB,
                                HGSigmaB, LogitNormal)
}


def mixing_log_pdf(model: MixingModel, p, q=None):
    return model.log_pdf(p, q)


def r1_mixing_density(model: CountModel) -> MixingModel:
    """The NB(r=1) mixing density that generates ``model``."""
    if isinstance(model, Yule):
        return Beta(1.0, model.b)
    if isinstance(model, Waring):
        return Beta(model.a, model.b)
    if isinstance(model, ZY):
        return SigmaBLimit(model.b) if model.c == 0 else SigmaB(model.b, model.c)
    if isinstance(model, Zeta):
        return SigmaBLimit(model.s - 1)
    if isinstance(model, GZY):
        return GSigmaB(model.a, model.b, model.c)
    if isinstance(model, HGZY):
        return HGSigmaB(model.a, model.b, model.c, model.d)
    if isinstance(model, GW2):
        return GB1(model.a, model.b, model.c)
    raise DomainError(f"no r = 1 mixing density known for {model.family}")

"""Special functions and quadrature used by every density and likelihood.

Everything here is a pure function of its arguments.  Beta/gamma ratios are
kept in log space; callers exponentiate at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, special


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function or model."""


class AccuracyError(ArithmeticError):
    """A numerical procedure failed to reach its requested accuracy.

    The best available estimate is kept on ``estimate``.
    """

    def __init__(self, message: str, estimate: float = math.nan):
        super().__init__(message)
        self.estimate = estimate


# ---------------------------------------------------------------------------
# gamma / beta / zeta
# ---------------------------------------------------------------------------

def log_gamma(z: float) -> float:
    """Natural log of the gamma function for ``z > 0``."""
    if not z > 0:
        raise DomainError(f"log_gamma requires z > 0, got {z!r}")
    return float(special.gammaln(z))


def log_beta(u: float, w: float) -> float:
    """ln B(u, w) = lgamma(u) + lgamma(w) - lgamma(u + w)."""
    if not (u > 0 and w > 0):
        raise DomainError(f"log_beta requires u, w > 0, got ({u!r}, {w!r})")
    return float(special.betaln(u, w))


# Bernoulli numbers B_2, B_4, ..., B_10 for the Euler-Maclaurin correction.
_BERNOULLI_EVEN = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66)
_ZETA_TERMS = 10_000
_ZETA_HEAD = np.arange(1, _ZETA_TERMS, dtype=float)


def riemann_zeta(s: float) -> float:
    """Riemann zeta function for real ``s > 1``.

    Uses ``_ZETA_TERMS - 1`` explicit terms and an Euler-Maclaurin tail with
    four Bernoulli corrections.
    """
    if not s > 1:
        raise DomainError(f"riemann_zeta requires s > 1, got {s!r}")
    n = float(_ZETA_TERMS)
    head = math.fsum(np.power(_ZETA_HEAD, -s))
    tail = n ** (1 - s) / (s - 1) + 0.5 * n ** (-s)
    # rising product s(s+1)...(s+2k-2) / (2k)!
    rising = s
    for k in range(1, 5):
        tail += _BERNOULLI_EVEN[k - 1] / math.factorial(2 * k) * rising * n ** (-s - 2 * k + 1)
        rising *= (s + 2 * k - 1) * (s + 2 * k)
    return head + tail


def reg_inc_gamma_upper(s: float, x: float) -> float:
    """Upper regularized incomplete gamma Q(s, x).

    The chi-square upper tail with k degrees of freedom is ``Q(k/2, x/2)``.
    """
    if not s > 0:
        raise DomainError(f"reg_inc_gamma_upper requires s > 0, got {s!r}")
    if not x >= 0:
        raise DomainError(f"reg_inc_gamma_upper requires x >= 0, got {x!r}")
    if x == 0:
        return 1.0
    return float(special.gammaincc(s, x))


def chisq_upper_tail(statistic: float, df: int) -> float:
    return reg_inc_gamma_upper(df / 2.0, max(statistic, 0.0) / 2.0)


# ---------------------------------------------------------------------------
# fixed Gauss rules on geometric panels
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def geometric_gauss_rule(lo: float, hi: float, order: int = 16,
                         panel_width: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for integrals over ``(lo, hi)`` in the variable ln(s).

    Returns ``(s, weights)`` such that ``sum(weights * g(s))`` approximates
    ``int_lo^hi g(s) ds``.  The ``ds = s dv`` Jacobian is folded into the
    weights, so integrands behaving like powers of ``s`` near the endpoints
    are handled without special treatment.
    """
    if not 0 < lo < hi:
        raise DomainError("geometric_gauss_rule requires 0 < lo < hi")
    vlo, vhi = math.log(lo), math.log(hi)
    panels = max(1, int(math.ceil((vhi - vlo) / panel_width)))
    edges = np.linspace(vlo, vhi, panels + 1)
    x, w = _gauss_legendre(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    v = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wv = (half[:, None] * w[None, :]).ravel()
    s = np.exp(v)
    return s, wv * s


def log_geometric_rule_rows(log_lo, log_hi, order: int = 24,
                            panel_width: float = 0.35) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise Gauss rules in ln(s), one integration range per row.

    ``log_lo`` and ``log_hi`` are arrays of ln endpoints.  Every row gets the
    same number of panels (enough for the widest range), so the result is a
    pair of ``(rows, nodes)`` matrices: ``s`` and ``ln`` of the weights with
    the Jacobian folded in.  Integrals are then ``logsumexp(log_w + log_g)``.
    """
    log_lo = np.atleast_1d(np.asarray(log_lo, dtype=float))
    log_hi = np.atleast_1d(np.asarray(log_hi, dtype=float))
    if np.any(log_hi <= log_lo):
        raise DomainError("empty integration range")
    span = log_hi - log_lo
    panels = max(1, int(math.ceil(span.max() / panel_width)))
    x, w = _gauss_legendre(order)
    width = span / panels
    k = np.arange(panels)
    mid = log_lo[:, None] + width[:, None] * (k[None, :] + 0.5)
    v = (mid[:, :, None] + 0.5 * width[:, None, None] * x[None, None, :]).reshape(len(span), -1)
    log_w = np.log(0.5 * width)[:, None] + np.tile(np.log(w), panels)[None, :] + v
    return np.exp(v), log_w


def signed_logsumexp(log_abs: np.ndarray, sign: np.ndarray, axis: int = -1) -> tuple[np.ndarray, np.ndarray]:
    """Sum of ``sign * exp(log_abs)`` along ``axis`` as (ln|total|, sign)."""
    m = np.max(log_abs, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    total = np.sum(sign * np.exp(log_abs - m), axis=axis)
    m = np.squeeze(m, axis=axis)
    with np.errstate(divide="ignore"):
        return np.log(np.abs(total)) + m, np.sign(total)


# ---------------------------------------------------------------------------
# Sigma-B
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SigmaBArgs:
    """Arguments of Sigma_B(gamma, u, w) = sum_k B(gamma*k + u, w + 1)."""

    gamma: float
    u: float
    w: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise DomainError(f"Sigma_B step gamma must be > 0, got {self.gamma!r}")
        if not self.u > 0:
            raise DomainError(f"Sigma_B start u must be > 0, got {self.u!r}")
        if not self.w > 0:
            raise DomainError(
                f"Sigma_B requires w > 0 (terms decay like k^-(w+1)), got {self.w!r}")


_SIGMA_CHUNK = 4096
_SIGMA_MAX_TERMS = 1 << 18
_SIGMA_HEAD = 32


def sigma_b_tail_bound(gamma: float, u: float, w: float, n: int) -> float:
    """Upper bound on sum_{k>=n} B(gamma k + u, w + 1), for n >= 1.

    Uses B(x, w+1) <= Gamma(w+1) x^-(w+1) (valid for w > 0) and the
    monotonicity of the terms, so the remainder is below the integral of the
    bound from n - 1 to infinity.
    """
    x0 = gamma * (n - 1) + u
    return math.exp(special.gammaln(w + 1) - w * math.log(x0)) / (gamma * w)


def _log_sigma_tail_integrand(s: np.ndarray, start, gamma: float, w: float) -> np.ndarray:
    # log of exp(-s*start) (1-e^-s)^w / (1-e^-(gamma s))
    return (-s * start + w * np.log(-np.expm1(-s))
            - np.log(-np.expm1(-gamma * s)))


def _sigma_tail_quad(start: np.ndarray, gamma: float, w: float,
                     order: int = 16) -> np.ndarray:
    """sum_{k>=0} B(gamma k + start, w + 1) by its Laplace-type integral.

    Sum_k B(gamma k + U, w+1) = int_0^inf e^{-sU} (1-e^{-s})^w / (1-e^{-gamma s}) ds.
    ``start`` may be an array; the result has its shape.
    """
    start = np.atleast_1d(np.asarray(start, dtype=float))
    umin = float(start.min())
    s_lo = min(1e-10, 1e-10 / max(float(start.max()), 1.0), 1e-10 / gamma)
    s_hi = 80.0 / umin
    s, wt = geometric_gauss_rule(s_lo, s_hi, order=order)
    logs = _log_sigma_tail_integrand(s[None, :], start[:, None], gamma, w)
    body = np.exp(logs) @ wt
    # small-s piece: integrand ~ s^(w-1)/gamma there
    return body + s_lo ** w / (gamma * w)


def sigma_b(args: SigmaBArgs, tol: float = 1e-12) -> float:
    """Sigma_B(gamma, u, w) with a certified truncation error below ``tol``.

    Terms are summed in log space.  When the rigorous power-law bound on the
    remainder falls below ``tol`` within ``_SIGMA_MAX_TERMS`` terms the sum
    stops there.  Otherwise (slow decay, small w) the remainder is evaluated
    from its exact integral representation with two Gauss orders and the
    discrepancy between them is checked against ``tol``.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    g, u, w = args.gamma, args.u, args.w
    total = 0.0
    n = 0
    lw = special.gammaln(w + 1)
    while n < _SIGMA_MAX_TERMS:
        k = np.arange(n, n + _SIGMA_CHUNK, dtype=float)
        x = g * k + u
        terms = np.exp(special.gammaln(x) + lw - special.gammaln(x + w + 1))
        total += math.fsum(terms)
        n += _SIGMA_CHUNK
        bound = sigma_b_tail_bound(g, u, w, n)
        if bound < tol:
            return total
        # hand over to the integral remainder once direct summation would be long
        needed = (math.exp(lw) / (g * w * tol)) ** (1.0 / w) / g
        if needed > min(_SIGMA_MAX_TERMS, n + 2 * _SIGMA_CHUNK):
            break
    start = g * n + u
    coarse = float(_sigma_tail_quad(start, g, w, order=12)[0])
    fine = float(_sigma_tail_quad(start, g, w, order=20)[0])
    if abs(fine - coarse) > tol:
        raise AccuracyError(
            f"Sigma_B tail quadrature disagreement {abs(fine - coarse):.3e} > {tol:.1e}",
            total + fine)
    return total + fine


def log_sigma_b_vec(gamma: float, u, w: float, head: int = _SIGMA_HEAD) -> np.ndarray:
    """Vectorised ln Sigma_B(gamma, u_i, w) for an array of starts ``u``.

    A fixed number of explicit terms followed by the integral remainder; used
    inside likelihood loops where :func:`sigma_b` would be too slow.  Accuracy
    is checked against :func:`sigma_b` in the test-suite.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    k = np.arange(head, dtype=float)
    x = gamma * k[None, :] + u[:, None]
    log_terms = special.betaln(x, w + 1)
    tail = _sigma_tail_quad(gamma * head + u, gamma, w)
    stacked = np.concatenate([log_terms, np.log(tail)[:, None]], axis=1)
    return special.logsumexp(stacked, axis=1)


def log_sigma_b_diff_vec(gamma: float, u, delta: float, w: float,
                         head: int = _SIGMA_HEAD) -> np.ndarray:
    """ln[Sigma_B(gamma, u, w) - Sigma_B(gamma, u + delta, w)], vectorised in u.

    Each term difference B(x, w+1) - B(x + delta, w+1) is formed as
    ``B(x) * -expm1(lnB(x+delta) - lnB(x))`` to avoid cancellation; the
    remainder uses the integral
    int e^{-sU}(1-e^{-delta s})(1-e^{-s})^w/(1-e^{-gamma s}) ds.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    k = np.arange(head, dtype=float)
    x = gamma * k[None, :] + u[:, None]
    lb = special.betaln(x, w + 1)
    lb2 = special.betaln(x + delta, w + 1)
    log_terms = lb + np.log(-np.expm1(lb2 - lb))
    start = gamma * head + u
    s_lo = min(1e-10, 1e-10 / max(float(start.max()), 1.0), 1e-10 / gamma)
    s_hi = 80.0 / float(start.min())
    s, wt = geometric_gauss_rule(s_lo, s_hi, order=16)
    logs = (_log_sigma_tail_integrand(s[None, :], start[:, None], gamma, w)
            + np.log(-np.expm1(-delta * s))[None, :])
    tail = np.exp(logs) @ wt
    stacked = np.concatenate([log_terms, np.log(tail)[:, None]], axis=1)
    return special.logsumexp(stacked, axis=1)


# ---------------------------------------------------------------------------
# adaptive quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and endpoint information for the adaptive integrators.

    ``endpoint_singularity`` is ``None``, ``("left_power", e)`` or
    ``("right_power", e)`` meaning the integrand behaves like ``t^e`` near the
    left endpoint or ``(1-t)^e`` near the right one (``e > -1``).
    """

    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_subdivisions: int = 200
    endpoint_singularity: tuple[str, float] | None = None

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise DomainError("quadrature tolerances must be positive")
        if self.endpoint_singularity is not None:
            kind, e = self.endpoint_singularity
            if kind not in ("left_power", "right_power"):
                raise DomainError(f"unknown singularity kind {kind!r}")
            if not e > -1:
                raise DomainError("singularity exponent must exceed -1")


DEFAULT_QUAD = QuadratureSpec()


def _quad(f: Callable[[float], float], a: float, b: float, spec: QuadratureSpec) -> float:
    out = integrate.quad(f, a, b, epsabs=spec.abs_tol, epsrel=spec.rel_tol,
                         limit=spec.max_subdivisions, full_output=1)
    value, err = out[0], out[1]
    if len(out) > 3 and out[3]:
        tol = max(spec.abs_tol, spec.rel_tol * abs(value))
        # QUADPACK warnings with a tiny error estimate are roundoff noise
        if not err <= 100 * tol:
            raise AccuracyError(f"quadrature did not converge: {out[3]}", value)
    return value


def integrate_unit(f: Callable[[float], float], spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Adaptive Gauss-Kronrod estimate of the integral of ``f`` over (0, 1).

    A declared power singularity ``t^e`` at an endpoint is removed with the
    substitution ``t = s^(1/(1+e))`` (mirrored for the right endpoint).
    """
    sing = spec.endpoint_singularity
    if sing is None:
        return _quad(f, 0.0, 1.0, spec)
    kind, e = sing
    m = 1.0 / (1.0 + e)
    if kind == "left_power":
        def g(s):
            if s <= 0.0:
                return 0.0
            return f(s ** m) * m * s ** (m - 1.0)
    else:
        def g(s):
            if s <= 0.0:
                return 0.0
            return f(1.0 - s ** m) * m * s ** (m - 1.0)
    return _quad(g, 0.0, 1.0, spec)


def integrate_halfline(f: Callable[[float], float], spec: QuadratureSpec = DEFAULT_QUAD,
                       scale: float = 1.0) -> float:
    """Integral of ``f`` over (0, inf) for integrands with exponential decay.

    The range is split at ``scale`` (the decay length); the finite piece uses
    the adaptive rule on (0, scale) and the remainder the infinite-interval
    transform.  A ``left_power`` singularity at 0 is removed by substitution.
    """
    sing = spec.endpoint_singularity
    if sing is not None and sing[0] == "left_power":
        m = 1.0 / (1.0 + sing[1])
        cut = scale ** (1.0 / m)

        def head(s):
            if s <= 0.0:
                return 0.0
            return f(s ** m) * m * s ** (m - 1.0)

        first = _quad(head, 0.0, cut, spec)
    else:
        first = _quad(f, 0.0, scale, spec)
    second = _quad(f, scale, np.inf, spec)
    return first + second

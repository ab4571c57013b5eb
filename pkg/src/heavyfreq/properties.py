"""Dataset-free numerical property checks, run by ``heavyfreq verify``."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .calibrative import PROPER, QUASI, calibrate_general, calibrated, classify, tail_index, verify_mixture
from .distributions import (GB1, GW2, GZY, HGZY, ZY, Beta, GeneralizedWaring, GSigmaB, HGSigmaB,
                            Kumaraswamy, LogitNormal, NegativeBinomial, SigmaB, SigmaBLimit, Waring,
                            Yule, reduce)

MIXTURE_TOL = 1e-7
HIERARCHY_TOL = 1e-10


@dataclass
class PropertyRow:
    suite: str
    name: str
    measured: float
    threshold: float
    passed: bool
    detail: str = ""


def mixture_suite(x_max: int = 30) -> list[PropertyRow]:
    """Mixed NB pmf against the target count pmf."""
    cases = [
        ("Yule(1.3) from Beta(1,1.3), r=1", Yule(1.3), Beta(1.0, 1.3), 1.0),
        ("Waring(2,3) from Beta(2,3), r=1", Waring(2.0, 3.0), Beta(2.0, 3.0), 1.0),
        ("ZY(1.09,60.86) from SigmaB, r=1", ZY(1.09, 60.86), SigmaB(1.09, 60.86), 1.0),
        ("ZY(1.09,0) from SigmaB limit, r=1", ZY(1.09, 0.0), SigmaBLimit(1.09), 1.0),
        ("GZY(0.07,0.9,23.6) from GSigmaB, r=1", GZY(0.07, 0.9, 23.6), GSigmaB(0.07, 0.9, 23.6), 1.0),
        ("HGZY(0.0049,3.31,939,70) from HGSigmaB, r=1", HGZY(0.0049, 3.31, 939.0, 70.0),
         HGSigmaB(0.0049, 3.31, 939.0, 70.0), 1.0),
        ("GW2(2,1.5,0.7) from GB1, r=1", GW2(2.0, 1.5, 0.7), GB1(2.0, 1.5, 0.7), 1.0),
        ("ZY(1.2,2) from SigmaB, r=3", ZY(1.2, 2.0), SigmaB(1.2, 2.0), 3.0),
        ("Waring(0.5,1) from Beta(0.5,1), r=0.7", Waring(0.5, 1.0), Beta(0.5, 1.0), 0.7),
        ("Waring(1,1) quasi-density, r=0.5", Waring(1.0, 1.0), Beta(1.0, 1.0), 0.5),
        ("ZY(1.2,2) quasi-density, r=0.5", ZY(1.2, 2.0), SigmaB(1.2, 2.0), 0.5),
    ]
    rows = []
    for name, model, base, r in cases:
        density = base if r == 1.0 else calibrated(base, r)
        rep = verify_mixture(model, density, r, x_max, MIXTURE_TOL)
        rows.append(PropertyRow("mixture", name, rep.max_abs_error, MIXTURE_TOL, rep.passed))
    return rows


def invariance_suite(x_max: int = 30) -> list[PropertyRow]:
    """Waring(2,3) regenerated from NB(r) mixtures for several r."""
    rows = []
    for r in (1.5, 2.0, 4.0):
        rep = verify_mixture(Waring(2.0, 3.0), calibrated(Beta(2.0, 3.0), r), r, x_max, MIXTURE_TOL)
        rows.append(PropertyRow("invariance", f"Waring(2,3), r={r:g}", rep.max_abs_error,
                                MIXTURE_TOL, rep.passed))
    return rows


HIERARCHY_EDGES = (
    ("HGZY d=1 -> GZY", HGZY(0.3, 1.2, 2.5, 1.0)),
    ("GZY a=1/c -> ZY", GZY(0.4, 1.2, 2.5)),
    ("ZY c=0 -> Zeta", ZY(1.3, 0.0)),
    ("ZY c=1 -> Yule", ZY(1.3, 1.0)),
    ("GW2 c=1 -> Waring", GW2(2.0, 1.5, 1.0)),
    ("Waring a=1 -> Yule", Waring(1.0, 1.5)),
    ("GeneralizedWaring r=1 -> Waring", GeneralizedWaring(1.0, 2.0, 1.5)),
    ("NegativeBinomial r=1 -> Geometric", NegativeBinomial(1.0, 0.4)),
)


def hierarchy_suite(x_max: int = 200) -> list[PropertyRow]:
    """Special-case parameters against the reduced family, relative pmf error."""
    x = np.arange(x_max + 1)
    rows = []
    for name, model in HIERARCHY_EDGES:
        child = reduce(model)
        if child is None:
            rows.append(PropertyRow("hierarchy", name, np.nan, HIERARCHY_TOL, False, "no reduction"))
            continue
        err = float(np.max(np.abs(np.expm1(model.log_pmf(x) - child.log_pmf(x)))))
        rows.append(PropertyRow("hierarchy", name, err, HIERARCHY_TOL, err < HIERARCHY_TOL,
                                child.family))
    return rows


CLASSIFY_FIXTURES = (
    ("Beta(0.5,1), r=0.3", Beta(0.5, 1.0), 0.3, QUASI),
    ("Beta(0.5,1), r=0.7", Beta(0.5, 1.0), 0.7, PROPER),
    ("Beta(1,1), r=0.5", Beta(1.0, 1.0), 0.5, QUASI),
    ("Beta(2,3), r=0.5", Beta(2.0, 3.0), 0.5, QUASI),
    ("SigmaB(1.2,2), r=0.5", SigmaB(1.2, 2.0), 0.5, QUASI),
    ("Kumaraswamy(0.5,0.3), r=0.3", Kumaraswamy(0.5, 0.3), 0.3, QUASI),
)


def direct_sign(base, r: float) -> str:
    """Verdict from the sign of the signed density on a logit grid."""
    p = np.concatenate([np.logspace(-12, -1, 45), np.linspace(0.11, 0.99, 45), [1e-4, 1e-3, 1e-2]])
    vals = calibrate_general(base, r, np.sort(p), check=False)
    return QUASI if np.min(vals) < -1e-12 else PROPER


def classify_suite() -> list[PropertyRow]:
    rows = []
    for name, base, r, expected in CLASSIFY_FIXTURES:
        verdict = classify(base, r).verdict
        direct = direct_sign(base, r)
        ok = verdict == direct == expected
        rows.append(PropertyRow("classify", name, float(ok), 1.0, ok,
                                f"classify={verdict} direct={direct}"))
    return rows


TAIL_FIXTURES = (
    ("GB1(0.7,1.4,2.2)", GB1(0.7, 1.4, 2.2), True),
    ("SigmaB(1.09,60.86)", SigmaB(1.09, 60.86), True),
    ("SigmaB(0.3,2)", SigmaB(0.3, 2.0), True),
    ("LogitNormal(0,1)", LogitNormal(0.0, 1.0), False),
)


def tail_suite() -> list[PropertyRow]:
    rows = []
    for name, base, heavy in TAIL_FIXTURES:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rep = tail_index(base)
        rows.append(PropertyRow("tail", name, float(rep.limit_estimate), float(heavy),
                                rep.heavy == heavy, f"heavy={rep.heavy}"))
    return rows


SUITES = {
    "mixture": mixture_suite,
    "invariance": invariance_suite,
    "hierarchy": hierarchy_suite,
    "classify": classify_suite,
    "tail": tail_suite,
}


def run_property_suite(names=None) -> list[PropertyRow]:
    rows = []
    for name, suite in SUITES.items():
        if names is None or name in names:
            rows.extend(suite())
    return rows

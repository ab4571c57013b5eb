"""Command-line entry point: summarize, fit, glm, mixfit, verify."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dataio, estimation, glm, mixfit
from .numerics import AccuracyError, DomainError

DATA_ENV = "HEAVYFREQ_DATA"

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (int, np.integer)):
        return int(v)
    return v


def write_table(out_dir: Path, name: str, header: Sequence[str], rows, fmt: str) -> Path:
    """Write ``name``.tsv (or .json) with a header row; returns the path."""
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out_dir / f"{name}.json"
        data = [{h: _json_value(v) for h, v in zip(header, row)} for row in rows]
        path.write_text(json.dumps(data, indent=1) + "\n")
        return path
    path = out_dir / f"{name}.tsv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def read_table(path: Path) -> list[dict]:
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text())
    with path.open() as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def _show(text: str):
    print(text, file=sys.stdout)


def _fmt4(v) -> str:
    if v is None:
        return "-"
    v = float(v)
    return "-" if math.isnan(v) else f"{v:.4f}"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _data_path(args) -> Path:
    path = args.data or os.environ.get(DATA_ENV)
    if not path:
        raise UsageError(f"no dataset: pass --data or set {DATA_ENV}")
    return Path(path)


def _load(args):
    path = _data_path(args)
    if not path.exists():
        raise UsageError(f"dataset not found: {path}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", dataio.PartialLoadWarning)
        records, manifest = dataio.parse_dataset(path)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return records, manifest


def cmd_summarize(args) -> int:
    records, manifest = _load(args)
    claims = np.array([r.claims for r in records])
    exposure = np.array([r.exposure for r in records])
    header = ["variable", "n", "min", "max", "mean", "sd", "skewness", "kurtosis", "convention"]
    rows = []
    for name, values in (("claims", claims), ("exposure", exposure)):
        s = estimation.summary_stats(values)
        rows.append([name, s["n"], s["min"], s["max"], s["mean"], s["sd"], s["skewness"],
                     s["kurtosis"], s["convention"]])
    write_table(args.out, "summary", header, rows, args.format)
    hist = [["claims", x, x, c] for x, c in dataio.empirical_histogram(claims, integer=True)]
    hist += [["exposure", lo, hi, c]
             for lo, hi, c in dataio.empirical_histogram(exposure, bins=args.bins, integer=False)]
    write_table(args.out, "histogram", ["variable", "left", "right", "count"], hist, args.format)
    hazard = [["claims", x, h] for x, h in dataio.empirical_hazard(claims)]
    write_table(args.out, "hazard", ["variable", "x", "hazard"], hazard, args.format)
    write_table(args.out, "manifest", ["path", "rows", "sha256"],
                [[manifest.path, manifest.row_count, manifest.checksum]], args.format)
    for row in rows:
        _show("\t".join([row[0], str(row[1])] + [_fmt4(v) for v in row[2:8]]))
    return EXIT_OK


def _families(args, default):
    if not args.families:
        return list(default)
    names = [f.strip() for f in args.families.split(",") if f.strip()]
    return names


def cmd_fit(args) -> int:
    families = _families(args, estimation.HG_FAMILIES)
    unknown = [f for f in families if f not in estimation.FAMILIES]
    if unknown:
        raise UsageError(f"unknown families: {', '.join(unknown)}")
    records, _ = _load(args)
    sample = estimation.CountSample(np.array([r.claims for r in records]))
    reports = estimation.fit_all_hg(sample, families)
    fit_rows, gof_rows = [], []
    for rep in reports:
        f = rep.fit
        se = f.std_errors if f.std_errors is not None else [math.nan] * f.k
        params = ";".join(f"{n}={_cell(v)}" for n, v in zip(f.param_names, f.estimates))
        ses = ";".join(f"{n}={_cell(v)}" for n, v in zip(f.param_names, se))
        fit_rows.append([f.family, params, ses, f.log_likelihood, f.aic, f.bic, f.converged,
                         f.boundary_flag, f.status, rep.error or ""])
        if rep.gof is not None:
            gof_rows.append([f.family, rep.gof.statistic, rep.gof.df, rep.gof.p_value,
                             rep.gof.head_cells, rep.rejected])
    write_table(args.out, "fits", ["family", "estimates", "std_errors", "loglik", "aic", "bic",
                                   "converged", "boundary", "status", "error"], fit_rows, args.format)
    write_table(args.out, "gof", ["family", "chisq", "df", "p_value", "head_cells", "rejected"],
                gof_rows, args.format)
    for rep in reports:
        f = rep.fit
        est = " ".join(_fmt4(v) for v in f.estimates)
        gof = f"chisq {_fmt4(rep.gof.statistic)} df {rep.gof.df} p {_fmt4(rep.gof.p_value)}" \
            if rep.gof is not None else ""
        _show(f"{f.family}\t{est}\tloglik {_fmt4(f.log_likelihood)}\t{f.status}\t{gof}")
    ok = any(r.fit.status == "ok" for r in reports)
    return EXIT_OK if ok else EXIT_FAILURE


def run_glm(records, model: str):
    if model == "I":
        fit = glm.fit_poisson(records)
        return fit, glm.derive_mixing_sample(fit, "lambda")
    fit = glm.fit_negbin(records)
    kind = "lambda" if fit.r_divergent else "p"
    return fit, glm.derive_mixing_sample(fit, kind)


def cmd_glm(args) -> int:
    records, _ = _load(args)
    fit, sample = run_glm(records, args.model)
    coef_rows = []
    if fit.observation_family == "NegativeBinomial":
        coef_rows.append(["r", fit.r_hat, fit.r_se, math.nan])
    for name, b, se, z in zip(fit.names, fit.coefficients, fit.std_errors, fit.z_values):
        coef_rows.append([name, b, se, z])
    write_table(args.out, "coefficients", ["term", "estimate", "std_error", "z_value"], coef_rows,
                args.format)
    stats = [["family", fit.observation_family], ["loglik", fit.log_likelihood],
             ["deviance", fit.residual_deviance], ["df", fit.df],
             ["deviance_p_value", fit.deviance_p_value], ["aic", fit.aic], ["bic", fit.bic],
             ["r_hat", fit.r_hat], ["r_divergent", fit.r_divergent], ["status", fit.status]]
    write_table(args.out, "fitstats", ["statistic", "value"], stats, args.format)
    write_table(args.out, "mixing_sample", ["index", "kind", "value", "r_hat"],
                [[i + 1, sample.kind, v, sample.r_hat] for i, v in enumerate(sample.values)],
                args.format)
    for name, b, se, z in coef_rows:
        _show(f"{name}\t{_fmt4(b)}\t{_fmt4(se)}\t{_fmt4(z)}")
    _show(f"loglik {_fmt4(fit.log_likelihood)}\tdeviance {_fmt4(fit.residual_deviance)}"
          f"\tdf {fit.df}\tp {_fmt4(fit.deviance_p_value)}")
    return EXIT_OK


def _mixing_sample(args):
    if args.sample:
        rows = read_table(Path(args.sample))
        kinds = {row["kind"] for row in rows}
        if kinds != {args.kind}:
            raise UsageError(f"sample file holds {sorted(kinds)} values, not {args.kind}")
        values = np.array([float(row["value"]) for row in rows])
        return glm.MixingSample(args.kind, values, args.r)
    records, _ = _load(args)
    _, sample = run_glm(records, "I" if args.kind == "lambda" else "II")
    if sample.kind != args.kind:
        raise DomainError("the NB regression gave no finite r, so no p sample exists")
    return sample


def cmd_mixfit(args) -> int:
    if args.kind == "p" and args.r is None:
        raise UsageError("--kind p requires --r")
    families = _families(args, mixfit.MIXING_TARGETS)
    unknown = [f for f in families if f not in mixfit.MIXING_TARGETS]
    if unknown:
        raise UsageError(f"unknown mixing families: {', '.join(unknown)}")
    sample = _mixing_sample(args)
    reports = mixfit.fit_all_mixing(sample, families, r_hat=args.r)
    fit_rows, gof_rows = [], []
    for fam, rep in zip([f for f in families], reports):
        f = rep.fit
        if f is None:
            fit_rows.append([fam, "", "", math.nan, math.nan, math.nan, False, "error", rep.error])
            continue
        se = f.std_errors if f.std_errors is not None else [math.nan] * f.k
        params = ";".join(f"{n}={_cell(v)}" for n, v in zip(f.param_names, f.estimates))
        ses = ";".join(f"{n}={_cell(v)}" for n, v in zip(f.param_names, se))
        fit_rows.append([f.family, params, ses, f.log_likelihood, f.aic, f.bic, f.converged,
                         f.status, rep.error or ""])
        if rep.gof is not None:
            gof_rows.append([f.family, rep.gof.statistic, rep.gof.df, rep.gof.p_value,
                             rep.gof.head_cells, rep.rejected])
            _show(f"{f.family}\t{' '.join(_fmt4(v) for v in f.estimates)}\tloglik "
                  f"{_fmt4(f.log_likelihood)}\tchisq {_fmt4(rep.gof.statistic)} df {rep.gof.df} "
                  f"p {_fmt4(rep.gof.p_value)}")
    write_table(args.out, "mixfits", ["family", "estimates", "std_errors", "loglik", "aic", "bic",
                                      "converged", "status", "error"], fit_rows, args.format)
    write_table(args.out, "mixgof", ["family", "chisq", "df", "p_value", "head_cells", "rejected"],
                gof_rows, args.format)
    ok = any(r.fit is not None and r.fit.status == "ok" for r in reports)
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_verify(args) -> int:
    from .properties import run_property_suite
    names = args.suites.split(",") if args.suites else None
    rows = run_property_suite(names)
    write_table(args.out, "properties", ["suite", "name", "measured", "threshold", "passed", "detail"],
                [[r.suite, r.name, r.measured, r.threshold, r.passed, r.detail] for r in rows],
                args.format)
    for r in rows:
        _show(f"{'PASS' if r.passed else 'FAIL'}\t{r.suite}\t{r.name}\t{r.measured:.3g}")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_FAILURE


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", help=f"claims file (default: ${DATA_ENV})")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--format", choices=("tsv", "json"), default="tsv")

    parser = argparse.ArgumentParser(prog="heavyfreq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summarize", parents=[common], help="summary statistics, histograms, hazard")
    p.add_argument("--bins", type=int, default=50, help="bins for continuous histograms")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("fit", parents=[common], help="fit heavy-tailed count families")
    p.add_argument("--families", help="comma-separated family names")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("glm", parents=[common], help="Poisson (I) or NB (II) regression")
    p.add_argument("--model", choices=("I", "II"), default="I")
    p.set_defaults(func=cmd_glm)

    p = sub.add_parser("mixfit", parents=[common], help="fit mixing densities to a GLM sample")
    p.add_argument("--families", help="comma-separated subset of HGZY,GZY,Waring")
    p.add_argument("--kind", choices=("lambda", "p"), default="lambda")
    p.add_argument("--r", type=float, help="NB r for --kind p")
    p.add_argument("--sample", help="mixing_sample file from the glm command")
    p.set_defaults(func=cmd_mixfit)

    p = sub.add_parser("verify", parents=[common], help="dataset-free property checks")
    p.add_argument("--suites", help="comma-separated subset of mixture,invariance,hierarchy,classify,tail")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"heavyfreq {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, AccuracyError, ArithmeticError, OSError) as exc:
        print(f"heavyfreq {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

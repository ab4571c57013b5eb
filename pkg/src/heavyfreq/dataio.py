"""Reading the rating-cell claims file and tabulating empirical summaries."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .glm import FACTORS, RiskRecord
from .numerics import DomainError

COLUMNS = ("Kilometres", "Zone", "Bonus", "Make", "Insured", "Claims", "Payment")
_FIELDS = ("kilometres", "zone", "bonus", "make", "exposure", "claims", "payment")
_LEVELS = {attr: levels for _, attr, levels in FACTORS}


class FormatError(DomainError):
    """The file does not have the expected layout."""


class PartialLoadWarning(UserWarning):
    """Some rows were rejected during parsing."""


@dataclass(frozen=True)
class DatasetManifest:
    path: str
    row_count: int
    column_map: dict
    checksum: str
    rejected: tuple = ()


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _sniff_delimiter(first_line: str) -> str:
    return "\t" if "\t" in first_line else ","


def _parse_row(fields, column_map):
    vals = {}
    for attr, col in zip(_FIELDS, COLUMNS):
        raw = fields[column_map[col]].strip()
        vals[attr] = float(raw)
    for attr in ("kilometres", "zone", "bonus", "make"):
        v = vals[attr]
        if v != math.floor(v) or not 1 <= v <= _LEVELS[attr]:
            raise ValueError(f"{attr} level {v:g} outside 1..{_LEVELS[attr]}")
        vals[attr] = int(v)
    if not vals["exposure"] > 0:
        raise ValueError(f"exposure {vals['exposure']:g} is not positive")
    claims = vals["claims"]
    if claims < 0 or claims != math.floor(claims):
        raise ValueError(f"claims {claims:g} is not a non-negative integer")
    vals["claims"] = int(claims)
    if vals["payment"] < 0:
        raise ValueError(f"payment {vals['payment']:g} is negative")
    return RiskRecord(**vals)


def parse_text(text: str, path: str = "<string>",
               column_map: Optional[Mapping[str, int]] = None) -> tuple[list[RiskRecord], DatasetManifest]:
    """Parse delimited text; see ``parse_dataset``."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: file is empty")
    delim = _sniff_delimiter(lines[0])
    rows = list(csv.reader(io.StringIO("\n".join(lines)), delimiter=delim))
    header = None
    first_line = 1
    if not all(_is_number(f) for f in rows[0] if f.strip()):
        header = [f.strip() for f in rows[0]]
        rows = rows[1:]
        first_line = 2
    if not rows:
        raise FormatError(f"{path}: no data rows")
    if column_map is None:
        if header is not None and all(c in header for c in COLUMNS):
            column_map = {c: header.index(c) for c in COLUMNS}
        else:
            column_map = {c: i for i, c in enumerate(COLUMNS)}
    else:
        missing = [c for c in COLUMNS if c not in column_map]
        if missing:
            raise FormatError(f"column map lacks {', '.join(missing)}")
        column_map = dict(column_map)
    width = len(header) if header is not None else len(rows[0])
    if width < len(COLUMNS) or max(column_map.values()) >= width:
        raise FormatError(f"{path}: expected {len(COLUMNS)} columns, found {width}")
    records, rejected = [], []
    for offset, fields in enumerate(rows):
        line = first_line + offset
        if len(fields) != width:
            raise FormatError(f"{path}:{line}: expected {width} columns, found {len(fields)}")
        try:
            records.append(_parse_row(fields, column_map))
        except ValueError as exc:
            rejected.append((line, str(exc)))
    if rejected:
        detail = "; ".join(f"line {ln}: {msg}" for ln, msg in rejected[:5])
        warnings.warn(f"{path}: rejected {len(rejected)} of {len(rows)} rows ({detail})",
                      PartialLoadWarning, stacklevel=3)
    checksum = hashlib.sha256(text.encode()).hexdigest()
    manifest = DatasetManifest(str(path), len(records), column_map, checksum, tuple(rejected))
    return records, manifest


def parse_dataset(path, column_map: Optional[Mapping[str, int]] = None
                  ) -> tuple[list[RiskRecord], DatasetManifest]:
    """Read comma- or tab-delimited records in the canonical column order.

    A header row is detected by a non-numeric first line; with a header the
    columns are located by name.  Rows with invalid levels or non-positive
    exposure are dropped with a ``PartialLoadWarning`` listing line numbers.
    """
    path = Path(path)
    return parse_text(path.read_text(), str(path), column_map)


def format_records(records: Sequence[RiskRecord], delimiter: str = "\t") -> str:
    """Serialise records in the canonical layout with a header row."""
    out = io.StringIO()
    writer = csv.writer(out, delimiter=delimiter, lineterminator="\n")
    writer.writerow(COLUMNS)
    for rec in records:
        writer.writerow([rec.kilometres, rec.zone, rec.bonus, rec.make, repr(float(rec.exposure)),
                         rec.claims, repr(float(rec.payment))])
    return out.getvalue()


def empirical_hazard(counts) -> list[tuple[int, float]]:
    """hazard(x) = #{X = x} / #{X >= x} at each observed x."""
    counts = np.asarray(getattr(counts, "counts", counts), dtype=int)
    if counts.size == 0:
        raise DomainError("empty sample")
    values, freq = np.unique(counts, return_counts=True)
    at_least = np.cumsum(freq[::-1])[::-1]
    return [(int(x), float(f / a)) for x, f, a in zip(values, freq, at_least)]


def empirical_histogram(values, bins: Optional[int] = None, integer: Optional[bool] = None,
                        value_range: Optional[tuple[float, float]] = None) -> list[tuple]:
    """Counts per bin.

    Integer data get one bin per observed value (``(value, count)`` rows);
    otherwise ``bins`` equal-width bins give ``(left, right, count)`` rows.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise DomainError("empty sample")
    if integer is None:
        integer = bins is None and bool(np.all(values == np.round(values)))
    if integer:
        x, c = np.unique(values.astype(np.int64), return_counts=True)
        return [(int(a), int(b)) for a, b in zip(x, c)]
    counts, edges = np.histogram(values, bins=bins or 50, range=value_range)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(counts.size)]

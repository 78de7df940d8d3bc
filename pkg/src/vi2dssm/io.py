"""CSV series, result tables and flat ``key = value`` config files."""

from __future__ import annotations

import csv
import math

import numpy as np

from .errors import ParseError


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_csv_series(path):
    """Load a series stored with one row per time step and one column per variable.

    A first row that does not parse as numbers is taken as the header of
    variable names. Returns ``(names, X)`` with ``X`` of shape ``(C, T)``;
    ``names`` is None without a header.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = None
    data = []
    width = None
    for lineno, row in enumerate(rows, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        cells = [cell.strip() for cell in row]
        if names is None and not data and not all(_is_number(c) for c in cells):
            names = cells
            width = len(cells)
            continue
        if width is None:
            width = len(cells)
        if len(cells) != width:
            raise ParseError(f"expected {width} columns, found {len(cells)}", line=lineno)
        values = []
        for j, cell in enumerate(cells):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"column {j + 1}: {cell!r} is not a number", line=lineno) from None
            if not math.isfinite(v):
                raise ParseError(f"column {j + 1}: non-finite value {cell!r}", line=lineno)
            values.append(v)
        data.append(values)
    if not data:
        raise ParseError("no data rows", line=len(rows) or 1)
    return names, np.array(data, dtype=float).T


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv_series(path, X, names=None):
    """Write ``X`` (C, T) with one row per time step; 17 significant digits round-trip exactly."""
    X = np.asarray(X, dtype=float)
    write_table(path, names, X.T.tolist())


def write_table(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path):
    """Header and rows of a CSV table, numeric cells converted to float."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ParseError("empty table", line=1)
    header, body = rows[0], rows[1:]
    out = []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns, found {len(row)}", line=lineno)
        out.append([float(c) if _is_number(c) else c for c in row])
    return header, out


def read_config(path):
    """Flat ``key = value`` file with ``#`` comments, returned as a dict of strings."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text)


def parse_config(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", line=lineno)
        out[key] = value
    return out

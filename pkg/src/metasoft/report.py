"""Aggregate per-seed metrics CSVs into mean/min/max learning curves."""

import csv
import math

import numpy as np


class SchemaMismatch(ValueError):
    pass


def _read(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or "epoch" not in rows[0]:
        raise SchemaMismatch(f"{path}: missing header or 'epoch' column")
    return rows[0], rows[1:]


def _num(text):
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        return None


def aggregate(paths):
    """Return (header, rows) with one row per epoch.

    Numeric columns become ``<col>_mean``, ``<col>_min``, ``<col>_max``
    (blank where every input is blank). Text columns are carried through
    and must agree across inputs.
    """
    if not paths:
        raise ValueError("need at least one metrics file")
    header, first = _read(paths[0])
    tables = [first]
    for p in paths[1:]:
        h, rows = _read(p)
        if h != header:
            missing = sorted(set(header) - set(h))
            extra = sorted(set(h) - set(header))
            raise SchemaMismatch(f"{p}: columns differ from {paths[0]} (missing {missing}, extra {extra})")
        tables.append(rows)
    epoch_col = header.index("epoch")
    epochs = [r[epoch_col] for r in first]
    for p, rows in zip(paths[1:], tables[1:]):
        if [r[epoch_col] for r in rows] != epochs:
            raise SchemaMismatch(f"{p}: epoch sequence differs from {paths[0]}")

    text_cols = [c for i, c in enumerate(header) if i != epoch_col and any(_num(r[i]) is None for r in first)]
    num_cols = [c for i, c in enumerate(header) if i != epoch_col and c not in text_cols]
    out_header = ["epoch"] + text_cols + [f"{c}_{s}" for c in num_cols for s in ("mean", "min", "max")]
    out_rows = []
    for k, epoch in enumerate(epochs):
        row = [epoch]
        for c in text_cols:
            i = header.index(c)
            vals = {t[k][i] for t in tables}
            if len(vals) != 1:
                raise SchemaMismatch(f"column {c!r} disagrees across files at epoch {epoch}: {sorted(vals)}")
            row.append(vals.pop())
        for c in num_cols:
            i = header.index(c)
            vals = []
            for p, t in zip(paths, tables):
                v = _num(t[k][i])
                if v is None:
                    raise SchemaMismatch(f"{p}: non-numeric value {t[k][i]!r} in column {c!r}")
                vals.append(v)
            vals = np.array(vals)
            if np.all(np.isnan(vals)):
                row += ["", "", ""]
            else:
                row += [repr(float(np.nanmean(vals))), repr(float(np.nanmin(vals))), repr(float(np.nanmax(vals)))]
        out_rows.append(row)
    return out_header, out_rows


def write_report(paths, out):
    header, rows = aggregate(paths)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return header, rows

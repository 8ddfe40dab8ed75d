"""Generic CSV datasets: attribute columns plus numeric feature columns."""

from __future__ import annotations

import csv
import math
from typing import Optional, Sequence

import numpy as np

from ..errors import DataFormatError


def load_csv_dataset(path, attribute_columns: Optional[Sequence[str]] = None):
    """Read a headed CSV into attribute and feature matrices.

    Without ``attribute_columns`` the columns named ``s`` or ``s<digits>``
    are attributes (this is how synthetic dumps are written); ``label`` is
    also accepted. All remaining columns are features, in file order.

    Returns
    -------
    s : ndarray (n, d_s)
    x : ndarray (n, d_x)
    feature_names : list of str

    Raises
    ------
    DataFormatError
        With the offending line and column for unreadable values.
    """
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except (OSError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise DataFormatError(f"{path}: need a header and at least one data row")
    header = [h.strip() for h in rows[0]]
    if attribute_columns is None:
        attrs = [h for h in header if h == "label" or (h.startswith("s") and (h == "s" or h[1:].isdigit()))]
    else:
        attrs = list(attribute_columns)
        missing = [a for a in attrs if a not in header]
        if missing:
            raise DataFormatError(f"{path}: attribute column(s) {missing} not in header")
    if not attrs:
        raise DataFormatError(f"{path}: no attribute column (expected s, s0.. or label)")
    feats = [h for h in header if h not in attrs]
    if not feats:
        raise DataFormatError(f"{path}: no feature columns")
    data = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataFormatError(f"{path}: line {i}: {len(row)} fields, header has {len(header)}")
        for j, v in enumerate(row):
            try:
                data[i - 2, j] = float(v)
            except ValueError:
                raise DataFormatError(f"{path}: line {i}, column {header[j]!r}: cannot parse {v!r}") from None
            if not math.isfinite(data[i - 2, j]):
                raise DataFormatError(f"{path}: line {i}, column {header[j]!r}: non-finite value")
    pos = {h: j for j, h in enumerate(header)}
    return data[:, [pos[a] for a in attrs]], data[:, [pos[h] for h in feats]], feats


def write_csv_dataset(path, s, x) -> None:
    """Write columns s0.. and x0.. with round-trip float precision."""
    s = np.asarray(s, dtype=np.float64).reshape(len(s), -1)
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([f"s{k}" for k in range(s.shape[1])] + [f"x{k}" for k in range(x.shape[1])])
        for a, b in zip(s, x):
            w.writerow([repr(float(v)) for v in a] + [repr(float(v)) for v in b])

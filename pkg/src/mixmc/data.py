"""Column-typed datasets and CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["Dataset", "DataError", "ingest", "KINDS"]

KINDS = ("real", "count", "categorical")
MISSING_LEVEL = "<missing>"


class DataError(ValueError):
    """Input file does not match the declared data type."""


@dataclass
class Dataset:
    """Observations for one model family.

    ``values`` is a float vector (real), an int64 vector (count) or an
    N x Q int64 code table (categorical).  For categorical data ``levels[q]``
    lists the original strings in code order.
    """

    kind: str
    values: np.ndarray
    columns: list[str] = field(default_factory=list)
    levels: list[list[str]] | None = None
    cardinalities: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown data kind {self.kind!r}")
        v = np.asarray(self.values)
        if self.kind == "real":
            v = v.astype(np.float64).reshape(-1)
            if not np.all(np.isfinite(v)):
                raise DataError("real data must be finite")
        elif self.kind == "count":
            v = v.reshape(-1)
            if v.size and (np.any(v < 0) or np.any(v != np.round(v))):
                raise DataError("counts must be non-negative integers")
            v = v.astype(np.int64)
        else:
            v = v.astype(np.int64)
            if v.ndim == 1:
                v = v[:, None]
            if self.cardinalities is None:
                self.cardinalities = tuple(int(c) + 1 for c in v.max(axis=0)) if v.size else ()
            self.cardinalities = tuple(int(c) for c in self.cardinalities)
            if len(self.cardinalities) != v.shape[1]:
                raise DataError("one cardinality per question is required")
            if v.size and (np.any(v < 0) or np.any(v >= np.array(self.cardinalities))):
                raise DataError("categorical codes must lie in [0, k_q)")
        self.values = v
        if not self.columns:
            n_col = v.shape[1] if v.ndim == 2 else 1
            self.columns = [f"x{q + 1}" for q in range(n_col)]

    @property
    def n_obs(self) -> int:
        return int(self.values.shape[0])

    def write_csv(self, path, header: bool = True, missing_token: str = "") -> None:
        """Write the data back out; categorical cells use their level strings.

        The missing-data level is written as ``missing_token`` so that
        re-ingesting with the missing-as-category option restores the codes.
        """
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if header:
                w.writerow(self.columns)
            if self.kind == "categorical":
                lv = self.levels
                for row in self.values:
                    cells = [lv[q][c] if lv else c for q, c in enumerate(row)]
                    w.writerow([missing_token if c == MISSING_LEVEL else c for c in cells])
            elif self.kind == "count":
                w.writerows([[int(x)] for x in self.values])
            else:
                w.writerows([[repr(float(x))] for x in self.values])

    def level_table(self) -> list[dict]:
        """Code-to-level mapping rows for categorical data."""
        if self.kind != "categorical" or self.levels is None:
            return []
        return [
            {"question": self.columns[q], "code": c, "level": lev}
            for q, lv in enumerate(self.levels)
            for c, lev in enumerate(lv)
        ]


def _looks_numeric(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def ingest(path, kind: str, header: bool | None = None, missing_as_category: bool = False,
           missing_token: str = "") -> Dataset:
    """Read a CSV file as a :class:`Dataset` of the given ``kind``.

    ``header=None`` detects a header row for numeric kinds (first row not
    numeric) and assumes none for categorical data.  Categorical levels are
    coded in order of first appearance.  Cells equal to ``missing_token``
    (after stripping) become an extra last level of their question when
    ``missing_as_category`` is set and are rejected otherwise.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown data kind {kind!r}")
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = [[c.strip() for c in row] for row in csv.reader(fh)]
    # trailing blank lines are layout; an interior blank line is an empty cell
    while rows and not any(rows[-1]):
        rows.pop()
    rows = [r if r else [""] for r in rows]
    if not rows:
        raise DataError(f"{path} contains no rows")
    if header is None:
        header = kind != "categorical" and not all(_looks_numeric(c) for c in rows[0])
    columns = rows[0] if header else []
    body = rows[1:] if header else rows
    if not body:
        raise DataError(f"{path} has a header but no data")
    width = len(body[0])
    for j, row in enumerate(body):
        if len(row) != width:
            raise DataError(f"ragged row {j + 1}: {len(row)} cells, expected {width}")
    if columns and len(columns) != width:
        raise DataError("header width does not match the data")

    if kind == "categorical":
        return _ingest_categorical(body, columns, missing_as_category, missing_token)
    if width != 1:
        raise DataError(f"{kind} data needs exactly one column, found {width}")
    cells = [row[0] for row in body]
    out = np.empty(len(cells))
    for j, cell in enumerate(cells):
        if cell == missing_token:
            raise DataError(f"missing value in row {j + 1}")
        try:
            out[j] = float(cell)
        except ValueError:
            raise DataError(f"unparseable cell {cell!r} in row {j + 1}") from None
        if not math.isfinite(out[j]):
            raise DataError(f"non-finite value in row {j + 1}")
    if kind == "count":
        if np.any(out < 0):
            raise DataError("negative count")
        if np.any(out != np.round(out)):
            raise DataError("non-integer count")
    return Dataset(kind, out, columns=columns[:1])


def _ingest_categorical(body, columns, missing_as_category, missing_token) -> Dataset:
    n_q = len(body[0])
    codes = np.empty((len(body), n_q), dtype=np.int64)
    levels = []
    for q in range(n_q):
        seen: dict[str, int] = {}
        missing_rows = []
        for j, row in enumerate(body):
            cell = row[q]
            if cell == missing_token:
                if not missing_as_category:
                    raise DataError(
                        f"missing cell at row {j + 1}, column {q + 1}; "
                        "use the missing-as-category option to keep it"
                    )
                missing_rows.append(j)
                continue
            codes[j, q] = seen.setdefault(cell, len(seen))
        lv = list(seen)
        if missing_rows:
            codes[missing_rows, q] = len(lv)
            lv.append(MISSING_LEVEL)
        levels.append(lv)
    return Dataset(
        "categorical", codes, columns=list(columns), levels=levels,
        cardinalities=tuple(len(lv) for lv in levels),
    )

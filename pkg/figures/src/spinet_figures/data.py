"""Read the CLI's artifacts: header-row CSV tables and .meta.json sidecars.

Numeric cells are parsed to float (empty cells become NaN); anything that
does not parse stays a string column, which is how the per-cell ``error``
annotations come through.
"""

import csv
import json
from pathlib import Path

import numpy as np

from spinet_figures.errors import EmptyData, MissingColumn


class Table:
    """A loaded CSV: ordered column names and per-column arrays."""

    def __init__(self, path, columns, cells):
        self.path = Path(path)
        self.columns = list(columns)
        self._cells = cells  # column -> list of raw strings

    def __len__(self):
        return len(self._cells[self.columns[0]]) if self.columns else 0

    def has(self, column) -> bool:
        return column in self._cells

    def numbers(self, column) -> np.ndarray:
        """The column as floats; empty/unparseable cells are NaN."""
        if column not in self._cells:
            raise MissingColumn(self.path, column)
        out = np.full(len(self), np.nan)
        for k, cell in enumerate(self._cells[column]):
            try:
                out[k] = float(cell)
            except ValueError:
                pass
        return out

    def strings(self, column) -> list:
        if column not in self._cells:
            raise MissingColumn(self.path, column)
        return list(self._cells[column])


def load_table(path) -> Table:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise EmptyData(path, "no header row")
    header, body = rows[0], rows[1:]
    if not body:
        raise EmptyData(path)
    cells = {name: [row[k] if k < len(row) else "" for row in body]
             for k, name in enumerate(header)}
    return Table(path, header, cells)


def load_meta(csv_path) -> dict:
    """The JSON sidecar written next to *csv_path* (may be absent -> {})."""
    stem = str(csv_path)
    if stem.endswith(".csv"):
        stem = stem[: -len(".csv")]
    meta_path = Path(stem + ".meta.json")
    if not meta_path.exists():
        return {}
    with open(meta_path, encoding="utf-8") as handle:
        return json.load(handle)


def pivot_surface(table: Table, x: str, y: str, value: str):
    """Rebuild a (x_axis, y_axis, field) surface from long-form rows.

    The sweep commands emit one row per cell with repeated axis values;
    every (x, y) pair must occur exactly once or the table is not a
    complete surface.
    """
    xs = table.numbers(x)
    ys = table.numbers(y)
    vs = table.numbers(value)
    if np.all(np.isnan(vs)):
        raise EmptyData(table.path, f"column '{value}' holds no numbers")
    x_axis, xi = np.unique(xs, return_inverse=True)
    y_axis, yi = np.unique(ys, return_inverse=True)
    field = np.full((x_axis.size, y_axis.size), np.nan)
    seen = np.zeros(field.shape, dtype=bool)
    for k in range(len(table)):
        i, j = xi[k], yi[k]
        if seen[i, j]:
            raise EmptyData(table.path, f"duplicate cell at ({xs[k]}, {ys[k]})")
        seen[i, j] = True
        field[i, j] = vs[k]
    if not seen.all():
        raise EmptyData(table.path, "surface has holes (missing axis pairs)")
    return x_axis, y_axis, field

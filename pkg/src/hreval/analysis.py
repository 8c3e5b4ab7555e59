"""Cross-model analytics over a table of reliability scores.

Correlations can be taken on the raw pooled rows or after subtracting each
group's mean, which removes the between-algorithm effect before pooling.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyTable, LengthMismatch, MissingGroup, ZeroVariance
from .metrics import SCORE_NAMES

COLUMNS = (*SCORE_NAMES, "s_hr")
HEADER = ("model_id", "group", *COLUMNS)
UNDEFINED = "undefined"


def _fmt(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


@dataclass
class MetricTable:
    model_ids: list
    groups: list
    values: np.ndarray  # rows x len(COLUMNS); NaN marks an absent score

    def __post_init__(self):
        self.model_ids = [str(m) for m in self.model_ids]
        self.groups = [str(g) for g in self.groups]
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, len(COLUMNS))
        if not (len(self.model_ids) == len(self.groups) == self.values.shape[0]):
            raise LengthMismatch("model_ids, groups and values disagree in length")
        if len(set(self.model_ids)) != len(self.model_ids):
            raise ValueError("model_ids must be unique")

    def __len__(self):
        return len(self.model_ids)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, COLUMNS.index(name)]

    def group_names(self) -> list:
        return sorted(set(self.groups))

    def subset(self, mask) -> "MetricTable":
        mask = np.asarray(mask, dtype=bool)
        return MetricTable([m for m, k in zip(self.model_ids, mask) if k],
                           [g for g, k in zip(self.groups, mask) if k], self.values[mask])

    def sorted(self) -> "MetricTable":
        order = sorted(range(len(self)), key=lambda i: self.model_ids[i])
        return MetricTable([self.model_ids[i] for i in order],
                           [self.groups[i] for i in order], self.values[order])

    @classmethod
    def from_rows(cls, rows) -> "MetricTable":
        rows = list(rows)
        return cls([r["model_id"] for r in rows], [r["group"] for r in rows],
                   [[np.nan if r.get(c) is None else r[c] for c in COLUMNS] for r in rows])

    @classmethod
    def from_cards(cls, cards) -> "MetricTable":
        return cls.from_rows(
            {"model_id": c.model_id, "group": c.group, **{k: getattr(c, k) for k in COLUMNS}}
            for c in cards
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HEADER)
            for mid, grp, row in zip(self.model_ids, self.groups, self.values):
                w.writerow([mid, grp, *(_fmt(v) for v in row)])

    @classmethod
    def read_csv(cls, path) -> "MetricTable":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader, ()))
            if header != HEADER:
                raise ValueError(f"{path}: unexpected header {header}")
            ids, groups, values = [], [], []
            for line in reader:
                if not line:
                    continue
                ids.append(line[0])
                groups.append(line[1])
                values.append([float(v) for v in line[2:]])
        return cls(ids, groups, np.array(values).reshape(-1, len(COLUMNS)))


def group_center(table: MetricTable) -> MetricTable:
    """Subtract each group's column means (NaN entries stay NaN and are ignored)."""
    if len(table) == 0:
        raise EmptyTable("no rows to center")
    out = table.values.copy()
    groups = np.array(table.groups)
    for g in table.group_names():
        rows = groups == g
        block = table.values[rows]
        for j in range(block.shape[1]):
            col = block[:, j]
            ok = ~np.isnan(col)
            if not ok.any():
                continue
            if np.all(col[ok] == col[ok][0]):
                centered = np.where(ok, 0.0, np.nan)
            else:
                centered = col - col[ok].mean()
            out[rows, j] = centered
    return MetricTable(table.model_ids, table.groups, out)


def pearson(x, y) -> tuple[float, float]:
    """Sample Pearson correlation and its square."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"lengths {x.shape} and {y.shape} differ")
    if x.size < 2:
        raise LengthMismatch("need at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    # scale-aware test so rounding residue of a constant column is not mistaken for signal
    tiny_x = (1e-12 * max(1.0, float(np.abs(x).max()))) ** 2 * x.size
    tiny_y = (1e-12 * max(1.0, float(np.abs(y).max()))) ** 2 * y.size
    if sxx <= tiny_x or syy <= tiny_y:
        raise ZeroVariance("correlation undefined for a constant input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = min(1.0, max(-1.0, r))
    return r, r * r


def correlation_matrix(table: MetricTable, centered: bool = False, columns=SCORE_NAMES):
    """Pairwise Pearson r and R^2 matrices; undefined entries are NaN.

    Each pair uses the rows where both scores are present.
    """
    if centered:
        table = group_center(table)
    if len(table) < 2:
        raise EmptyTable("need at least two rows")
    cols = [table.column(c) for c in columns]
    m = len(cols)
    r = np.full((m, m), np.nan)
    r2 = np.full((m, m), np.nan)
    for i in range(m):
        for j in range(i, m):
            ok = ~(np.isnan(cols[i]) | np.isnan(cols[j]))
            try:
                rij, r2ij = pearson(cols[i][ok], cols[j][ok])
            except (ZeroVariance, LengthMismatch):
                continue
            if i == j:
                rij, r2ij = 1.0, 1.0
            r[i, j] = r[j, i] = rij
            r2[i, j] = r2[j, i] = r2ij
    return r, r2


def write_correlations(path, r, r2, columns=SCORE_NAMES) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("metric_a", "metric_b", "r", "r_squared"))
        for i, a in enumerate(columns):
            for j, b in enumerate(columns):
                cells = [UNDEFINED if math.isnan(v) else repr(float(v)) for v in (r[i, j], r2[i, j])]
                w.writerow((a, b, *cells))


def read_correlations(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    names = list(dict.fromkeys(row["metric_a"] for row in rows))
    idx = {n: i for i, n in enumerate(names)}
    r = np.full((len(names), len(names)), np.nan)
    r2 = r.copy()
    for row in rows:
        i, j = idx[row["metric_a"]], idx[row["metric_b"]]
        r[i, j] = np.nan if row["r"] == UNDEFINED else float(row["r"])
        r2[i, j] = np.nan if row["r_squared"] == UNDEFINED else float(row["r_squared"])
    return names, r, r2


def hr_improvement(table: MetricTable, baseline_group: str) -> dict:
    """Best HR score of each non-baseline group minus the best baseline HR score."""
    hr = table.column("s_hr")
    groups = np.array(table.groups)
    if baseline_group not in table.groups:
        raise MissingGroup(f"baseline group {baseline_group!r} not in table")
    base = float(np.nanmax(hr[groups == baseline_group]))
    return {g: float(np.nanmax(hr[groups == g])) - base
            for g in table.group_names() if g != baseline_group}


def average_hr_improvement(tables, baseline_group: str) -> dict:
    """Mean per-group improvement over several tables (e.g. one per dataset).

    A group is averaged over the tables it appears in.
    """
    per_table = [hr_improvement(t, baseline_group) for t in tables]
    groups = sorted({g for d in per_table for g in d})
    return {g: float(np.mean([d[g] for d in per_table if g in d])) for g in groups}


def score_histograms(table: MetricTable, bins: int = 10, columns=COLUMNS) -> list:
    """Per-metric, per-group counts on shared bin edges, as plot-ready rows.

    Edges span [0, 1] widened to cover any ratio scores above 1.
    """
    rows = []
    groups = np.array(table.groups)
    for name in columns:
        col = table.column(name)
        finite = col[~np.isnan(col)]
        if finite.size == 0:
            continue
        lo = min(0.0, float(finite.min()))
        hi = max(1.0, float(finite.max()))
        edges = np.linspace(lo, hi, bins + 1)
        for g in table.group_names():
            vals = col[(groups == g) & ~np.isnan(col)]
            counts, _ = np.histogram(vals, bins=edges)
            for b in range(bins):
                rows.append({"metric": name, "group": g, "bin_lo": float(edges[b]),
                             "bin_hi": float(edges[b + 1]), "count": int(counts[b])})
    return rows


def write_dict_rows(path, rows, fields) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

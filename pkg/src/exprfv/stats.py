"""Correlation and error metrics for symptom analysis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy import stats as sps

SIGNIFICANCE_MARKERS = {"none": "", "p01": "*", "p001": "**"}


class UndefinedCorrelationError(ValueError):
    """Correlation requested for an input with zero variance."""


@dataclass(frozen=True)
class CorrelationCell:
    rho: float
    p_value: float

    @property
    def significance(self) -> str:
        if self.p_value <= 0.001:
            return "p001"
        if self.p_value <= 0.01:
            return "p01"
        return "none"

    @property
    def marker(self) -> str:
        return SIGNIFICANCE_MARKERS[self.significance]

    def __str__(self):
        return f"{self.rho:.2f}{self.marker}"


def _pair(x, y, min_len):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch {x.size} vs {y.size}")
    if x.size < min_len:
        raise ValueError(f"need at least {min_len} observations, got {x.size}")
    if np.any(np.isnan(x)) or np.any(np.isnan(y)):
        raise ValueError("NaN in correlation input")
    return x, y


def pearson(x, y) -> float:
    x, y = _pair(x, y, 2)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("pearson correlation undefined for constant input")
    r = np.dot(dx, dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def spearman(x, y) -> CorrelationCell:
    """Rank correlation with average ranks for ties and a two-sided t-test p-value."""
    x, y = _pair(x, y, 3)
    rx = sps.rankdata(x, method="average")
    ry = sps.rankdata(y, method="average")
    rho = pearson(rx, ry) if np.ptp(rx) > 0 and np.ptp(ry) > 0 else None
    if rho is None:
        raise UndefinedCorrelationError("spearman correlation undefined for constant input")
    n = x.size
    if abs(rho) >= 1.0:
        return CorrelationCell(float(np.sign(rho)), 0.0)
    t = rho * np.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * sps.t.sf(abs(t), n - 2)
    return CorrelationCell(rho, float(min(p, 1.0)))


def mae(p, t) -> float:
    p, t = _pair(p, t, 1)
    return float(np.mean(np.abs(p - t)))


def rmse(p, t) -> float:
    p, t = _pair(p, t, 1)
    return float(np.sqrt(np.mean((p - t) ** 2)))


@dataclass
class CorrelationTable:
    expressions: List[str]
    targets: List[str]  # symptom names followed by "total"
    cells: List[List[object]]  # [expression][target] -> CorrelationCell or None
    counts: List[int]  # videos retained per expression

    @property
    def shape(self):
        return len(self.expressions), len(self.targets)

    def rho_matrix(self) -> np.ndarray:
        return np.array([[np.nan if c is None else c.rho for c in row] for row in self.cells])

    def rows(self):
        """Flat records for delimited output."""
        for i, e in enumerate(self.expressions):
            for j, tname in enumerate(self.targets):
                c = self.cells[i][j]
                yield {
                    "expression": e,
                    "target": tname,
                    "n": self.counts[i],
                    "rho": "" if c is None else repr(c.rho),
                    "p_value": "" if c is None else repr(c.p_value),
                    "significance": "undefined" if c is None else c.significance,
                }

    def render(self) -> str:
        width = max(len(e) for e in self.expressions) + 2
        head = "".ljust(width) + "".join(t[:14].rjust(16) for t in self.targets)
        lines = [head]
        for i, e in enumerate(self.expressions):
            cells = ["-" if c is None else str(c) for c in self.cells[i]]
            lines.append(e.ljust(width) + "".join(s.rjust(16) for s in cells))
        lines.append("")
        lines.append("** p <= 0.001, * p <= 0.01; '-' undefined (constant column)")
        return "\n".join(lines)


def correlation_table(frequencies, scores, totals, expression_names: Sequence[str],
                      symptom_names: Sequence[str], keep_masks=None) -> CorrelationTable:
    """Spearman cell per (expression, symptom) and (expression, total).

    ``keep_masks`` is an optional (N, V) boolean array of the videos retained
    for each expression by the outlier band; the same cohort is used for the
    symptom columns and the total.
    """
    F = np.asarray(frequencies, dtype=np.float64)
    S = np.asarray(scores, dtype=np.float64).reshape(F.shape[0], -1)
    tot = np.asarray(totals, dtype=np.float64).reshape(-1)
    targets = np.column_stack([S, tot])
    V, N = F.shape
    if keep_masks is None:
        keep_masks = np.ones((N, V), dtype=bool)
    cells, counts = [], []
    for i in range(N):
        keep = np.asarray(keep_masks[i], dtype=bool)
        counts.append(int(keep.sum()))
        row = []
        for j in range(targets.shape[1]):
            try:
                row.append(spearman(F[keep, i], targets[keep, j]))
            except (UndefinedCorrelationError, ValueError):
                row.append(None)
        cells.append(row)
    return CorrelationTable(list(expression_names), list(symptom_names) + ["total"], cells, counts)

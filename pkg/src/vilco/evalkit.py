"""Evaluation protocol: interval IoU, Recall@k at IoU thresholds, and the
lower-triangular metrics matrix feeding average performance and backward
forgetting.

Task indices are 0-based throughout: p[i, j] is performance on task j
evaluated after training through task i, populated for j <= i only. All
recall-style values are percentages in [0, 100].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def interval_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """IoU of two 1-D intervals; 0 when disjoint."""
    s1, e1 = a
    s2, e2 = b
    if not (s1 < e1 and s2 < e2):
        raise ValueError(f"degenerate interval: {a} vs {b}")
    inter = min(e1, e2) - max(s1, s2)
    if inter <= 0.0:
        return 0.0
    return inter / (max(e1, e2) - min(s1, s2))


def recall_at_k(
    predictions: list[list[tuple[float, float]]],
    gts: list[list[tuple[float, float]]],
    k: int,
    m: float,
) -> float:
    """Percent of queries whose top-k predictions cover any ground-truth window.

    predictions[q] must already be ranked by descending score; a query is a
    hit when any of its first k windows reaches IoU >= m with any of its
    ground-truth windows.
    """
    if len(predictions) != len(gts):
        raise ValueError("predictions and ground truth must align per query")
    if not gts:
        raise ValueError("recall over zero queries")
    hits = 0
    for preds, gt in zip(predictions, gts):
        if any(interval_iou(p, g) >= m for p in preds[:k] for g in gt):
            hits += 1
    return 100.0 * hits / len(gts)


class MetricsMatrix:
    """N x N lower-triangular matrix of per-task performance percentages."""

    def __init__(self, n: int, metric: str = ""):
        if n < 1:
            raise ValueError("matrix needs at least one task")
        self.n = n
        self.metric = metric
        self.values = np.full((n, n), np.nan)

    def set_cell(self, i: int, j: int, value: float) -> None:
        if j > i:
            raise ValueError(f"cell ({i},{j}) lies above the diagonal")
        if not (0.0 <= value <= 100.0):
            raise ValueError(f"performance {value} outside percent range")
        self.values[i, j] = value

    def cell(self, i: int, j: int) -> float:
        v = self.values[i, j]
        if np.isnan(v):
            raise ValueError(f"cell ({i},{j}) not populated")
        return float(v)

    def to_lists(self) -> list[list[float | None]]:
        return [
            [None if np.isnan(v) else float(v) for v in row]
            for row in self.values
        ]

    @classmethod
    def from_lists(cls, rows: list[list[float | None]], metric: str = "") -> "MetricsMatrix":
        m = cls(len(rows), metric=metric)
        for i, row in enumerate(rows):
            for j, v in enumerate(row):
                if v is not None:
                    m.values[i, j] = v
        return m


def avg_performance(matrix: MetricsMatrix, i: int) -> float:
    """P_i: mean of row i over tasks 0..i (cumulative average performance)."""
    vals = matrix.values[i, : i + 1]
    if np.isnan(vals).any():
        raise ValueError(f"row {i} not fully populated")
    return float(vals.mean())


def backward_forgetting(matrix: MetricsMatrix, i: int) -> float:
    """BwF_i: mean drop of earlier tasks' own-time performance after task i."""
    if i < 1:
        raise ValueError("backward forgetting undefined before a second task")
    diag = matrix.values[np.arange(i), np.arange(i)]
    row = matrix.values[i, :i]
    if np.isnan(diag).any() or np.isnan(row).any():
        raise ValueError(f"diagonal or row {i} not fully populated")
    return float((diag - row).mean())


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple[int, ...] = (1, 5)
    ious: tuple[float, ...] = (0.3, 0.5)

    def __post_init__(self):
        if any(k < 1 for k in self.ks):
            raise ValueError("k must be >= 1")
        if any(not (0.0 < m <= 1.0) for m in self.ious):
            raise ValueError("IoU thresholds must lie in (0, 1]")


def metric_key(k: int, m: float | str) -> str:
    return f"r{k}@{m:g}" if not isinstance(m, str) else f"r{k}@{m}"


def evaluate_task(predict_fn, queries, cfg: EvalConfig = EvalConfig()) -> dict[str, float]:
    """Run predict_fn over queries and score every (k, IoU) combination.

    predict_fn(query) returns that query's ranked (start_s, end_s) windows.
    Also emits the per-k mean over IoU thresholds under key 'r{k}@mean'.
    """
    preds = [predict_fn(q) for q in queries]
    gts = [list(q.windows) for q in queries]
    out: dict[str, float] = {}
    for k in cfg.ks:
        for m in cfg.ious:
            out[metric_key(k, m)] = recall_at_k(preds, gts, k, m)
        out[metric_key(k, "mean")] = float(
            np.mean([out[metric_key(k, m)] for m in cfg.ious])
        )
    return out

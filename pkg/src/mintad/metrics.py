"""Detection metrics and toy-boundary diagnostics."""

from __future__ import annotations

import csv
import itertools
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

METRICS_HEADER = ("run_id", "dataset", "seed", "metric", "value")
INTERFERENCE_FLOOR = 1e-6


def _scored(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise ValueError(f"scores ({s.size}) and labels ({y.size}) differ in length")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 (normal) or 1 (anomalous)")
    return s, y


def auroc(scores, labels) -> float:
    """P(anomalous score > normal score), ties credited 0.5."""
    s, y = _scored(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc needs both normal and anomalous samples")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def aupr(scores, labels) -> float:
    """Step-wise area under precision-recall (average precision).

    Thresholds are the distinct scores in descending order; tied scores
    enter together.
    """
    s, y = _scored(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("aupr needs at least one anomalous sample")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def shortcut_index(grid: np.ndarray, normal_region_mask: np.ndarray, threshold: float) -> float:
    """Fraction of cells outside the normal region scored below ``threshold``."""
    grid = np.asarray(grid)
    mask = np.asarray(normal_region_mask, dtype=bool)
    if grid.shape != mask.shape:
        raise ValueError(f"grid {grid.shape} and mask {mask.shape} differ")
    outside = grid[~mask]
    if outside.size == 0:
        raise ValueError("normal region covers the whole grid")
    return float(np.mean(outside < threshold))


def interference_index(score_fn: Callable[[np.ndarray], np.ndarray], class_means: Sequence,
                       floor: float = INTERFERENCE_FLOOR) -> float:
    """Mean score at pairwise class-mean midpoints over mean score at the means.

    Low values mean the space between classes is treated as normal.
    ``score_fn`` maps an (M, 2) array to M scores.
    """
    means = np.asarray(class_means, dtype=np.float64)
    if means.ndim != 2 or len(means) < 2:
        raise ValueError("interference_index needs at least two class means")
    mids = np.array([(a + b) / 2 for a, b in itertools.combinations(means, 2)])
    at_mids = float(np.mean(score_fn(mids)))
    at_means = float(np.mean(score_fn(means)))
    return at_mids / max(at_means, floor)


def write_metrics_csv(path: str | Path, rows: Iterable[Sequence], append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(METRICS_HEADER)
        for run_id, dataset, seed, metric, value in rows:
            w.writerow([run_id, dataset, int(seed), metric, repr(float(value))])


def read_metrics_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["seed"] = int(r["seed"])
        r["value"] = float(r["value"])
    return rows

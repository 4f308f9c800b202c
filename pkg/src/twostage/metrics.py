"""Prediction-set evaluation: accuracy, error rates, and auROC.

auROC is computed through the Wilcoxon-Mann-Whitney identity with ties
counted as half a concordant pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    auroc: float
    acc: float
    fn_rate: float  # NaN when no positive truth samples
    fp_rate: float  # NaN when no negative truth samples
    n_pos: int
    n_neg: int

    def as_percent_row(self):
        """Values as percentages rounded half-even at 2 decimals (table layout)."""
        def pct(v):
            return "" if np.isnan(v) else f"{round(100.0 * v, 2):.2f}"
        return [pct(self.auroc), pct(self.acc), pct(self.fn_rate), pct(self.fp_rate)]


def confusion(scores, truth, threshold: float = 0.5) -> ConfusionCounts:
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=int)
    if scores.shape != truth.shape:
        raise ValueError("scores and truth must have the same length")
    if not np.all(np.isin(truth, (0, 1))):
        raise ValueError("truth must be binary")
    call = scores >= threshold
    pos = truth == 1
    return ConfusionCounts(
        tp=int(np.sum(call & pos)),
        fp=int(np.sum(call & ~pos)),
        tn=int(np.sum(~call & ~pos)),
        fn=int(np.sum(~call & pos)),
    )


def rates(counts: ConfusionCounts) -> tuple[float, float, float]:
    """(accuracy, fn_rate, fp_rate); undefined rates are NaN, never 0."""
    n = counts.n
    if n == 0:
        raise ValueError("empty confusion counts")
    acc = (counts.tp + counts.tn) / n
    n_pos = counts.tp + counts.fn
    n_neg = counts.fp + counts.tn
    fn_rate = counts.fn / n_pos if n_pos > 0 else float("nan")
    fp_rate = counts.fp / n_neg if n_neg > 0 else float("nan")
    return acc, fn_rate, fp_rate


def auroc(scores, truth) -> float:
    """P(random positive outscores random negative), ties counting 0.5.

    Midrank formulation; agrees exactly with the O(n_pos * n_neg) pairwise
    definition because tied blocks contribute their average rank.
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=int)
    n_pos = int(np.sum(truth == 1))
    n_neg = int(np.sum(truth == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc needs at least one positive and one negative sample")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[i:j + 1] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum_pos = float(np.sum(ranks[truth[order] == 1]))
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def evaluate(scores, truth, threshold: float = 0.5) -> MetricsReport:
    counts = confusion(scores, truth, threshold)
    acc, fn_rate, fp_rate = rates(counts)
    return MetricsReport(
        auroc=auroc(scores, truth),
        acc=acc,
        fn_rate=fn_rate,
        fp_rate=fp_rate,
        n_pos=counts.tp + counts.fn,
        n_neg=counts.fp + counts.tn,
    )

"""Wilcoxon signed-rank test and pairwise significance matrices.

Zero differences are dropped; absolute differences are ranked with
midranks for ties.  The statistic is W = min(W+, W-).  Small samples
(n <= 25) get an exact two-sided p-value from the null distribution of
W+ (computed by dynamic programming over achievable rank sums, which
enumerates the same 2^n sign assignments directly); larger samples use
the normal approximation with tie correction and a continuity
correction of 1/2.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

EXACT_LIMIT = 25


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_p(w: float, ranks: np.ndarray) -> float:
    """P(W+ <= w) doubled, from the exact null distribution of W+.

    Works on doubled ranks so midranks (multiples of 1/2) stay integral.
    """
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        counts[r:] += counts[: total + 1 - r].copy()
    threshold = int(math.floor(2.0 * w + 1e-9))
    p = 2.0 * counts[: threshold + 1].sum() / 2.0 ** len(ranks)
    return min(1.0, p)


def _normal_p(w: float, ranks: np.ndarray) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    # tie correction: subtract sum(t^3 - t)/48 over tie groups
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(((tie_counts**3) - tie_counts).sum()) / 48.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    if var <= 0:
        return 1.0
    z = (w - mean + 0.5) / math.sqrt(var)  # continuity correction toward the mean
    p = 2.0 * 0.5 * math.erfc(-z / math.sqrt(2.0))
    return min(1.0, p)


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided p-value for paired samples a vs b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigError(f"paired samples must be equal-length vectors, got {a.shape} vs {b.shape}")
    diffs = a - b
    diffs = diffs[diffs != 0.0]
    if len(diffs) == 0:
        return 1.0  # no evidence either way
    ranks = _midranks(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    w_minus = float(ranks[diffs < 0].sum())
    w = min(w_plus, w_minus)
    if len(diffs) <= EXACT_LIMIT:
        return _exact_p(w, ranks)
    return _normal_p(w, ranks)


def significance_matrix(
    scores: dict[str, Sequence[float]],
) -> tuple[list[str], np.ndarray]:
    """Pairwise Wilcoxon p-values; diagonal is NaN (not applicable).

    All score lists must align: same test images in the same order.
    """
    names = list(scores)
    lengths = {name: len(scores[name]) for name in names}
    if len(set(lengths.values())) > 1:
        raise DataError(f"score lists are misaligned: {lengths}")
    n = len(names)
    matrix = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(i + 1, n):
            p = wilcoxon_signed_rank(scores[names[i]], scores[names[j]])
            matrix[i, j] = p
            matrix[j, i] = p
    return names, matrix


def significance_matrix_csv(names: list[str], matrix: np.ndarray) -> str:
    lines = ["model," + ",".join(names)]
    for i, name in enumerate(names):
        cells = ["NA" if math.isnan(matrix[i, j]) else f"{matrix[i, j]:.6f}" for j in range(len(names))]
        lines.append(name + "," + ",".join(cells))
    return "\n".join(lines) + "\n"

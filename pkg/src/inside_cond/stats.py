"""Small statistical helpers: exact paired Wilcoxon signed-rank test and
Spearman rank correlation."""

from __future__ import annotations

import numpy as np


def _average_ranks(values):
    """Ranks 1..n with ties sharing their average rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_exact(x, y):
    """Two-sided paired Wilcoxon signed-rank test with the exact distribution.

    Zero differences are dropped; ties get average ranks.  The exact null
    distribution is built by dynamic programming over all 2^n sign
    assignments of the (doubled, hence integral) ranks; practical for the
    n <= 25 paired runs this artifact produces.

    Returns (W, p) where W = min(W+, W-).  All-zero differences give p = 1.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("wilcoxon_exact: paired samples must have equal length")
    d = x - y
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    # doubled ranks are integers, enabling an exact count per rank sum
    doubled = np.round(2.0 * ranks).astype(int)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    probs = counts / 2.0 ** n
    w2 = int(round(2.0 * w))
    p_low = probs[:w2 + 1].sum()
    p_high = probs[w2:].sum()
    p = min(1.0, 2.0 * min(p_low, p_high))
    return w, float(p)


def spearman(x, y):
    """Spearman rank correlation coefficient."""
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0.0:
        return 0.0
    return float((rx * ry).sum() / denom)

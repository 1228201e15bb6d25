"""Ranking quality metrics and paired significance testing.

NDCG uses the exponential gain form (2^rel - 1) with log2 position
discounts. The Wilcoxon signed-rank test is implemented directly so the
runtime package stays numpy-only: exact tail probabilities for small
samples via a subset-sum count over (doubled, hence integral) midranks,
and a normal approximation with tie correction for larger samples.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "dcg",
    "ndcg",
    "ZeroIdealError",
    "WilcoxonResult",
    "wilcoxon_signed_rank",
    "relative_lift",
    "macro_average",
    "ComparisonResult",
    "paired_comparison",
    "EXACT_TEST_MAX_N",
    "SMALL_SAMPLE_WARN_N",
]

EXACT_TEST_MAX_N = 25
SMALL_SAMPLE_WARN_N = 6


class ZeroIdealError(ValueError):
    """All relevance grades are zero, so NDCG is undefined."""


def dcg(relevances: list[float], p: int | None = None) -> float:
    """Discounted cumulative gain at cutoff p (default: full list)."""
    if p is None:
        p = len(relevances)
    if p < 1:
        raise ValueError(f"cutoff must be >= 1, got {p}")
    total = 0.0
    for i, rel in enumerate(relevances[:p], start=1):
        total += (2.0 ** rel - 1.0) / math.log2(i + 1)
    return total


def ndcg(relevances: list[float], p: int | None = None) -> float:
    """DCG normalized by the DCG of the best possible ordering."""
    ideal = dcg(sorted(relevances, reverse=True), p)
    if ideal == 0.0:
        raise ZeroIdealError("ideal DCG is zero; no relevant items in the list")
    return dcg(relevances, p) / ideal


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n_nonzero: int
    method: str
    w_plus: float
    w_minus: float


def _midranks(values: np.ndarray) -> np.ndarray:
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


def _exact_tail(double_ranks: list[int], double_w: int) -> float:
    """P(W+ <= w) over the 2^n equiprobable sign assignments.

    Works on doubled ranks so midranks from ties stay integral. counts[s]
    is the number of subsets whose doubled-rank sum equals s.
    """
    limit = sum(double_ranks)
    counts = np.zeros(limit + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in double_ranks:
        # The copy matters: source and destination overlap.
        counts[r:] += counts[:limit + 1 - r].copy()
    in_tail = float(np.sum(counts[:min(double_w, limit) + 1]))
    return in_tail / 2.0 ** len(double_ranks)


def wilcoxon_signed_rank(differences: list[float]) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired differences.

    Zero differences are dropped. Ties among |d| get midranks. The
    statistic is min(W+, W-); for n <= 25 the p-value is exact, above
    that a tie-corrected normal approximation without continuity
    correction is used.
    """
    diffs = np.asarray(differences, dtype=np.float64)
    if diffs.ndim != 1:
        raise ValueError("differences must be one-dimensional")
    if not np.all(np.isfinite(diffs)):
        raise ValueError("differences must be finite")
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n == 0:
        raise ValueError("all differences are zero; the test is undefined")
    if n < SMALL_SAMPLE_WARN_N:
        warnings.warn(f"only {n} nonzero differences; the test has little power",
                      stacklevel=2)

    magnitudes = np.abs(diffs)
    ranks = _midranks(magnitudes)
    w_plus = float(np.sum(ranks[diffs > 0]))
    w_minus = float(np.sum(ranks[diffs < 0]))
    statistic = min(w_plus, w_minus)

    if n <= EXACT_TEST_MAX_N:
        double_ranks = [int(round(2.0 * r)) for r in ranks]
        p = min(1.0, 2.0 * _exact_tail(double_ranks, int(round(2.0 * statistic))))
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        variance = n * (n + 1) * (2 * n + 1) / 24.0
        _, tie_sizes = np.unique(magnitudes, return_counts=True)
        variance -= float(np.sum(tie_sizes ** 3 - tie_sizes)) / 48.0
        if variance <= 0.0:
            raise ValueError("zero variance under the null; too many ties")
        z = (statistic - mean) / math.sqrt(variance)
        p = min(1.0, math.erfc(-z / math.sqrt(2.0)))
        method = "normal"
    return WilcoxonResult(statistic=statistic, p_value=p, n_nonzero=n,
                          method=method, w_plus=w_plus, w_minus=w_minus)


def relative_lift(value: float, baseline: float) -> float:
    """(value - baseline) / baseline; positive means `value` is better."""
    if baseline == 0.0:
        raise ValueError("baseline is zero; relative lift is undefined")
    return (value - baseline) / baseline


def macro_average(per_group: dict[str, list[float]]) -> tuple[dict[str, float], float]:
    """Mean within each group, then an unweighted mean of the group means.

    Keeps a group with many observations from dominating the summary.
    """
    if not per_group:
        raise ValueError("no groups to average")
    means: dict[str, float] = {}
    for name, values in sorted(per_group.items()):
        if not values:
            raise ValueError(f"group {name!r} has no observations")
        means[name] = sum(values) / len(values)
    return means, sum(means.values()) / len(means)


@dataclass(frozen=True)
class ComparisonResult:
    n_queries: int
    mean_a: float
    mean_b: float
    lift: float
    statistic: float
    p_value: float
    method: str
    note: str = ""


def paired_comparison(a: dict[str, float], b: dict[str, float]) -> ComparisonResult:
    """Compare two systems' per-query scores: relative lift of mean(a)
    over mean(b), plus a Wilcoxon signed-rank test over the paired
    per-query differences.

    When every paired difference is zero the test itself is undefined;
    that case is reported as p = 1.0 with an explanatory note instead of
    an error, since identical systems are plainly not distinguishable.
    """
    if set(a) != set(b):
        missing = sorted(set(a) ^ set(b))
        raise ValueError(f"query sets differ; unmatched: {missing[:5]}")
    if not a:
        raise ValueError("no queries to compare")
    queries = sorted(a)
    diffs = [a[q] - b[q] for q in queries]
    mean_a = sum(a[q] for q in queries) / len(queries)
    mean_b = sum(b[q] for q in queries) / len(queries)
    lift = relative_lift(mean_a, mean_b)
    if all(d == 0.0 for d in diffs):
        return ComparisonResult(n_queries=len(queries), mean_a=mean_a, mean_b=mean_b,
                                lift=lift, statistic=0.0, p_value=1.0,
                                method="degenerate",
                                note="all per-query differences are zero")
    result = wilcoxon_signed_rank(diffs)
    return ComparisonResult(n_queries=len(queries), mean_a=mean_a, mean_b=mean_b,
                            lift=lift, statistic=result.statistic,
                            p_value=result.p_value, method=result.method)

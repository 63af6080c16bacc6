"""Rank-based significance tests over per-show scores.

The omnibus test aligns each block (show) by subtracting its mean, ranks
all aligned values jointly, and compares rank sums against a chi-square
reference. Post-hoc comparisons against a control use classic within-block
ranks with a Bonferroni correction over the number of comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateDataError


@dataclass
class ScoreTable:
    """Per-block scores for each method; blocks are evaluation shows."""

    methods: list[str]
    blocks: list[str]
    scores: np.ndarray  # [n_blocks, n_methods]

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        n, k = len(self.blocks), len(self.methods)
        if k < 2:
            raise DataError(f"need at least 2 methods, got {k}")
        if n < 2:
            raise DataError(f"need at least 2 blocks, got {n}")
        if self.scores.shape != (n, k):
            raise DataError(f"score matrix {self.scores.shape} does not match {n} blocks x {k} methods")
        if not np.all(np.isfinite(self.scores)):
            raise DataError("score table has missing or non-finite cells")
        if len(set(self.methods)) != k:
            raise DataError("duplicate method names")


@dataclass
class MethodStats:
    method: str
    avg_rank: float
    z: float | None
    p_raw: float | None
    p_adjusted: float | None
    significant_at: list[float] = field(default_factory=list)


@dataclass
class TestReport:
    omnibus_statistic: float
    omnibus_p: float
    baseline: str
    rows: list[MethodStats]


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the average of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for pos in range(i, j + 1):
            ranks[order[pos]] = avg
        i = j + 1
    return ranks


def aligned_rank_matrix(table: ScoreTable) -> np.ndarray:
    """Joint ranks of block-mean-aligned scores, shaped like the score table."""
    aligned = table.scores - table.scores.mean(axis=1, keepdims=True)
    ranks = _average_ranks(aligned.reshape(-1)).reshape(aligned.shape)
    n, k = aligned.shape
    total = k * n * (k * n + 1) / 2.0
    if abs(ranks.sum() - total) > 1e-9:
        raise DataError("rank-sum identity violated")
    return ranks


def friedman_aligned_ranks(table: ScoreTable) -> tuple[float, float]:
    """Omnibus statistic and p-value over block-mean-aligned joint ranks."""
    n, k = table.scores.shape
    if np.all(np.ptp(table.scores, axis=1) == 0.0):
        raise DegenerateDataError("every block has identical scores across methods")
    ranks = aligned_rank_matrix(table)
    r_method = ranks.sum(axis=0)
    r_block = ranks.sum(axis=1)
    kn = k * n
    num = (k - 1) * (float(np.sum(r_method**2)) - (k * n * n / 4.0) * (kn + 1) ** 2)
    den = kn * (kn + 1) * (2 * kn + 1) / 6.0 - float(np.sum(r_block**2)) / k
    if abs(den) < 1e-12:
        raise DegenerateDataError("zero variance after alignment")
    statistic = num / den
    p = 1.0 - chi_square_cdf(max(statistic, 0.0), k - 1)
    return statistic, p


def classic_rank_matrix(table: ScoreTable) -> np.ndarray:
    """Within-block ranks 1..k (ascending score), ties averaged."""
    return np.vstack([_average_ranks(row) for row in table.scores])


def bonferroni_dunn(
    table: ScoreTable,
    baseline: str,
    alpha_levels: tuple[float, ...] = (0.02, 0.01),
) -> TestReport:
    """Compare each method against the baseline on classic Friedman ranks.

    Two-sided normal test on the difference of average ranks; raw p-values
    are multiplied by the number of comparisons (capped at 1).
    """
    if baseline not in table.methods:
        raise DataError(f"baseline {baseline!r} not among methods {table.methods}")
    n, k = table.scores.shape
    ranks = classic_rank_matrix(table)
    avg = ranks.mean(axis=0)
    base_idx = table.methods.index(baseline)
    se = math.sqrt(k * (k + 1) / (6.0 * n))
    statistic, omnibus_p = friedman_aligned_ranks(table)
    rows: list[MethodStats] = []
    for j, method in enumerate(table.methods):
        if j == base_idx:
            rows.append(MethodStats(method=method, avg_rank=float(avg[j]), z=None, p_raw=None, p_adjusted=None))
            continue
        z = (avg[base_idx] - avg[j]) / se
        p_raw = math.erfc(abs(z) / math.sqrt(2.0))  # two-sided normal
        p_adj = min(1.0, (k - 1) * p_raw)
        rows.append(
            MethodStats(
                method=method,
                avg_rank=float(avg[j]),
                z=float(z),
                p_raw=float(p_raw),
                p_adjusted=float(p_adj),
                significant_at=[a for a in alpha_levels if p_adj < a],
            )
        )
    return TestReport(omnibus_statistic=statistic, omnibus_p=omnibus_p, baseline=baseline, rows=rows)


def chi_square_cdf(x: float, df: int) -> float:
    """Lower CDF of the chi-square distribution.

    Computed as the regularized lower incomplete gamma P(df/2, x/2), by
    series expansion for small arguments and a continued fraction otherwise.
    Absolute error is far below 1e-10 over the useful range.
    """
    if x < 0:
        raise DataError(f"chi-square argument must be >= 0, got {x}")
    if df < 1:
        raise DataError(f"degrees of freedom must be >= 1, got {df}")
    if x == 0.0:
        return 0.0
    a = df / 2.0
    y = x / 2.0
    if y < a + 1.0:
        return _gamma_p_series(a, y)
    return 1.0 - _gamma_q_contfrac(a, y)


def _gamma_p_series(a: float, y: float, max_iter: int = 500) -> float:
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(max_iter):
        ap += 1.0
        term *= y / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-y + a * math.log(y) - math.lgamma(a))


def _gamma_q_contfrac(a: float, y: float, max_iter: int = 500) -> float:
    tiny = 1e-300
    b = y + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-y + a * math.log(y) - math.lgamma(a))

"""Windowed precision/recall for boundary sequences.

Every window of k consecutive positions (clipped at the sequence edges,
starts from 1-k through N-1) contributes min/max overlap counts between
reference and hypothesis boundaries; near misses inside a window count as
partial hits. ``winpr_oracle`` recomputes the same quantity by explicit
window materialization and must agree exactly.

Degenerate conventions: no boundaries on either side scores 1/1/1; an empty
hypothesis against a non-empty reference (or vice versa) scores 0/0/0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError


@dataclass
class WinPRResult:
    tp: float
    fp: float
    fn: float
    precision: float
    recall: float
    f1: float
    k: int

    def __post_init__(self):
        p, r = self.precision, self.recall
        f1 = 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0
        if abs(f1 - self.f1) > 1e-9:
            raise DataError(f"inconsistent WinPR result: f1={self.f1}, recomputed {f1}")


def _scores(tp: float, fp: float, fn: float, k: int) -> WinPRResult:
    if tp == 0 and fp == 0 and fn == 0:
        return WinPRResult(tp=0.0, fp=0.0, fn=0.0, precision=1.0, recall=1.0, f1=1.0, k=k)
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return WinPRResult(tp=float(tp), fp=float(fp), fn=float(fn), precision=precision, recall=recall, f1=f1, k=k)


def _validate(reference, hypothesis, k: int) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(reference, dtype=np.int64).reshape(-1)
    hyp = np.asarray(hypothesis, dtype=np.int64).reshape(-1)
    if len(ref) != len(hyp):
        raise DimensionError(f"sequence lengths differ: {len(ref)} vs {len(hyp)}")
    if len(ref) == 0:
        raise DimensionError("empty sequences")
    if k < 1:
        raise DataError(f"window size k must be >= 1, got {k}")
    for v, name in ((ref, "reference"), (hyp, "hypothesis")):
        if not np.all((v == 0) | (v == 1)):
            raise DataError(f"{name} must be binary")
    return ref, hyp


def winpr(reference, hypothesis, k: int) -> WinPRResult:
    """Windowed precision/recall via prefix sums over all clipped windows."""
    ref, hyp = _validate(reference, hypothesis, k)
    n = len(ref)
    cr = np.concatenate([[0], np.cumsum(ref)])
    ch = np.concatenate([[0], np.cumsum(hyp)])
    starts = np.arange(1 - k, n)
    lo = np.clip(starts, 0, n)
    hi = np.clip(starts + k, 0, n)
    r = cr[hi] - cr[lo]
    c = ch[hi] - ch[lo]
    tp = np.minimum(r, c).sum()
    fp = np.maximum(0, c - r).sum()
    fn = np.maximum(0, r - c).sum()
    return _scores(float(tp), float(fp), float(fn), k)


def winpr_oracle(reference, hypothesis, k: int) -> WinPRResult:
    """Brute-force twin: materializes every window as an explicit index set."""
    ref, hyp = _validate(reference, hypothesis, k)
    n = len(ref)
    if n > 200:
        raise DataError(f"oracle is limited to sequences of length <= 200, got {n}")
    tp = fp = fn = 0
    for start in range(1 - k, n):
        members = [p for p in range(start, start + k) if 0 <= p < n]
        r = sum(int(ref[p]) for p in members)
        c = sum(int(hyp[p]) for p in members)
        tp += min(r, c)
        fp += max(0, c - r)
        fn += max(0, r - c)
    return _scores(float(tp), float(fp), float(fn), k)


def evaluate_corpus(
    predictions: dict[str, np.ndarray],
    references: dict[str, np.ndarray],
    k: int = 10,
) -> tuple[list[tuple[str, WinPRResult]], tuple[float, float, float]]:
    """Per-show WinPR plus the unweighted macro average of P, R and F1."""
    if not references:
        raise DataError("no shows to evaluate")
    missing = sorted(set(references) - set(predictions))
    if missing:
        raise DataError(f"missing predictions for shows: {', '.join(missing)}")
    per_show = []
    for show_id in references:
        ref = np.asarray(references[show_id])
        if len(ref) == 0:
            raise DataError(f"show {show_id} has zero tokens")
        per_show.append((show_id, winpr(ref, predictions[show_id], k)))
    macro_p = float(np.mean([r.precision for _, r in per_show]))
    macro_r = float(np.mean([r.recall for _, r in per_show]))
    macro_f1 = float(np.mean([r.f1 for _, r in per_show]))
    return per_show, (macro_p, macro_r, macro_f1)


def improvement(baseline_f1: float, method_f1: float) -> float:
    """Signed percent change of F1 over the baseline."""
    if baseline_f1 <= 0:
        raise DataError(f"baseline F1 must be positive, got {baseline_f1}")
    return 100.0 * (method_f1 - baseline_f1) / baseline_f1

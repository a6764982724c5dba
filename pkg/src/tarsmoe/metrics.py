"""Rank and error metrics over prediction/label arrays.

Spearman uses average ranks with tie averaging; Kendall is the tau-b
variant with tie correction, computed by exhaustive pair enumeration.
Correlation on a constant input is undefined and raises instead of
returning NaN or a silent zero.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import UndefinedCorrelationError, ValidationError
from .gating import ScoredPair

Array = np.ndarray


def _as_1d(x: Sequence[float], name: str) -> Array:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name}: expected a 1-D array, got shape {arr.shape}")
    return arr


def average_ranks(x: Sequence[float]) -> Array:
    """1-based ranks; tied values share the mean of their positions."""
    arr = _as_1d(x, "average_ranks")
    n = arr.size
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        # positions i..j (0-based) share the average rank in 1-based terms
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def lcc(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson linear correlation."""
    xa = _as_1d(x, "lcc")
    ya = _as_1d(y, "lcc")
    if xa.shape != ya.shape:
        raise ValidationError(f"lcc: length mismatch {xa.shape} vs {ya.shape}")
    if xa.size < 2:
        raise ValidationError(f"lcc: need at least 2 samples, got {xa.size}")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sx = float(np.sqrt(np.dot(xc, xc)))
    sy = float(np.sqrt(np.dot(yc, yc)))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError(
            "lcc: correlation undefined on a constant input"
        )
    # rounding in the norms can push |r| past 1 by an ulp
    return max(-1.0, min(1.0, float(np.dot(xc, yc)) / (sx * sy)))


def srcc(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson over average ranks."""
    return lcc(average_ranks(x), average_ranks(y))


def _tie_pair_count(arr: Array) -> int:
    _, counts = np.unique(arr, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def ktau_b(x: Sequence[float], y: Sequence[float]) -> float:
    """Kendall tau-b: (C - D) / sqrt((T0 - Tx) * (T0 - Ty)).

    C and D count concordant and discordant pairs over all i < j; T0 is the
    total pair count and Tx, Ty the within-array tie pair counts.
    """
    xa = _as_1d(x, "ktau_b")
    ya = _as_1d(y, "ktau_b")
    if xa.shape != ya.shape:
        raise ValidationError(f"ktau_b: length mismatch {xa.shape} vs {ya.shape}")
    n = xa.size
    if n < 2:
        raise ValidationError(f"ktau_b: need at least 2 samples, got {n}")
    sx = np.sign(xa[:, None] - xa[None, :])
    sy = np.sign(ya[:, None] - ya[None, :])
    prod = sx * sy
    upper = np.triu_indices(n, k=1)
    c_minus_d = int(np.sum(prod[upper]))
    t0 = n * (n - 1) // 2
    tx = _tie_pair_count(xa)
    ty = _tie_pair_count(ya)
    if t0 == tx or t0 == ty:
        raise UndefinedCorrelationError(
            "ktau_b: correlation undefined when one input is entirely tied"
        )
    return c_minus_d / math.sqrt((t0 - tx) * (t0 - ty))


def mse_metric(x: Sequence[float], y: Sequence[float]) -> float:
    xa = _as_1d(x, "mse_metric")
    ya = _as_1d(y, "mse_metric")
    if xa.shape != ya.shape:
        raise ValidationError(f"mse_metric: length mismatch {xa.shape} vs {ya.shape}")
    if xa.size == 0:
        raise ValidationError("mse_metric: empty input")
    diff = xa - ya
    return float(np.mean(diff * diff))


@dataclass(frozen=True)
class EvalReport:
    srcc: float
    lcc: float
    ktau: float
    mse: float
    n: int

    def to_dict(self) -> dict:
        return {"srcc": self.srcc, "lcc": self.lcc, "ktau": self.ktau,
                "mse": self.mse, "n": self.n}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def evaluate(pairs: Sequence[ScoredPair]) -> EvalReport:
    """All four metrics over a set of labeled predictions."""
    if len(pairs) < 2:
        raise ValidationError(f"evaluate: need at least 2 pairs, got {len(pairs)}")
    for p in pairs:
        if p.label is None:
            raise ValidationError(f"evaluate: pair {p.pair_id!r} has no label")
    preds = np.array([p.moe_score for p in pairs])
    labels = np.array([p.label for p in pairs])
    return EvalReport(
        srcc=srcc(preds, labels),
        lcc=lcc(preds, labels),
        ktau=ktau_b(preds, labels),
        mse=mse_metric(preds, labels),
        n=len(pairs),
    )


def format_report_table(rows: Sequence[tuple[str, EvalReport]]) -> str:
    """Aligned plain-text table, one row per labeled system."""
    header = ("system", "SRCC", "LCC", "KTAU", "MSE", "n")
    body = [
        (label, f"{r.srcc:.4f}", f"{r.lcc:.4f}", f"{r.ktau:.4f}", f"{r.mse:.4f}", str(r.n))
        for label, r in rows
    ]
    widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h)
              for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(header))]
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines) + "\n"

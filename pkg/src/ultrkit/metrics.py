"""Ranking metrics, propensity-estimation error and paired significance tests."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from ultrkit import kernels
from ultrkit.nn import ShapeError

METRIC_COLUMNS = ("ERR@3", "nDCG@3", "ERR@10", "nDCG@10")


def fmt_value(v) -> str:
    """Exact text form for CSV output: integers as is, floats round-trippable."""
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def _check_k(k: int) -> None:
    if k < 1:
        raise ValueError(f"cutoff k must be >= 1, got {k}")


def _check_labels(labels, max_label):
    y = np.asarray(labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() > max_label):
        raise ValueError(f"labels must lie in [0, {max_label}]")
    return y


def ndcg_at_k(ranked_labels: Sequence[int], k: int, max_label: int = 4) -> float:
    """Exponential-gain nDCG; 1.0 when the ideal DCG is zero."""
    _check_k(k)
    y = _check_labels(ranked_labels, max_label)
    ndcg, _ = kernels.graded_metrics(y, np.array([0, len(y)]), k, max_label)
    return float(ndcg[0])


def err_at_k(ranked_labels: Sequence[int], k: int, max_label: int = 4) -> float:
    """Expected reciprocal rank with stop probability (2**y - 1) / 2**max_label."""
    _check_k(k)
    y = _check_labels(ranked_labels, max_label)
    _, err = kernels.graded_metrics(y, np.array([0, len(y)]), k, max_label)
    return float(err[0])


def ranking_metrics(ranked_label_lists: Sequence[np.ndarray], max_label: int = 4,
                    cutoffs: Sequence[int] = (3, 10)) -> dict[str, np.ndarray]:
    """Per-query ``ERR@k`` and ``nDCG@k`` arrays for a batch of displayed label lists."""
    for k in cutoffs:
        _check_k(k)
    lengths = [len(y) for y in ranked_label_lists]
    offsets = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
    flat = _check_labels(np.concatenate(ranked_label_lists) if lengths else [], max_label)
    out = {}
    for k in cutoffs:
        ndcg, err = kernels.graded_metrics(flat, offsets, k, max_label)
        out[f"ERR@{k}"] = err
        out[f"nDCG@{k}"] = ndcg
    return out


def mse_propen(estimated_ratios, true_ratios) -> float:
    """Mean squared difference between estimated and true inverse-propensity ratios."""
    a = np.asarray(estimated_ratios, dtype=np.float64)
    b = np.asarray(true_ratios, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ratio sequences differ in shape: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def significance_test(a, b) -> float:
    """Two-tailed paired t-test p-value.

    Zero-variance differences are resolved by convention: all-equal pairs give
    p = 1, a constant nonzero shift (up to rounding) gives p = 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-d and of equal length")
    if len(a) < 2:
        raise ValueError("paired test needs at least 2 samples")
    d = a - b
    # a difference constant up to rounding has no sampling variance to test
    if np.ptp(d) <= 1e-12 * max(1.0, float(np.max(np.abs(d)))):
        return 1.0 if np.all(d == 0) else 0.0
    return float(stats.ttest_rel(a, b).pvalue)


@dataclass
class MetricReport:
    model: str
    seed: int
    qids: list[str]
    per_query: dict[str, np.ndarray]
    mse_propen: float | None = None
    extra: dict = field(default_factory=dict)

    def mean(self, metric: str) -> float:
        return float(np.mean(self.per_query[metric]))

    def means(self) -> dict[str, float]:
        return {m: self.mean(m) for m in self.per_query}

    def per_query_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        cols = list(self.per_query)
        writer.writerow(["qid", *cols])
        for i, qid in enumerate(self.qids):
            writer.writerow([qid, *(fmt_value(self.per_query[c][i]) for c in cols)])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str, model: str = "", seed: int = 0) -> "MetricReport":
        rows = list(csv.reader(io.StringIO(text)))
        cols = rows[0][1:]
        qids = [r[0] for r in rows[1:]]
        per_query = {c: np.array([float(r[j + 1]) for r in rows[1:]]) for j, c in enumerate(cols)}
        return cls(model, seed, qids, per_query)


def format_table(rows: Sequence[tuple[str, dict[str, float], dict[str, str]]],
                 columns: Sequence[str] = (*METRIC_COLUMNS, "MSE_propen")) -> str:
    """Plain-text table, one row per model: (name, values, markers).

    Missing values print as ``-``; markers (``+``/``-``) are appended to values.
    """
    header = ["Scoring model", *columns]
    body = []
    for name, values, markers in rows:
        cells = [name]
        for c in columns:
            v = values.get(c)
            if v is None:
                cells.append("-")
            else:
                fmt = f"{v:.3g}" if c == "MSE_propen" and v >= 1 else f"{v:.3f}"
                cells.append(fmt + markers.get(c, ""))
        body.append(cells)
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    line = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths))  # noqa: E731
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(header), sep, *(line(r) for r in body)]) + "\n"

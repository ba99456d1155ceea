"""LETOR / SVMlight ranking data: parsing, serialization and synthetic generation."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np


class LetorParseError(ValueError):
    """A malformed line in a LETOR file."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class ConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Query:
    qid: str
    features: np.ndarray  # (n_docs, feature_dim), float64
    labels: np.ndarray  # (n_docs,), int64

    def __post_init__(self):
        if not self.qid:
            raise ValueError("qid must be nonempty")
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError(f"query {self.qid}: features/labels shape mismatch")
        if len(self.labels) == 0:
            raise ValueError(f"query {self.qid} has no documents")
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other):
        if not isinstance(other, Query):
            return NotImplemented
        return (
            self.qid == other.qid
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    queries: tuple[Query, ...]
    feature_dim: int
    max_label: int = 4
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for q in self.queries:
            if q.features.shape[1] != self.feature_dim:
                raise ValueError(
                    f"query {q.qid} has {q.features.shape[1]} features, expected {self.feature_dim}"
                )
            if q.labels.min() < 0 or q.labels.max() > self.max_label:
                raise ValueError(f"query {q.qid} has labels outside [0, {self.max_label}]")

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.feature_dim == other.feature_dim
            and self.max_label == other.max_label
            and self.queries == other.queries
        )

    @property
    def n_docs(self) -> int:
        return sum(len(q) for q in self.queries)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(
            tuple(self.queries[i] for i in indices), self.feature_dim, self.max_label, dict(self.meta)
        )


def parse_letor(stream: TextIO | Iterable[str], max_label: int = 4, clamp: bool = False) -> Dataset:
    """Read ``label qid:<id> <fid>:<val> ... [# comment]`` lines.

    Consecutive lines with the same qid form one query. Feature ids are
    1-based; ids that never appear on a line are filled with 0.0 and the
    feature dimension is the largest id seen anywhere. Out-of-range labels
    raise unless ``clamp`` is set.
    """
    groups: list[tuple[str, list[int], list[dict[int, float]]]] = []
    max_fid = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 2 or not tokens[1].startswith("qid:"):
            raise LetorParseError(lineno, "expected '<label> qid:<id> ...'")
        try:
            label_value = float(tokens[0])
        except ValueError:
            raise LetorParseError(lineno, f"non-numeric label {tokens[0]!r}") from None
        if label_value != int(label_value):
            raise LetorParseError(lineno, f"label {tokens[0]!r} is not an integer grade")
        label = int(label_value)
        if not 0 <= label <= max_label:
            if not clamp:
                raise LetorParseError(lineno, f"label {label} outside [0, {max_label}]")
            label = min(max(label, 0), max_label)
        qid = tokens[1][4:]
        if not qid:
            raise LetorParseError(lineno, "empty qid")
        feats: dict[int, float] = {}
        for tok in tokens[2:]:
            fid_s, sep, val_s = tok.partition(":")
            try:
                fid = int(fid_s)
                val = float(val_s)
            except ValueError:
                raise LetorParseError(lineno, f"bad feature token {tok!r}") from None
            if not sep or fid < 1:
                raise LetorParseError(lineno, f"bad feature token {tok!r}")
            feats[fid] = val
            max_fid = max(max_fid, fid)
        if groups and groups[-1][0] == qid:
            groups[-1][1].append(label)
            groups[-1][2].append(feats)
        else:
            groups.append((qid, [label], [feats]))

    queries = []
    for qid, labels, rows in groups:
        X = np.zeros((len(rows), max_fid))
        for r, feats in enumerate(rows):
            for fid, val in feats.items():
                X[r, fid - 1] = val
        queries.append(Query(qid, X, np.asarray(labels, dtype=np.int64)))
    return Dataset(tuple(queries), max_fid, max_label)


def read_letor(path, max_label: int = 4, clamp: bool = False) -> Dataset:
    with open(path, encoding="utf-8", newline=None) as fh:
        return parse_letor(fh, max_label=max_label, clamp=clamp)


def serialize_letor(dataset: Dataset, stream: TextIO | None = None) -> str | None:
    """Write the canonical dense form: every feature id, no comments.

    Returns the text when ``stream`` is None.
    """
    out = io.StringIO() if stream is None else stream
    for q in dataset.queries:
        for label, row in zip(q.labels, q.features):
            tokens = [str(int(label)), f"qid:{q.qid}"]
            tokens += [f"{j}:{float(v)!r}" for j, v in enumerate(row, start=1)]
            out.write(" ".join(tokens) + "\n")
    if stream is None:
        return out.getvalue()
    return None


def write_letor(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        serialize_letor(dataset, fh)


def minmax_scale(dataset: Dataset, reference: Dataset | None = None) -> Dataset:
    """Scale every feature to [0, 1] using the ranges of ``reference`` (default: itself)."""
    ref = dataset if reference is None else reference
    if len(ref) == 0:
        return dataset
    allx = np.concatenate([q.features for q in ref.queries])
    lo = allx.min(axis=0)
    span = allx.max(axis=0) - lo
    span[span == 0] = 1.0
    queries = tuple(
        Query(q.qid, (q.features - lo) / span, q.labels.copy()) for q in dataset.queries
    )
    return Dataset(queries, dataset.feature_dim, dataset.max_label, dict(dataset.meta))


@dataclass(frozen=True)
class GenConfig:
    n_queries: int = 1000
    docs_per_query: int = 10
    feature_dim: int = 16
    max_label: int = 4
    context_mix: float = 0.0
    label_noise: float = 0.0
    query_shift: float = 0.0

    def validate(self) -> None:
        problems = []
        for name in ("n_queries", "docs_per_query", "feature_dim", "max_label"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.context_mix <= 1.0:
            problems.append(f"context_mix must lie in [0, 1], got {self.context_mix}")
        for name in ("label_noise", "query_shift"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0, got {getattr(self, name)}")
        if problems:
            raise ConfigError("; ".join(problems))


def generate_synthetic(config: GenConfig, seed: int) -> Dataset:
    """Draw a dataset whose graded labels come from a latent relevance score.

    Each document's latent score is ``x . w`` plus ``context_mix`` times an
    interaction ``(x . u) * c`` where ``c`` is ``mean_list(x) . v`` standardised
    over the dataset: the sign and size of
    the ``u`` direction's effect depend on the rest of the list, which a
    row-wise scorer cannot see. ``label_noise`` adds Gaussian noise that no
    feature explains. ``query_shift`` moves all documents of a query by a
    shared Gaussian offset, so absolute feature values say little about a
    document's rank inside its own list. Labels are the latent score cut at the
    dataset-wide quantiles into ``max_label + 1`` equally populated grades.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    n, h = config.docs_per_query, config.feature_dim
    w, u, v = (d / np.linalg.norm(d) for d in rng.standard_normal((3, h)))
    X = rng.standard_normal((config.n_queries, n, h))
    if config.query_shift:
        X += config.query_shift * rng.standard_normal((config.n_queries, 1, h))
    context = X.mean(axis=1) @ v  # (n_queries,)
    context = (context - context.mean()) / (context.std() + 1e-12)
    latent = X @ w + config.context_mix * (X @ u) * context[:, None]
    if config.label_noise:
        latent = latent + config.label_noise * rng.standard_normal(latent.shape)
    edges = np.quantile(latent, np.linspace(0, 1, config.max_label + 2)[1:-1])
    labels = np.searchsorted(edges, latent, side="right").astype(np.int64)
    queries = tuple(
        Query(str(i + 1), X[i].copy(), labels[i].copy()) for i in range(config.n_queries)
    )
    return Dataset(queries, h, config.max_label, {"generator": "synthetic", "seed": seed})


def sample_fraction(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Uniformly sample ``ceil(fraction * n_queries)`` whole queries without replacement."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    count = math.ceil(fraction * len(dataset) - 1e-9)
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(len(dataset), size=count, replace=False))
    return dataset.subset(picked.tolist())


def split_queries(dataset: Dataset, fractions: Sequence[float], seed: int) -> list[Dataset]:
    """Shuffle queries once and cut them into consecutive parts of the given fractions."""
    if any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    bounds = np.round(np.cumsum([0.0, *fractions]) * len(dataset)).astype(int)
    return [dataset.subset(np.sort(perm[a:b]).tolist()) for a, b in zip(bounds[:-1], bounds[1:])]

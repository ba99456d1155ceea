"""Position-biased click simulation: observation curve times noisy perceived relevance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from ultrkit.letor import ConfigError


@dataclass(frozen=True, eq=False)
class PropensityCurve:
    """Observation probability per display position (index 0 is position 1)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or len(p) == 0:
            raise ConfigError("propensity curve must be a nonempty vector")
        if not np.all((p > 0) & (p <= 1)):
            raise ConfigError("propensities must lie in (0, 1]")
        if p[0] != 1.0:
            raise ConfigError(f"propensity at position 1 must be 1.0, got {p[0]}")
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return len(self.probs)

    def inverse_ratios(self, size: int | None = None) -> np.ndarray:
        """rho_1 / rho_i for the first ``size`` positions."""
        p = self.probs[:size]
        return p[0] / p


def make_curve(family: str, param=1.0, max_positions: int = 10) -> PropensityCurve:
    """Build a curve: ``inverse_power`` gives (1/i)**param; ``custom_file`` reads ``param`` as a path."""
    if family == "inverse_power":
        eta = float(param)
        if eta < 0:
            raise ConfigError(f"inverse_power exponent must be >= 0, got {eta}")
        if max_positions < 1:
            raise ConfigError("max_positions must be positive")
        return PropensityCurve((1.0 / np.arange(1, max_positions + 1)) ** eta)
    if family == "custom_file":
        with open(param, encoding="utf-8") as fh:
            values = [float(tok) for tok in fh.read().replace(",", " ").split()]
        return PropensityCurve(np.array(values))
    raise ConfigError(f"unknown propensity family {family!r}")


@dataclass(frozen=True)
class ClickNoiseConfig:
    epsilon: float = 0.1
    max_label: int = 4

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1), got {self.epsilon}")


def perceived_relevance_prob(label, noise: ClickNoiseConfig):
    """epsilon + (1 - epsilon) * (2**y - 1) / (2**y_max - 1); vectorised over ``label``."""
    y = np.asarray(label)
    if np.any((y < 0) | (y > noise.max_label)):
        raise ValueError(f"label outside [0, {noise.max_label}]")
    gain = (np.exp2(y) - 1.0) / (2.0**noise.max_label - 1.0)
    p = noise.epsilon + (1.0 - noise.epsilon) * gain
    return float(p) if np.ndim(p) == 0 else p


@dataclass(frozen=True, eq=False)
class ClickLog:
    qid: str
    display_order: np.ndarray
    clicks: np.ndarray
    impression_id: int

    def to_line(self) -> str:
        order = ",".join(str(int(i)) for i in self.display_order)
        clicks = ",".join(str(int(c)) for c in self.clicks)
        return f"{self.qid}\t{self.impression_id}\t{order}\t{clicks}"

    @classmethod
    def from_line(cls, line: str) -> "ClickLog":
        qid, imp, order, clicks = line.rstrip("\n").split("\t")
        return cls(
            qid,
            np.array([int(v) for v in order.split(",")], dtype=np.int64),
            np.array([int(v) for v in clicks.split(",")], dtype=np.int8),
            int(imp),
        )


def click_probs(labels: np.ndarray, curve: PropensityCurve, noise: ClickNoiseConfig,
                mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Observation and perceived-relevance probabilities for labels laid out by position.

    ``labels`` has positions on its last axis. Masked (padding) slots get
    relevance probability 0 so they are never clicked.
    """
    n = labels.shape[-1]
    if n > len(curve):
        raise ConfigError(f"list of length {n} is longer than the {len(curve)}-position curve")
    if mask is not None:
        labels = np.where(mask, labels, 0)
    p_obs = np.broadcast_to(curve.probs[:n], labels.shape)
    p_rel = perceived_relevance_prob(labels, noise)
    if mask is not None:
        p_rel = np.where(mask, p_rel, 0.0)
    return p_obs, np.asarray(p_rel, dtype=np.float64)


def sample_click_matrix(labels: np.ndarray, curve: PropensityCurve, noise: ClickNoiseConfig,
                        rng: np.random.Generator, mask: np.ndarray | None = None) -> np.ndarray:
    """Draw observation and relevance independently per slot; click = observed and relevant."""
    p_obs, p_rel = click_probs(labels, curve, noise, mask)
    observed = rng.random(labels.shape) < p_obs
    relevant = rng.random(labels.shape) < p_rel
    return (observed & relevant).astype(np.int8)


def sample_clicks(ranked_list, curve: PropensityCurve, noise: ClickNoiseConfig,
                  rng: np.random.Generator, impression_id: int = 0) -> ClickLog:
    clicks = sample_click_matrix(np.asarray(ranked_list.labels), curve, noise, rng)
    return ClickLog(ranked_list.qid, np.asarray(ranked_list.order), clicks, impression_id)


def simulate_log(ranked_lists: Sequence, curve: PropensityCurve, noise: ClickNoiseConfig,
                 n_impressions: int, rng: np.random.Generator) -> Iterable[ClickLog]:
    """Yield ``n_impressions`` click logs for lists drawn uniformly with replacement."""
    picks = rng.integers(len(ranked_lists), size=n_impressions)
    for imp, idx in enumerate(picks):
        yield sample_clicks(ranked_lists[idx], curve, noise, rng, impression_id=imp)


def write_click_log(logs: Iterable[ClickLog], stream: TextIO) -> int:
    n = 0
    for log in logs:
        stream.write(log.to_line() + "\n")
        n += 1
    return n

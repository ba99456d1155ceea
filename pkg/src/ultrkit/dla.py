"""Dual Learning Algorithm: joint training of a ranker and a position-propensity model from clicks.

The ranker's list distribution F = softmax(scores) is trained on clicks
re-weighted by inverse propensity G_1/G_i; the propensity distribution
G = softmax(logits) is trained on clicks re-weighted by inverse relevance
F_1/F_i. Each weight is a constant inside the other model's loss.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ultrkit import metrics, nn
from ultrkit.clicks import ClickNoiseConfig, PropensityCurve, sample_click_matrix
from ultrkit.letor import ConfigError
from ultrkit.nn import ShapeError
from ultrkit.prod import RankedList
from ultrkit.scorers import Arch, Scorer, ScorerKind, init_scorer

log = logging.getLogger(__name__)


def list_distribution(raw_scores, mask=None) -> np.ndarray:
    """Softmax over the unmasked positions of each list (last axis)."""
    return nn.masked_softmax(np.asarray(raw_scores, dtype=np.float64), mask)


def _inverse_weights(clicks, dist, cap):
    ratio = dist[..., :1] / dist
    if cap is not None:
        ratio = np.minimum(ratio, cap)
    return np.where(clicks > 0, ratio, 0.0)


def _count_clipped(clicks, dist, cap) -> int:
    if cap is None:
        return 0
    return int(np.sum((clicks > 0) & (dist[..., :1] / dist > cap)))


def ipw_loss(clicks, f_dist, g_dist, cap: float | None = None):
    """Ranker loss ``-sum_{clicked i} (G_1/G_i) log F_i`` per list.

    Returns ``(loss, grad)`` where ``grad`` is the gradient with respect to
    the ranker's raw scores (the logits of ``f_dist``).
    """
    clicks, f_dist, g_dist = (np.asarray(a, dtype=np.float64) for a in (clicks, f_dist, g_dist))
    if not clicks.shape == f_dist.shape == np.broadcast_shapes(g_dist.shape, f_dist.shape):
        raise ShapeError(f"clicks {clicks.shape}, F {f_dist.shape} and G {g_dist.shape} do not align")
    w = _inverse_weights(clicks, np.broadcast_to(g_dist, f_dist.shape), cap)
    return _weighted_xent(w, f_dist)


def irw_loss(clicks, f_dist, g_dist, cap: float | None = None):
    """Propensity loss ``-sum_{clicked i} (F_1/F_i) log G_i`` per list.

    Returns ``(loss, grad)`` with ``grad`` taken with respect to the
    propensity logits of each list.
    """
    clicks, f_dist, g_dist = (np.asarray(a, dtype=np.float64) for a in (clicks, f_dist, g_dist))
    g_full = np.broadcast_to(g_dist, f_dist.shape)
    if not clicks.shape == f_dist.shape == g_full.shape:
        raise ShapeError(f"clicks {clicks.shape}, F {f_dist.shape} and G {g_dist.shape} do not align")
    w = _inverse_weights(clicks, f_dist, cap)
    return _weighted_xent(w, g_full)


def _weighted_xent(w, dist):
    with np.errstate(divide="ignore"):
        logp = np.where(w > 0, np.log(dist), 0.0)
    loss = -np.sum(w * logp, axis=-1)
    grad = dist * w.sum(axis=-1, keepdims=True) - w
    return loss, grad


def full_information_loss(relevance_probs, dist) -> float:
    """``-sum_i P(r_i = 1) log F_i``: the listwise loss if relevance were observed."""
    p = np.asarray(relevance_probs, dtype=np.float64)
    return float(-np.sum(p * np.log(dist), axis=-1).sum())


class PropensityModel:
    """One free logit per display position; G = softmax(logits)."""

    def __init__(self, list_size: int):
        if list_size < 1:
            raise ConfigError("list_size must be >= 1")
        self.params = nn.ParamStore()
        self.params.add("propensity.logits", np.zeros(list_size))

    @property
    def logits(self) -> np.ndarray:
        return self.params["propensity.logits"]

    def distribution(self) -> np.ndarray:
        return list_distribution(self.logits)

    def inverse_ratios(self) -> np.ndarray:
        """Estimated G_1 / G_i per position."""
        g = self.distribution()
        return g[0] / g

    def save(self, path) -> None:
        self.params.save(path, {"kind": "propensity", "list_size": len(self.logits)})

    @classmethod
    def load(cls, path) -> "PropensityModel":
        store, _ = nn.read_checkpoint(path)
        model = cls(len(store["propensity.logits"]))
        model.params.load_state(store)
        return model


LR_SCHEDULES = ("constant", "linear")


def lr_factor(schedule: str, step: int, steps: int) -> float:
    """Step-size multiplier; ``linear`` anneals from 1 towards 0 at the last step."""
    if schedule == "linear":
        return 1.0 - (step - 1) / steps
    return 1.0


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "univariate_mlp"
    arch: Arch = Arch()
    batch_size: int = 64
    learning_rate_S: float = 0.05
    learning_rate_E: float = 0.05
    steps: int = 4000
    list_size: int = 10
    seed: int = 0
    eval_interval: int = 500
    weight_cap: float = 100.0
    update_mode: str = "simultaneous"
    click_log_size: int = 0
    lr_schedule: str = "constant"
    weight_decay: float = 0.0  # L2 on the scorer only

    def validate(self, curve: PropensityCurve | None = None) -> None:
        problems = []
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.list_size < 1:
            problems.append("list_size must be >= 1")
        if self.steps < 0:
            problems.append("steps must be >= 0")
        if self.eval_interval < 1:
            problems.append("eval_interval must be >= 1")
        if self.update_mode not in ("simultaneous", "alternating"):
            problems.append(f"unknown update_mode {self.update_mode!r}")
        if self.weight_decay < 0:
            problems.append("weight_decay must be >= 0")
        if self.lr_schedule not in LR_SCHEDULES:
            problems.append(f"unknown lr_schedule {self.lr_schedule!r}")
        if curve is not None and self.list_size > len(curve):
            problems.append(
                f"list_size {self.list_size} exceeds the {len(curve)}-position propensity curve"
            )
        ScorerKind.parse(self.kind)
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class PackedLists:
    qids: list[str]
    features: np.ndarray  # (Q, L, H)
    labels: np.ndarray  # (Q, L)
    mask: np.ndarray  # (Q, L)

    def __len__(self) -> int:
        return len(self.qids)


def pack_lists(lists: Sequence[RankedList], size: int | None = None) -> PackedLists:
    """Stack ranked lists (truncated to ``size``) into zero-padded arrays."""
    if not lists:
        raise ValueError("no ranked lists to pack")
    cut = [rl if size is None else rl.truncate(size) for rl in lists]
    width = max(len(rl) for rl in cut)
    h = cut[0].features.shape[1]
    X = np.zeros((len(cut), width, h))
    y = np.zeros((len(cut), width), dtype=np.int64)
    mask = np.zeros((len(cut), width), dtype=bool)
    for i, rl in enumerate(cut):
        n = len(rl)
        X[i, :n] = rl.features
        y[i, :n] = rl.labels
        mask[i, :n] = True
    return PackedLists([rl.qid for rl in cut], X, y, mask)


def step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1)[0])


def eval_order_seed(seed: int) -> int:
    """Order seed used whenever a run's scorer is evaluated (matters only for random-order scorers)."""
    return step_seed(seed, 2**32 - 1)


def score_lists(scorer: Scorer, packed: PackedLists, order_seed: int = 0, chunk: int = 256) -> np.ndarray:
    out = np.empty(packed.labels.shape)
    for a in range(0, len(packed), chunk):
        sl = slice(a, a + chunk)
        mask = None if packed.mask[sl].all() else packed.mask[sl]
        out[sl] = scorer.forward(packed.features[sl], mask, order_seed=order_seed)
    return out


def rerank_labels(scores: np.ndarray, packed: PackedLists) -> list[np.ndarray]:
    """Labels re-sorted by descending score; ties keep the input (display) order."""
    ranked = []
    for s, y, m in zip(scores, packed.labels, packed.mask):
        n = int(m.sum())
        order = np.argsort(-s[:n], kind="stable")
        ranked.append(y[:n][order])
    return ranked


def evaluate_scorer(scorer: Scorer, packed: PackedLists, max_label: int = 4, order_seed: int = 0,
                    cutoffs: Sequence[int] = (3, 10)) -> dict[str, np.ndarray]:
    return metrics.ranking_metrics(
        rerank_labels(score_lists(scorer, packed, order_seed), packed), max_label, cutoffs
    )


@dataclass
class TrainResult:
    scorer: Scorer
    propensity: PropensityModel | None
    history: list[dict] = field(default_factory=list)
    clipped: int = 0
    config: TrainConfig | None = None

    def history_csv(self) -> str:
        out = io.StringIO()
        cols = ["step", "loss_S", "loss_E", "mse_propen", "valid_ndcg10"]
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(cols)
        for row in self.history:
            writer.writerow(["" if row.get(c) is None else metrics.fmt_value(row[c]) for c in cols])
        return out.getvalue()


class _ClickSource:
    """Fresh clicks per batch, or batches replayed from one pre-generated log."""

    def __init__(self, packed: PackedLists, curve, noise, cfg: TrainConfig, rng):
        self.packed, self.curve, self.noise, self.rng = packed, curve, noise, rng
        self.batch = cfg.batch_size
        self.log_idx = self.log_clicks = None
        if cfg.click_log_size:
            self.log_idx = rng.integers(len(packed), size=cfg.click_log_size)
            self.log_clicks = sample_click_matrix(
                packed.labels[self.log_idx], curve, noise, rng, packed.mask[self.log_idx]
            )

    def next(self):
        p = self.packed
        if self.log_idx is None:
            idx = self.rng.choice(len(p), size=min(self.batch, len(p)), replace=False)
            clicks = sample_click_matrix(p.labels[idx], self.curve, self.noise, self.rng, p.mask[idx])
            return idx, clicks
        rows = self.rng.integers(len(self.log_idx), size=self.batch)
        return self.log_idx[rows], self.log_clicks[rows]


def _train(train_lists, curve, noise, cfg: TrainConfig, valid_lists, dual: bool) -> TrainResult:
    cfg.validate(curve)
    packed = pack_lists(train_lists, cfg.list_size)
    if packed.labels.shape[1] > len(curve):
        raise ConfigError("training lists are longer than the propensity curve")
    kind = ScorerKind.parse(cfg.kind)
    scorer = init_scorer(kind, cfg.arch, packed.features.shape[2], cfg.seed)
    width = packed.labels.shape[1]
    prop = PropensityModel(width) if dual else None
    true_ratios = curve.inverse_ratios(width)
    valid = pack_lists(valid_lists) if valid_lists else None
    eval_seed = eval_order_seed(cfg.seed)
    source = _ClickSource(packed, curve, noise, cfg, np.random.default_rng([cfg.seed, 1]))

    result = TrainResult(scorer, prop, config=cfg)
    acc_s = acc_e = 0.0
    n_acc = 0

    def record(step):
        row = {"step": step, "loss_S": acc_s / n_acc if n_acc else None,
               "loss_E": (acc_e / n_acc if n_acc else None) if dual else None,
               "mse_propen": metrics.mse_propen(prop.inverse_ratios(), true_ratios) if dual else None,
               "valid_ndcg10": None}
        if valid is not None:
            row["valid_ndcg10"] = float(np.mean(
                evaluate_scorer(scorer, valid, noise.max_label, eval_seed, (10,))["nDCG@10"]))
        result.history.append(row)

    record(0)
    for step in range(1, cfg.steps + 1):
        idx, clicks = source.next()
        mask = packed.mask[idx]
        mask_arg = None if mask.all() else mask
        scores = scorer.forward(packed.features[idx], mask_arg, order_seed=step_seed(cfg.seed, step))
        f_dist = list_distribution(scores, mask_arg)
        n = len(idx)
        update_s = not dual or cfg.update_mode == "simultaneous" or step % 2 == 1
        update_e = dual and (cfg.update_mode == "simultaneous" or step % 2 == 0)
        if dual:
            g_dist = prop.distribution()
            loss_s, grad_s = ipw_loss(clicks, f_dist, g_dist, cfg.weight_cap)
            loss_e, grad_e = irw_loss(clicks, f_dist, g_dist, cfg.weight_cap)
            result.clipped += _count_clipped(clicks, np.broadcast_to(g_dist, f_dist.shape), cfg.weight_cap)
            result.clipped += _count_clipped(clicks, f_dist, cfg.weight_cap)
            acc_e += float(loss_e.mean())
        else:
            loss_s, grad_s = _weighted_xent(clicks.astype(np.float64), f_dist)
        acc_s += float(loss_s.mean())
        n_acc += 1

        scale = lr_factor(cfg.lr_schedule, step, cfg.steps)
        scorer.params.zero_grad()
        if update_s:
            scorer.backward(grad_s / n)
            scorer.params.sgd_step(cfg.learning_rate_S * scale, cfg.weight_decay)
        if update_e:
            prop.params.zero_grad()
            prop.params.accumulate("propensity.logits", grad_e.sum(axis=0) / n)
            prop.params.sgd_step(cfg.learning_rate_E * scale)

        if step % cfg.eval_interval == 0 or step == cfg.steps:
            record(step)
            acc_s = acc_e = 0.0
            n_acc = 0
    if result.clipped:
        log.info("inverse weights clipped %d times at cap %g", result.clipped, cfg.weight_cap)
    return result


def train_dla(train_lists: Sequence[RankedList], curve: PropensityCurve, noise: ClickNoiseConfig,
              cfg: TrainConfig, valid_lists: Sequence[RankedList] | None = None) -> TrainResult:
    """Jointly learn a ranker and a propensity model from simulated clicks on ``train_lists``.

    Each step draws a batch of lists, samples fresh clicks (or replays a
    fixed log when ``click_log_size`` > 0), and takes an SGD step on the
    ranker with the IPW loss and on the propensity logits with the IRW loss.
    """
    return _train(train_lists, curve, noise, cfg, valid_lists, dual=True)


def train_naive(train_lists: Sequence[RankedList], curve: PropensityCurve, noise: ClickNoiseConfig,
                cfg: TrainConfig, valid_lists: Sequence[RankedList] | None = None) -> TrainResult:
    """Same loop, but clicks are used directly as relevance labels with no re-weighting."""
    return _train(train_lists, curve, noise, replace(cfg), valid_lists, dual=False)

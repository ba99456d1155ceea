"""List scoring functions: row-wise MLP, self-attention set scorer, recurrent sequence scorer.

All scorers map a feature tensor ``(batch, list, H)`` to raw scores
``(batch, list)``. Padded rows (``mask`` False) get ``-inf`` scores so any
softmax over the list ignores them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ultrkit import nn
from ultrkit.letor import ConfigError

FAMILIES = ("univariate_mlp", "set_attention", "sequence_gru")
ORDER_MODES = ("init", "rever", "rand")


@dataclass(frozen=True)
class ScorerKind:
    family: str
    order_mode: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown scorer family {self.family!r}")
        if (self.family == "sequence_gru") != (self.order_mode is not None):
            raise ConfigError("order_mode is required for sequence_gru and only for it")
        if self.order_mode is not None and self.order_mode not in ORDER_MODES:
            raise ConfigError(f"unknown order mode {self.order_mode!r}")

    @property
    def tag(self) -> str:
        return self.family if self.order_mode is None else f"{self.family}({self.order_mode})"

    def __str__(self) -> str:
        return self.tag

    @classmethod
    def parse(cls, text: str) -> "ScorerKind":
        """Accepts ``set_attention``, ``sequence_gru(rand)``, ``sequence_gru:rand``."""
        text = text.strip()
        for sep in ("(", ":"):
            if sep in text:
                family, mode = text.split(sep, 1)
                return cls(family.strip(), mode.rstrip(")").strip())
        return cls(text)


@dataclass(frozen=True)
class Arch:
    mlp_hidden: tuple[int, ...] = (64, 32)
    d_model: int = 64
    n_heads: int = 4
    n_blocks: int = 2
    ffn_width: int = 128
    gru_hidden: int = 64

    def validate(self) -> None:
        dims = [*self.mlp_hidden, self.d_model, self.n_heads, self.n_blocks, self.ffn_width, self.gru_hidden]
        if any(d <= 0 for d in dims):
            raise ConfigError(f"architecture sizes must be positive: {self}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Arch":
        data = json.loads(text)
        data["mlp_hidden"] = tuple(data["mlp_hidden"])
        return cls(**data)


def _as_batch(X, mask):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
        mask = None if mask is None else np.asarray(mask)[None]
    if X.ndim != 3:
        raise nn.ShapeError(f"expected (list, H) or (batch, list, H) features, got {X.shape}")
    if X.shape[1] == 0:
        raise ValueError("cannot score an empty list")
    return X, mask, single


class Scorer:
    """Base class for the scoring families; subclasses implement ``_forward``/``_backward``."""

    def __init__(self, kind: ScorerKind, arch: Arch, feature_dim: int, seed: int):
        arch.validate()
        if feature_dim <= 0:
            raise ConfigError("feature_dim must be positive")
        self.kind, self.arch, self.feature_dim, self.seed = kind, arch, feature_dim, seed
        self.params = nn.ParamStore()
        self._mask = None
        self._forwarded = False

    def forward(self, X, mask=None, order_seed: int = 0):
        X, mask, single = _as_batch(X, mask)
        if X.shape[-1] != self.feature_dim:
            raise nn.ShapeError(
                f"{self.kind.tag}: expected {self.feature_dim} features, got {X.shape[-1]}"
            )
        if mask is not None and not mask.any(axis=1).all():
            raise ValueError("cannot score a list with no real documents")
        self._mask = mask
        s = self._forward(X, mask, order_seed)
        self._forwarded = True
        if mask is not None:
            s = np.where(mask, s, -np.inf)
        return s[0] if single else s

    def backward(self, dscores):
        if not self._forwarded:
            raise nn.UsageError(f"{self.kind.tag}: backward called before forward")
        dscores = np.asarray(dscores, dtype=np.float64)
        if dscores.ndim == 1:
            dscores = dscores[None]
        if self._mask is not None:
            dscores = np.where(self._mask, dscores, 0.0)
        self._backward(dscores)

    def score(self, X, mask=None, order_seed: int = 0):
        return self.forward(X, mask, order_seed)

    def save(self, path) -> None:
        self.params.save(
            path,
            {"kind": self.kind.tag, "arch": self.arch.to_json(),
             "feature_dim": self.feature_dim, "seed": self.seed},
        )


class UnivariateMLP(Scorer):
    def __init__(self, kind, arch, feature_dim, seed):
        super().__init__(kind, arch, feature_dim, seed)
        rng = np.random.default_rng(seed)
        widths = [feature_dim, *arch.mlp_hidden]
        layers: list[nn.Layer] = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            layers += [nn.Linear(self.params, f"mlp.{i}", a, b, rng), nn.ReLU()]
        layers.append(nn.Linear(self.params, "mlp.out", widths[-1], 1, rng))
        self.net = nn.Sequential(layers)

    def _forward(self, X, mask, order_seed):
        return self.net.forward(X)[..., 0]

    def _backward(self, ds):
        self.net.backward(ds[..., None])


class SetAttention(Scorer):
    """Input projection, residual self-attention + feed-forward blocks with layer norm, scalar head."""

    def __init__(self, kind, arch, feature_dim, seed):
        super().__init__(kind, arch, feature_dim, seed)
        rng = np.random.default_rng(seed)
        p, d = self.params, arch.d_model
        self.proj = nn.Linear(p, "in", feature_dim, d, rng)
        self.blocks = []
        for i in range(arch.n_blocks):
            self.blocks.append({
                "attn": nn.MultiHeadAttention(p, f"block{i}.attn", d, arch.n_heads, rng),
                "norm1": nn.LayerNorm(p, f"block{i}.norm1", d),
                "ffn": nn.Sequential([
                    nn.Linear(p, f"block{i}.ffn1", d, arch.ffn_width, rng),
                    nn.ReLU(),
                    nn.Linear(p, f"block{i}.ffn2", arch.ffn_width, d, rng),
                ]),
                "norm2": nn.LayerNorm(p, f"block{i}.norm2", d),
            })
        self.head = nn.Linear(p, "head", d, 1, rng)

    def _forward(self, X, mask, order_seed):
        h = self.proj.forward(X)
        for blk in self.blocks:
            h = blk["norm1"].forward(h + blk["attn"].forward(h, mask))
            h = blk["norm2"].forward(h + blk["ffn"].forward(h))
        return self.head.forward(h)[..., 0]

    def _backward(self, ds):
        dh = self.head.backward(ds[..., None])
        for blk in reversed(self.blocks):
            dh = blk["norm2"].backward(dh)
            dh = dh + blk["ffn"].backward(dh)
            dh = blk["norm1"].backward(dh)
            dh = dh + blk["attn"].backward(dh)
        self.proj.backward(dh)


def input_orders(mask, mode: str, order_seed: int, n: int, batch: int) -> np.ndarray:
    """Per-list reading order: real rows arranged by ``mode``, padding rows after them."""
    if mask is None:
        base = np.arange(n)
        if mode == "init":
            return np.tile(base, (batch, 1))
        if mode == "rever":
            return np.tile(base[::-1], (batch, 1))
        rng = np.random.default_rng(order_seed)
        return np.stack([rng.permutation(n) for _ in range(batch)])
    rng = np.random.default_rng(order_seed) if mode == "rand" else None
    orders = np.empty((batch, n), dtype=np.int64)
    for b in range(batch):
        real = np.flatnonzero(mask[b])
        pad = np.flatnonzero(~mask[b])
        if mode == "rever":
            real = real[::-1]
        elif mode == "rand":
            real = rng.permutation(real)
        orders[b] = np.concatenate([real, pad])
    return orders


class SequenceGRU(Scorer):
    """Recurrent list scorer whose output depends on the order documents are read.

    Rows are encoded, read by a GRU in the mode's order, and each document is
    scored from its own recurrent state ``s_i`` against the final state ``c``:
    ``s_i^T W c + v . s_i + b``.
    """

    def __init__(self, kind, arch, feature_dim, seed):
        super().__init__(kind, arch, feature_dim, seed)
        rng = np.random.default_rng(seed)
        p, hd = self.params, arch.gru_hidden
        self.encoder = nn.Sequential([nn.Linear(p, "enc", feature_dim, hd, rng), nn.Tanh()])
        self.gru = nn.GRU(p, "gru", hd, hd, rng)
        p.add("bilinear.W", nn.glorot_uniform(rng, hd, hd, (hd, hd)))
        self.head = nn.Linear(p, "head", hd, 1, rng)
        self._cache = None

    def _forward(self, X, mask, order_seed):
        batch, n, _ = X.shape
        order = input_orders(mask, self.kind.order_mode, order_seed, n, batch)
        rows = np.arange(batch)[:, None]
        e = self.encoder.forward(X)
        seq_mask = None if mask is None else mask[rows, order]
        states, context = self.gru.forward(e[rows, order], seq_mask)
        rep = np.empty_like(states)
        rep[rows, order] = states
        Wc = context @ self.params["bilinear.W"].T  # (B, hd)
        self._cache = (order, rep, context, Wc)
        return np.einsum("bnh,bh->bn", rep, Wc) + self.head.forward(rep)[..., 0]

    def _backward(self, ds):
        order, rep, context, Wc = self._cache
        rows = np.arange(ds.shape[0])[:, None]
        W = self.params["bilinear.W"]
        drep = ds[..., None] * Wc[:, None, :] + self.head.backward(ds[..., None])
        srep = np.einsum("bn,bnh->bh", ds, rep)  # sum_i ds_i s_i
        self.params.accumulate("bilinear.W", srep.T @ context)
        dcontext = srep @ W
        de_seq = self.gru.backward(drep[rows, order], dcontext)
        de = np.empty_like(de_seq)
        de[rows, order] = de_seq
        self.encoder.backward(de)


_CLASSES = {"univariate_mlp": UnivariateMLP, "set_attention": SetAttention, "sequence_gru": SequenceGRU}


def init_scorer(kind: ScorerKind | str, arch: Arch | None = None, feature_dim: int = 16, seed: int = 0) -> Scorer:
    if isinstance(kind, str):
        kind = ScorerKind.parse(kind)
    return _CLASSES[kind.family](kind, arch or Arch(), feature_dim, seed)


def load_scorer(path) -> Scorer:
    store, header = nn.read_checkpoint(path)
    scorer = init_scorer(
        ScorerKind.parse(header["kind"]), Arch.from_json(header["arch"]),
        int(header["feature_dim"]), int(header.get("seed", 0)),
    )
    scorer.params.load_state(store)
    return scorer

"""Finite-difference gradient checks for every layer, the list loss and every scorer.

Each case builds a small random instance from a seed and returns a loss
closure plus the parameter store to probe. Layer inputs are registered as
parameters too, so input gradients are checked alongside weight gradients.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ultrkit import nn
from ultrkit.scorers import Arch, init_scorer

KERNELS = ("linear", "relu", "tanh", "sigmoid", "softmax", "layer_norm", "attention", "gru", "softmax_xent")
SCORERS = ("univariate_mlp", "set_attention", "sequence_gru:init", "sequence_gru:rever", "sequence_gru:rand")
TINY = Arch(mlp_hidden=(6, 5), d_model=8, n_heads=2, n_blocks=2, ffn_width=10, gru_hidden=6)


def _mask(rng, b, n):
    mask = np.ones((b, n), dtype=bool)
    for i in range(b):
        keep = int(rng.integers(1, n + 1))
        mask[i, keep:] = False
    return mask


def _jitter(store: nn.ParamStore, rng, scale=0.1):
    # zero biases put ReLU inputs exactly on the kink for padded rows
    for name, value in store.values.items():
        value += scale * rng.standard_normal(value.shape)


def _layer_case(kind: str, seed: int):
    rng = np.random.default_rng(seed)
    store = nn.ParamStore()
    b, n, d = 2, 4, 6
    mask = None
    if kind == "linear":
        layer = nn.Linear(store, "lin", d, 3, rng)
        out_shape = (b, n, 3)
    elif kind == "relu":
        layer = nn.ReLU()
        out_shape = (b, n, d)
    elif kind == "tanh":
        layer = nn.Tanh()
        out_shape = (b, n, d)
    elif kind == "sigmoid":
        layer = nn.Sigmoid()
        out_shape = (b, n, d)
    elif kind == "softmax":
        layer = nn.Softmax()
        mask = _mask(rng, b * n, d).reshape(b, n, d)
        out_shape = (b, n, d)
    elif kind == "layer_norm":
        layer = nn.LayerNorm(store, "ln", d)
        out_shape = (b, n, d)
    elif kind == "attention":
        layer = nn.MultiHeadAttention(store, "mha", d, 2, rng)
        mask = _mask(rng, b, n)
        out_shape = (b, n, d)
    elif kind == "gru":
        layer = nn.GRU(store, "gru", d, 5, rng)
        mask = _mask(rng, b, n)
        out_shape = (b, n, 5)
    else:
        raise KeyError(kind)
    _jitter(store, rng)
    x = rng.standard_normal((b, n, d))
    if kind == "relu":
        # keep probes away from the kink
        x = np.where(np.abs(x) < 0.05, 0.05 * np.sign(x) + 0.05 * (x == 0), x)
    store.add("input", x)
    R = rng.standard_normal(out_shape)
    R_final = rng.standard_normal((b, 5))

    def loss(p):
        inp = p["input"]
        if kind == "gru":
            states, final = layer.forward(inp, mask)
            value = float(np.sum(R * states) + np.sum(R_final * final))
            dx = layer.backward(R, R_final)
        else:
            y = layer.forward(inp, mask) if mask is not None else layer.forward(inp)
            value = float(np.sum(R * np.where(np.isfinite(y), y, 0.0)))
            dx = layer.backward(R)
        p.accumulate("input", dx)
        return value

    return loss, store


def _xent_case(seed: int):
    rng = np.random.default_rng(seed)
    store = nn.ParamStore()
    store.add("logits", rng.standard_normal((3, 5)))
    mask = _mask(rng, 3, 5)
    w = rng.random((3, 5)) * mask

    def loss(p):
        value, grad = nn.weighted_softmax_xent(p["logits"], w, mask)
        p.accumulate("logits", np.where(mask, grad, 0.0))
        return float(value.sum())

    return loss, store


def _scorer_case(kind: str, seed: int):
    rng = np.random.default_rng(seed)
    scorer = init_scorer(kind, TINY, 4, seed)
    _jitter(scorer.params, rng)
    X = rng.standard_normal((3, 5, 4))
    mask = _mask(rng, 3, 5)
    mask[0] = True
    w = rng.random((3, 5)) * mask

    def loss(p):
        s = scorer.forward(X, mask, order_seed=seed)
        value, grad = nn.weighted_softmax_xent(s, w, mask)
        scorer.backward(grad)
        return float(value.sum())

    return loss, scorer.params


def build_case(name: str, seed: int):
    if name == "softmax_xent":
        return _xent_case(seed)
    if name in KERNELS:
        return _layer_case(name, seed)
    return _scorer_case(name, seed)


@dataclass
class SuiteResult:
    name: str
    seeds: int
    worst_rel_error: float
    worst_seed: int
    passed: bool


def run_suite(names=KERNELS + SCORERS, seeds=range(20), tolerance: float = 1e-4,
              max_entries: int | None = 8, log=None) -> list[SuiteResult]:
    """Grad-check each named case at every seed; ``max_entries`` caps probes per tensor."""
    results = []
    for name in names:
        t0 = time.perf_counter()
        worst, worst_seed, n = 0.0, -1, 0
        for seed in seeds:
            loss, params = build_case(name, seed)
            rep = nn.grad_check(loss, params, tolerance=tolerance, max_entries=max_entries,
                                rng=np.random.default_rng(seed))
            err = rep.worst[1]
            if err >= worst:
                worst, worst_seed = err, seed
            n += 1
        res = SuiteResult(name, n, worst, worst_seed, worst < tolerance)
        results.append(res)
        if log is not None:
            log(f"{'PASS' if res.passed else 'FAIL'} {name:20s} seeds={n} "
                f"worst_rel_err={worst:.2e} (seed {worst_seed}) {time.perf_counter() - t0:.1f}s")
    return results

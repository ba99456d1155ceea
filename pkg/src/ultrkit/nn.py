"""Small differentiable kernels with hand-written reverse passes.

Every layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into a shared :class:`ParamStore`. Shapes
follow the ranking convention ``(batch, list, features)`` with an optional
boolean ``mask`` of shape ``(batch, list)`` marking real (non-padding) rows.
Everything runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np


class ShapeError(ValueError):
    pass


class UsageError(RuntimeError):
    pass


class GradCheckError(RuntimeError):
    pass


class ParamStore:
    """Named parameter tensors with a gradient buffer of the same shape for each."""

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.values:
            raise KeyError(f"parameter {name!r} already exists")
        value = np.array(value, dtype=np.float64)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.values.values())

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        self.grads[name] += grad

    def sgd_step(self, lr: float, weight_decay: float = 0.0) -> None:
        """Plain SGD; ``weight_decay`` adds an L2 penalty ``wd/2 * |w|^2`` to every tensor."""
        for name, value in self.values.items():
            if weight_decay:
                value -= lr * (self.grads[name] + weight_decay * value)
            else:
                value -= lr * self.grads[name]

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, value in self.values.items():
            out.add(name, value.copy())
        return out

    def state_equal(self, other: "ParamStore") -> bool:
        return list(self.values) == list(other.values) and all(
            np.array_equal(v, other.values[k]) for k, v in self.values.items()
        )

    def load_state(self, other: "ParamStore") -> None:
        """Copy values from ``other`` in place; names and shapes must match."""
        if list(self.values) != list(other.values):
            raise ShapeError("parameter names differ")
        for name, value in self.values.items():
            if value.shape != other.values[name].shape:
                raise ShapeError(f"{name}: shape {other.values[name].shape} != {value.shape}")
            value[...] = other.values[name]

    def save(self, path, header: dict | None = None) -> None:
        write_checkpoint(path, self, header or {})


# Checkpoint container: plain text, stable across runs.
#   ultrkit-params 1
#   @ key=value            (zero or more header lines)
#   tensor <name> <ndim> <dim_1> ... <dim_ndim>
#   <row values separated by spaces, one line per leading-axis row>
CHECKPOINT_MAGIC = "ultrkit-params 1"


def write_checkpoint(path, store: ParamStore, header: dict) -> None:
    lines = [CHECKPOINT_MAGIC]
    lines += [f"@ {k}={v}" for k, v in header.items()]
    for name, value in store.values.items():
        lines.append(" ".join(["tensor", name, str(value.ndim), *map(str, value.shape)]))
        rows = value.reshape(value.shape[0], -1) if value.ndim > 1 else value.reshape(1, -1)
        if value.ndim == 0:
            rows = value.reshape(1, 1)
        lines += [" ".join(repr(float(v)) for v in row) for row in rows]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_checkpoint(path) -> tuple[ParamStore, dict]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an ultrkit checkpoint")
    header: dict[str, str] = {}
    store = ParamStore()
    i = 1
    while i < len(lines):
        line = lines[i]
        if line.startswith("@ "):
            key, _, val = line[2:].partition("=")
            header[key] = val
            i += 1
            continue
        tag, name, ndim, *dims = line.split()
        if tag != "tensor" or len(dims) != int(ndim):
            raise ValueError(f"{path}:{i + 1}: bad tensor header {line!r}")
        shape = tuple(int(d) for d in dims)
        n_rows = shape[0] if len(shape) > 1 else 1
        values = [float(v) for row in lines[i + 1 : i + 1 + n_rows] for v in row.split()]
        store.add(name, np.array(values).reshape(shape))
        i += 1 + n_rows
    return store, header


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base class: ``forward`` fills ``_cache``; ``backward`` requires it."""

    _cache = None

    def _need_cache(self):
        if self._cache is None:
            raise UsageError(f"{type(self).__name__}.backward called before forward")
        return self._cache


class Linear(Layer):
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, rng: np.random.Generator):
        self.store, self.name = store, name
        self.n_in, self.n_out = n_in, n_out
        store.add(f"{name}.W", glorot_uniform(rng, n_in, n_out, (n_in, n_out)))
        store.add(f"{name}.b", np.zeros(n_out))

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"{self.name} (linear): expected last dim {self.n_in}, got {x.shape[-1]}")
        # 2-d matmuls hit BLAS; batched 3-d ones do not
        x2 = x.reshape(-1, self.n_in)
        self._cache = (x2, x.shape)
        y = x2 @ self.store[f"{self.name}.W"] + self.store[f"{self.name}.b"]
        return y.reshape(*x.shape[:-1], self.n_out)

    def backward(self, dy):
        x2, shape = self._need_cache()
        dy2 = dy.reshape(-1, self.n_out)
        self.store.accumulate(f"{self.name}.W", x2.T @ dy2)
        self.store.accumulate(f"{self.name}.b", dy2.sum(axis=0))
        return (dy2 @ self.store[f"{self.name}.W"].T).reshape(shape)


class ReLU(Layer):
    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, dy):
        return dy * self._need_cache()


class Tanh(Layer):
    def forward(self, x):
        self._cache = np.tanh(x)
        return self._cache

    def backward(self, dy):
        y = self._need_cache()
        return dy * (1.0 - y * y)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Sigmoid(Layer):
    def forward(self, x):
        self._cache = sigmoid(x)
        return self._cache

    def backward(self, dy):
        y = self._need_cache()
        return dy * y * (1.0 - y)


def masked_softmax(x, mask=None, axis=-1):
    if mask is not None:
        if not np.all(np.any(mask, axis=axis)):
            raise ShapeError("softmax over a fully masked row")
        x = np.where(mask, x, -np.inf)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class Softmax(Layer):
    """Softmax over the last axis; masked entries get probability exactly 0."""

    def forward(self, x, mask=None):
        self._cache = masked_softmax(x, mask)
        return self._cache

    def backward(self, dy):
        y = self._need_cache()
        return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))


class LayerNorm(Layer):
    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-5):
        self.store, self.name, self.dim, self.eps = store, name, dim, eps
        store.add(f"{name}.gain", np.ones(dim))
        store.add(f"{name}.bias", np.zeros(dim))

    def forward(self, x):
        if x.shape[-1] != self.dim:
            raise ShapeError(f"{self.name} (layer_norm): expected last dim {self.dim}, got {x.shape[-1]}")
        mu = x.mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + self.eps)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv)
        return xhat * self.store[f"{self.name}.gain"] + self.store[f"{self.name}.bias"]

    def backward(self, dy):
        xhat, inv = self._need_cache()
        self.store.accumulate(f"{self.name}.gain", (dy * xhat).reshape(-1, self.dim).sum(axis=0))
        self.store.accumulate(f"{self.name}.bias", dy.reshape(-1, self.dim).sum(axis=0))
        dxhat = dy * self.store[f"{self.name}.gain"]
        return inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )


class MultiHeadAttention(Layer):
    """Scaled dot-product self-attention over the list axis, keys masked by ``mask``.

    No positional information enters: permuting the rows of the input
    permutes the rows of the output in the same way.
    """

    def __init__(self, store: ParamStore, name: str, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise ShapeError(f"{name}: d_model {d_model} not divisible by {n_heads} heads")
        self.name, self.d_model, self.n_heads = name, d_model, n_heads
        self.d_head = d_model // n_heads
        self.q = Linear(store, f"{name}.q", d_model, d_model, rng)
        self.k = Linear(store, f"{name}.k", d_model, d_model, rng)
        self.v = Linear(store, f"{name}.v", d_model, d_model, rng)
        self.o = Linear(store, f"{name}.o", d_model, d_model, rng)
        self.softmax = Softmax()

    def _split(self, t):
        b, n, _ = t.shape
        return t.reshape(b, n, self.n_heads, self.d_head).transpose(0, 2, 1, 3)

    def _merge(self, t):
        b, _, n, _ = t.shape
        return t.transpose(0, 2, 1, 3).reshape(b, n, self.d_model)

    def forward(self, x, mask=None):
        if x.ndim != 3 or x.shape[-1] != self.d_model:
            raise ShapeError(f"{self.name} (attention): expected (batch, list, {self.d_model}), got {x.shape}")
        q = self._split(self.q.forward(x))
        k = self._split(self.k.forward(x))
        v = self._split(self.v.forward(x))
        scale = 1.0 / math.sqrt(self.d_head)
        logits = (q @ k.transpose(0, 1, 3, 2)) * scale
        key_mask = None if mask is None else mask[:, None, None, :]
        if key_mask is not None:
            key_mask = np.broadcast_to(key_mask, logits.shape)
        attn = self.softmax.forward(logits, key_mask)
        self._cache = (q, k, v, attn, scale)
        return self.o.forward(self._merge(attn @ v))

    def backward(self, dy):
        q, k, v, attn, scale = self._need_cache()
        dctx = self._split(self.o.backward(dy))
        dattn = dctx @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dctx
        dlogits = self.softmax.backward(dattn) * scale
        dq = dlogits @ k
        dk = dlogits.transpose(0, 1, 3, 2) @ q
        return (
            self.q.backward(self._merge(dq))
            + self.k.backward(self._merge(dk))
            + self.v.backward(self._merge(dv))
        )


class GRU(Layer):
    """Gated recurrent unit over axis 1.

    r = sigmoid(x Wx_r + h Wh_r + b_r)
    z = sigmoid(x Wx_z + h Wh_z + b_z)
    n = tanh(x Wx_n + b_n + r * (h Wh_n))
    h' = (1 - z) * n + z * h

    Steps where ``mask`` is False leave the state untouched.
    """

    def __init__(self, store: ParamStore, name: str, n_in: int, hidden: int, rng: np.random.Generator):
        self.store, self.name, self.n_in, self.hidden = store, name, n_in, hidden
        store.add(f"{name}.Wx", glorot_uniform(rng, n_in, 3 * hidden, (n_in, 3 * hidden)))
        store.add(f"{name}.Wh", glorot_uniform(rng, hidden, 3 * hidden, (hidden, 3 * hidden)))
        store.add(f"{name}.b", np.zeros(3 * hidden))

    def forward(self, x, mask=None, h0=None):
        """Return (per-step states ``(B, T, hidden)``, final state ``(B, hidden)``)."""
        if x.ndim != 3 or x.shape[-1] != self.n_in:
            raise ShapeError(f"{self.name} (gru): expected (batch, steps, {self.n_in}), got {x.shape}")
        b, steps, _ = x.shape
        hd = self.hidden
        Wh = self.store[f"{self.name}.Wh"]
        gx = x @ self.store[f"{self.name}.Wx"] + self.store[f"{self.name}.b"]
        m = np.ones((b, steps)) if mask is None else mask.astype(np.float64)
        h = np.zeros((b, hd)) if h0 is None else h0
        states = np.empty((b, steps, hd))
        saved = []
        for t in range(steps):
            gh = h @ Wh
            r = sigmoid(gx[:, t, :hd] + gh[:, :hd])
            z = sigmoid(gx[:, t, hd : 2 * hd] + gh[:, hd : 2 * hd])
            n = np.tanh(gx[:, t, 2 * hd :] + r * gh[:, 2 * hd :])
            mt = m[:, t, None]
            h_new = mt * ((1.0 - z) * n + z * h) + (1.0 - mt) * h
            saved.append((h, r, z, n, gh[:, 2 * hd :]))
            h = h_new
            states[:, t] = h
        self._cache = (x, m, saved)
        return states, h

    def backward(self, dstates, dfinal=None):
        x, m, saved = self._need_cache()
        b, steps, _ = x.shape
        hd = self.hidden
        Wh = self.store[f"{self.name}.Wh"]
        dh = np.zeros((b, hd)) if dfinal is None else dfinal.copy()
        dgx = np.empty((b, steps, 3 * hd))
        dWh = np.zeros_like(Wh)
        for t in reversed(range(steps)):
            dh = dh + dstates[:, t]
            h_prev, r, z, n, ghn = saved[t]
            mt = m[:, t, None]
            dnew = mt * dh
            dn = dnew * (1.0 - z)
            dz = dnew * (h_prev - n)
            dan = dn * (1.0 - n * n)
            dar = dan * ghn * r * (1.0 - r)
            daz = dz * z * (1.0 - z)
            dgh = np.concatenate([dar, daz, dan * r], axis=1)
            dgx[:, t] = np.concatenate([dar, daz, dan], axis=1)
            dWh += h_prev.T @ dgh
            dh = dnew * z + (1.0 - mt) * dh + dgh @ Wh.T
        self.store.accumulate(f"{self.name}.Wh", dWh)
        self.store.accumulate(f"{self.name}.Wx", x.reshape(-1, self.n_in).T @ dgx.reshape(-1, 3 * hd))
        self.store.accumulate(f"{self.name}.b", dgx.reshape(-1, 3 * hd).sum(axis=0))
        self._h0_grad = dh
        return dgx @ self.store[f"{self.name}.Wx"].T


class Sequential(Layer):
    """A chain of single-input layers."""

    def __init__(self, layers: Iterable[Layer]):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        self._cache = True
        return x

    def backward(self, dy):
        self._need_cache()
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


def log_softmax(x, mask=None):
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    z = x - np.max(x, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def weighted_softmax_xent(logits, weights, mask=None):
    """Per-list ``-sum_i w_i log softmax(logits)_i`` and its gradient in ``logits``.

    ``weights`` are treated as constants. Masked slots must carry zero weight.
    """
    if logits.shape != weights.shape:
        raise ShapeError(f"logits {logits.shape} and weights {weights.shape} differ")
    logp = log_softmax(logits, mask)
    safe = np.where(weights != 0, logp, 0.0)
    loss = -np.sum(weights * safe, axis=-1)
    p = np.exp(logp)
    grad = p * weights.sum(axis=-1, keepdims=True) - weights
    return loss, grad


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4
    n_probes: int = 0

    @property
    def worst(self) -> tuple[str, float]:
        if not self.max_rel_error:
            return ("", 0.0)
        name = max(self.max_rel_error, key=self.max_rel_error.get)
        return name, self.max_rel_error[name]

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.max_rel_error.values())

    def failing(self) -> list[str]:
        return [k for k, v in self.max_rel_error.items() if not v < self.tolerance]

    def summary(self) -> str:
        name, err = self.worst
        status = "PASS" if self.passed else "FAIL"
        return f"{status} probes={self.n_probes} worst={name} rel_err={err:.3e} tol={self.tolerance:g}"


def grad_check(loss_fn: Callable[[ParamStore], float], params: ParamStore,
               analytic: dict[str, np.ndarray] | None = None, step: float = 1e-5,
               tolerance: float = 1e-4, floor: float = 1e-5,
               max_entries: int | None = None, rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients with central differences ``(f(p+h) - f(p-h)) / 2h``.

    ``loss_fn(params)`` must return the scalar loss and leave gradients in
    ``params.grads`` (accumulated from zero). ``analytic`` overrides the
    gradients taken from that first call, which is how fault injection is
    tested. Relative error is ``|a - n| / max(|a|, |n|, floor)``. With
    ``max_entries`` only that many randomly chosen scalars per tensor are probed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params.zero_grad()
    base = loss_fn(params)
    if not np.isfinite(base):
        raise GradCheckError("loss is not finite at the base point")
    grads = {k: g.copy() for k, g in params.grads.items()} if analytic is None else analytic
    rng = rng or np.random.default_rng(0)
    report = GradCheckReport(tolerance=tolerance)
    for name, value in params.values.items():
        flat = value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn(params)
            flat[i] = orig - step
            down = loss_fn(params)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise GradCheckError(f"non-finite loss while probing {name}[{i}]")
            numeric = (up - down) / (2.0 * step)
            a = grads[name].reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
            report.n_probes += 1
        report.max_rel_error[name] = worst
    params.zero_grad()
    return report

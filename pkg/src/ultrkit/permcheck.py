"""Check that a scorer commutes with permutations of its input list.

A scorer ``f`` passes when ``f(Pi(X))[j] == f(X)[Pi(j)]`` for every sampled
input ``X``, permutation ``Pi`` and position ``j``, up to a tolerance. For
short lists every permutation is tried.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ultrkit.letor import ConfigError

EXHAUSTIVE_MAX = 5


@dataclass(frozen=True)
class Permutation:
    """``apply`` moves the row at ``mapping[j]`` to slot ``j`` (0-based)."""

    mapping: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.mapping) != list(range(len(self.mapping))):
            raise ValueError(f"not a permutation: {self.mapping}")

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    @classmethod
    def random(cls, n: int, rng) -> "Permutation":
        return cls(tuple(int(i) for i in rng.permutation(n)))

    def __len__(self) -> int:
        return len(self.mapping)

    def apply(self, x):
        return np.asarray(x)[list(self.mapping)]

    def inverse(self) -> "Permutation":
        return Permutation(tuple(int(i) for i in np.argsort(self.mapping)))

    def __str__(self) -> str:
        return "(" + " ".join(str(i + 1) for i in self.mapping) + ")"


@dataclass
class Witness:
    X: np.ndarray
    perm: Permutation
    scores: np.ndarray  # f(X)
    permuted_scores: np.ndarray  # f(Pi(X))

    @property
    def violation(self) -> float:
        return float(np.max(np.abs(self.permuted_scores - self.perm.apply(self.scores))))

    def dump(self, path) -> None:
        """Plain-text dump with enough digits to replay the check exactly."""
        lines = [f"perm {self.perm}", f"violation {self.violation!r}"]
        lines.append("scores " + " ".join(repr(float(v)) for v in self.scores))
        lines.append("permuted_scores " + " ".join(repr(float(v)) for v in self.permuted_scores))
        for row in self.X:
            lines.append("x " + " ".join(repr(float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Witness":
        X, fields = [], {}
        for line in Path(path).read_text().splitlines():
            key, _, rest = line.partition(" ")
            if key == "x":
                X.append([float(v) for v in rest.split()])
            else:
                fields[key] = rest
        perm = Permutation(tuple(int(v) - 1 for v in fields["perm"].strip("()").split()))
        return cls(np.array(X), perm,
                   np.array([float(v) for v in fields["scores"].split()]),
                   np.array([float(v) for v in fields["permuted_scores"].split()]))


@dataclass
class InvarianceVerdict:
    passed: bool
    trials: int
    max_violation: float
    tolerance: float
    exhaustive: bool
    witness: Witness | None = None

    def report(self) -> str:
        mode = "exhaustive" if self.exhaustive else "sampled"
        status = "PASS" if self.passed else "FAIL"
        text = (f"{status}: {self.trials} {mode} trials, max violation "
                f"{self.max_violation:.3e} (tolerance {self.tolerance:g})")
        if self.witness is not None and not self.passed:
            text += f"; witness permutation {self.witness.perm}"
        return text


def sample_inputs(list_length: int, feature_dim: int, n_inputs: int, rng) -> list[np.ndarray]:
    """Gaussian lists; every other one gets an exact duplicate row and a near-duplicate."""
    out = []
    for i in range(n_inputs):
        X = rng.standard_normal((list_length, feature_dim))
        if i % 2 == 1 and list_length >= 2:
            X[1] = X[0]
            if list_length >= 3:
                X[2] = X[0] + 1e-9 * rng.standard_normal(feature_dim)
        out.append(X)
    return out


def _permutations(n: int, count: int, rng, exhaustive: bool):
    if exhaustive:
        return [Permutation(p) for p in itertools.permutations(range(n))]
    return [Permutation.identity(n)] + [Permutation.random(n, rng) for _ in range(count - 1)]


def check_invariance(scorer, list_length: int, n_inputs: int = 10, n_perms_per_input: int = 100,
                     tolerance: float = 1e-9, seed: int = 0, order_seed: int = 0,
                     exhaustive: bool | None = None, perms=None) -> InvarianceVerdict:
    """Test the permutation property on random inputs.

    ``order_seed`` is held fixed for every call, so a random-order scorer is
    tested as the deterministic function it is for that seed. ``perms``
    overrides the permutation set (used e.g. to test the identity alone).
    """
    if not tolerance > 0:
        raise ConfigError(f"tolerance must be > 0, got {tolerance}")
    if list_length < 1 or n_inputs < 1 or n_perms_per_input < 1:
        raise ConfigError("list_length, n_inputs and n_perms_per_input must be >= 1")
    if exhaustive is None:
        exhaustive = list_length <= EXHAUSTIVE_MAX
    rng = np.random.default_rng(seed)
    worst, worst_v, trials = None, 0.0, 0
    for X in sample_inputs(list_length, scorer.feature_dim, n_inputs, rng):
        plist = perms if perms is not None else _permutations(
            list_length, n_perms_per_input, rng, exhaustive)
        base = scorer.forward(X[None], order_seed=order_seed)[0]
        batch = np.stack([p.apply(X) for p in plist])
        if scorer.kind.order_mode == "rand":
            # random orders are drawn per batch row, so score lists one at a time
            permuted = np.stack([scorer.forward(b[None], order_seed=order_seed)[0] for b in batch])
        else:
            permuted = scorer.forward(batch, order_seed=order_seed)
        for p, ps in zip(plist, permuted):
            trials += 1
            v = float(np.max(np.abs(ps - p.apply(base))))
            if worst is None or v > worst_v:
                worst_v = v
                worst = Witness(X.copy(), p, base.copy(), ps.copy())
    return InvarianceVerdict(worst_v < tolerance, trials, worst_v, tolerance,
                             exhaustive and perms is None, worst)


def replay_witness(scorer, witness: Witness, order_seed: int = 0) -> float:
    """Recompute a witness's violation from scratch."""
    base = scorer.forward(witness.X[None], order_seed=order_seed)[0]
    ps = scorer.forward(witness.perm.apply(witness.X)[None], order_seed=order_seed)[0]
    return float(np.max(np.abs(ps - witness.perm.apply(base))))


@dataclass
class DistributionVerdict:
    passed: bool
    trials: int
    max_z: float
    threshold: float

    def report(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}: {self.trials} distributional trials, max |z| "
                f"{self.max_z:.2f} (threshold {self.threshold:g})")


def check_distributional(scorer, list_length: int, n_inputs: int = 5, n_perms_per_input: int = 5,
                         n_order_seeds: int = 200, z_threshold: float = 5.0,
                         seed: int = 0) -> DistributionVerdict:
    """Invariance in distribution over order seeds, for random-order scorers.

    For each (X, Pi) the mean score of every document over ``n_order_seeds``
    calls on ``Pi(X)`` is compared with the mean over calls on ``X``; the
    largest standardized difference must stay below ``z_threshold``. The
    threshold is a design default, not a derived value.
    """
    if not z_threshold > 0:
        raise ConfigError(f"z_threshold must be > 0, got {z_threshold}")
    if n_order_seeds < 2:
        raise ConfigError("n_order_seeds must be >= 2")
    rng = np.random.default_rng(seed)
    max_z, trials = 0.0, 0
    for X in sample_inputs(list_length, scorer.feature_dim, n_inputs, rng):
        base = np.stack([scorer.forward(X[None], order_seed=k)[0] for k in range(n_order_seeds)])
        for _ in range(n_perms_per_input):
            p = Permutation.random(list_length, rng)
            other = np.stack([scorer.forward(p.apply(X)[None], order_seed=n_order_seeds + k)[0]
                              for k in range(n_order_seeds)])
            a = base[:, list(p.mapping)]
            se = np.sqrt((a.var(axis=0, ddof=1) + other.var(axis=0, ddof=1)) / n_order_seeds)
            diff = np.abs(a.mean(axis=0) - other.mean(axis=0))
            z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff > 1e-12, math.inf, 0.0))
            max_z = max(max_z, float(z.max()))
            trials += 1
    return DistributionVerdict(max_z < z_threshold, trials, max_z, z_threshold)

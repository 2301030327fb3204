"""Empirical distributions and the information measures built from counts.

Everything is computed from integer counts so that exhaustive small-n checks
stay exact to float rounding.  The convention 0 log 0 = 0 holds throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Any, Sequence

import numpy as np

from .core import InvalidInput, ResourceLimit, as_symbols

TYPE_GUARD = 10**7


def _seq(a: Any) -> np.ndarray:
    arr = np.asarray(as_symbols(a))
    if arr.ndim != 1:
        raise InvalidInput("finite-alphabet sequence expected")
    return arr.astype(np.int64)


def joint_key(*cols: Any) -> np.ndarray:
    """Fuse several aligned symbol sequences into one integer label per position."""
    arrs = [_seq(c) for c in cols]
    n = len(arrs[0])
    if any(len(a) != n for a in arrs):
        raise InvalidInput("sequences must have equal lengths")
    key = np.zeros(n, dtype=np.int64)
    for a in arrs:
        span = int(a.max()) + 1 if n else 1
        key = key * span + a
    return key


def _xlogx_counts(counts: np.ndarray) -> float:
    c = counts[counts > 0].astype(float)
    return float(np.sum(c * np.log2(c)))


def _counts(a: np.ndarray) -> np.ndarray:
    return np.unique(a, return_counts=True)[1]


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Joint counts of (context, symbol) pairs; context 0 when unconditioned."""

    symbols: np.ndarray
    contexts: np.ndarray
    counts: np.ndarray
    n: int

    def prob(self, symbol: int, context: int | None = None) -> float:
        if context is None:
            mask = self.symbols == symbol
            return float(self.counts[mask].sum()) / self.n
        ctx = self.contexts == context
        total = self.counts[ctx].sum()
        if total == 0:
            return math.nan
        return float(self.counts[ctx & (self.symbols == symbol)].sum()) / float(total)

    def marginal(self) -> dict[int, float]:
        return {int(s): self.prob(int(s)) for s in np.unique(self.symbols)}


def empirical_distribution(a: Any, context: Any = None) -> EmpiricalDistribution:
    x = _seq(a)
    z = np.zeros_like(x) if context is None else _seq(context)
    if len(z) != len(x):
        raise InvalidInput("context length differs from sequence length")
    pairs, counts = np.unique(np.stack([z, x], axis=1), axis=0, return_counts=True)
    return EmpiricalDistribution(pairs[:, 1], pairs[:, 0], counts, len(x))


def empirical_probability(x: Any, context: Any = None) -> float:
    """log2 of the i.i.d. (or per-context memoryless) ML probability of x."""
    xs = _seq(x)
    if context is None:
        n = len(xs)
        return _xlogx_counts(_counts(xs)) - n * math.log2(n)
    z = _seq(context)
    if len(z) != len(xs):
        raise InvalidInput("context length differs from sequence length")
    return _xlogx_counts(_counts(joint_key(z, xs))) - _xlogx_counts(_counts(z))


def ml_probability_conditional_memoryless(x: Any, z: Any) -> float:
    """Maximum over conditionally memoryless laws P(x_i|z_i) of log2 P(x|z)."""
    return empirical_probability(x, z)


def empirical_entropy(x: Any, context: Any = None) -> float:
    n = len(_seq(x))
    return -empirical_probability(x, context) / n


def joint_empirical_entropy(*cols: Any) -> float:
    return empirical_entropy(joint_key(*cols))


def quazi_empirical_entropy(x: Any, mass: Any, context: Any = None) -> float:
    """-(1/n) sum_i log2 p(x_i | z_i) for a model p; +inf if an observed letter has zero mass.

    ``mass`` has shape (|X|,) or, with a context, (|Z|, |X|).
    """
    xs = _seq(x)
    p = np.asarray(mass, dtype=float)
    probs = p[xs] if context is None else p[_seq(context), xs]
    if np.any(probs <= 0):
        return math.inf
    return float(-np.sum(np.log2(probs)) / len(xs))


def empirical_mutual_information(x: Any, y: Any) -> float:
    """H^(x) - H^(x|y) in bits/symbol."""
    return empirical_entropy(x) - empirical_entropy(x, y)


def empirical_mutual_information_joint(x: Any, y: Any) -> float:
    """Mutual information of the joint empirical distribution, summed cell by cell."""
    xs, ys = _seq(x), _seq(y)
    n = len(xs)
    pairs, c = np.unique(np.stack([xs, ys], axis=1), axis=0, return_counts=True)
    px = dict(zip(*np.unique(xs, return_counts=True)))
    py = dict(zip(*np.unique(ys, return_counts=True)))
    total = 0.0
    for (a, b), cab in zip(pairs, c):
        total += cab * math.log2(cab * n / (px[a] * py[b]))
    return total / n


def conditional_mutual_information(x: Any, y: Any, z: Any) -> float:
    """I^(x; y | z) = H^(x|z) - H^(x|y,z)."""
    return empirical_entropy(x, z) - empirical_entropy(x, joint_key(y, z))


def kl_divergence(p: Sequence[float], q: Sequence[float]) -> float:
    pa = np.asarray(p, dtype=float)
    qa = np.asarray(q, dtype=float)
    if pa.shape != qa.shape:
        raise InvalidInput("distributions must have equal length")
    supp = pa > 0
    if np.any(qa[supp] <= 0):
        return math.inf
    return float(np.sum(pa[supp] * np.log2(pa[supp] / qa[supp])))


def letter_frequencies(x: Any, size: int) -> np.ndarray:
    xs = _seq(x)
    return np.bincount(xs, minlength=size) / len(xs)


# --------------------------------------------------------------------------
# types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TypeClass:
    """Joint type over X x Y: counts[a, b] of positions with x=a, y=b."""

    counts: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def contains(self, x: Any, y: Any) -> bool:
        xs, ys = _seq(x), _seq(y)
        ax, ay = self.counts.shape
        if len(xs) != self.n or len(ys) != self.n:
            return False
        c = np.zeros((ax, ay), dtype=np.int64)
        np.add.at(c, (xs, ys), 1)
        return bool(np.array_equal(c, self.counts))

    def key(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.counts.reshape(-1))


def type_of(x: Any, y: Any, size_x: int, size_y: int) -> TypeClass:
    c = np.zeros((size_x, size_y), dtype=np.int64)
    np.add.at(c, (_seq(x), _seq(y)), 1)
    return TypeClass(c)


def count_types(cells: int, n: int) -> int:
    return math.comb(n + cells - 1, cells - 1)


def enumerate_types(size_x: int, size_y: int, n: int, guard: int = TYPE_GUARD) -> list[TypeClass]:
    """All joint count matrices with entries summing to n (stars and bars)."""
    cells = size_x * size_y
    total = count_types(cells, n)
    if total > guard:
        raise ResourceLimit(f"{total} type classes exceed guard {guard}")
    out = []
    for bars in combinations(range(n + cells - 1), cells - 1):
        prev = -1
        vals = []
        for b in bars:
            vals.append(b - prev - 1)
            prev = b
        vals.append(n + cells - 2 - prev)
        out.append(TypeClass(np.asarray(vals, dtype=np.int64).reshape(size_x, size_y)))
    return out

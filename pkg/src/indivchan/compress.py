"""Sequential LZ78 compressors, with and without decoder side information.

Both coders are fed one symbol at a time and keep two lengths:

* ``L_S``: bits already emitted for completed phrases (unterminated length),
* ``L_T``: bits of a complete, decodable stream if the input ended now.

The terminated stream starts with the Elias-delta code of the block length,
followed by the phrases, followed by a reference to the pending (incomplete)
phrase when there is one.  The pending reference costs no more than the
phrase it turns into once completed, so ``L_T`` never decreases.

Conditional coder (decoder knows y): a phrase of length l starting at p is
sent as Elias-gamma(l), then the index of its prefix among the dictionary
phrases whose y-part equals y[p:p+l-1], then the new x letter.  The index
field is sized by the largest such group met along y[p:p+d], d < l, which
the decoder can recompute and which only grows as the phrase is extended.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import InvalidInput, as_symbols


def ceil_log2(m: int) -> int:
    """Bits needed to index m items (0 for m <= 1)."""
    return (m - 1).bit_length() if m > 1 else 0


def gamma_length(m: int) -> int:
    return 2 * (m.bit_length() - 1) + 1


def delta_length(m: int) -> int:
    nb = m.bit_length()
    return (nb - 1) + gamma_length(nb)


def _gamma_bits(m: int) -> str:
    b = bin(m)[2:]
    return "0" * (len(b) - 1) + b


def _delta_bits(m: int) -> str:
    b = bin(m)[2:]
    return _gamma_bits(len(b)) + b[1:]


def _fixed_bits(v: int, width: int) -> str:
    return format(v, f"0{width}b") if width else ""


class _Reader:
    def __init__(self, bits: str):
        self.bits = bits
        self.pos = 0

    def read(self, width: int) -> int:
        if width == 0:
            return 0
        chunk = self.bits[self.pos : self.pos + width]
        if len(chunk) < width:
            raise InvalidInput("truncated bit stream")
        self.pos += width
        return int(chunk, 2)

    def gamma(self) -> int:
        zeros = 0
        while self.bits[self.pos + zeros] == "0":
            zeros += 1
        self.pos += zeros
        return self.read(zeros + 1)

    def delta(self) -> int:
        nb = self.gamma()
        rest = self.read(nb - 1)
        return (1 << (nb - 1)) | rest


def _seq(x: Any) -> np.ndarray:
    arr = np.asarray(as_symbols(x), dtype=np.int64)
    if arr.ndim != 1:
        raise InvalidInput("finite-alphabet sequence expected")
    return arr


def _size(*seqs: np.ndarray) -> int:
    return max(2, max(int(s.max()) + 1 if len(s) else 0 for s in seqs))


# --------------------------------------------------------------------------
# parse records
# --------------------------------------------------------------------------


@dataclass
class ParseRecord:
    """Result of an incremental parse.

    ``bounds`` holds (start, end) slices tiling the input; ``refs`` the node id
    of each phrase's prefix; ``pending`` is True when the last phrase is an
    incomplete copy of an existing node.
    """

    bounds: list[tuple[int, int]] = field(default_factory=list)
    refs: list[int] = field(default_factory=list)
    pending: bool = False

    @property
    def count(self) -> int:
        """Number of completed phrases."""
        return len(self.bounds) - (1 if self.pending else 0)

    def phrases(self, x: Any) -> list[tuple[int, ...]]:
        xs = _seq(x)
        return [tuple(int(v) for v in xs[a:b]) for a, b in self.bounds]


# --------------------------------------------------------------------------
# LZ78
# --------------------------------------------------------------------------


class LZ78Coder:
    """Incremental LZ78 over a finite alphabet, tracking L_S and L_T."""

    def __init__(self, size: int):
        self.size = size
        self.letter_bits = ceil_log2(size)
        self.children: list[dict[int, int]] = [{}]
        self.depth = [0]
        self.cur = 0
        self.n = 0
        self.L_S = 0
        self.record = ParseRecord()
        self._start = 0

    @property
    def phrases(self) -> int:
        return len(self.children) - 1

    def feed(self, sym: int) -> None:
        nxt = self.children[self.cur].get(sym)
        self.n += 1
        if nxt is not None:
            self.cur = nxt
            return
        self.L_S += ceil_log2(self.phrases + 1) + self.letter_bits
        self.children[self.cur][sym] = len(self.children)
        self.children.append({})
        self.depth.append(self.depth[self.cur] + 1)
        self.record.bounds.append((self._start, self.n))
        self.record.refs.append(self.cur)
        self._start = self.n
        self.cur = 0

    def termination(self) -> int:
        """Extra bits of the terminated stream over L_S."""
        if self.n == 0:
            return 0
        extra = delta_length(self.n)
        if self.cur != 0:
            extra += ceil_log2(self.phrases + 1)
        return extra

    @property
    def L_T(self) -> int:
        return self.L_S + self.termination()

    def parse_record(self) -> ParseRecord:
        rec = ParseRecord(list(self.record.bounds), list(self.record.refs), False)
        if self.cur != 0:
            rec.bounds.append((self._start, self.n))
            rec.refs.append(self.cur)
            rec.pending = True
        return rec


def lz78_parse(x: Any) -> ParseRecord:
    xs = _seq(x)
    coder = LZ78Coder(_size(xs))
    for s in xs:
        coder.feed(int(s))
    return coder.parse_record()


def lz78_lengths(x: Any, size: int | None = None) -> tuple[int, int]:
    xs = _seq(x)
    coder = LZ78Coder(size or _size(xs))
    for s in xs:
        coder.feed(int(s))
    return coder.L_S, coder.L_T


def lz78_length_trace(x: Any, size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """L_S and L_T of every prefix x_1^i, i = 0..n."""
    xs = _seq(x)
    coder = LZ78Coder(size or _size(xs))
    ls = [0]
    lt = [0]
    for s in xs:
        coder.feed(int(s))
        ls.append(coder.L_S)
        lt.append(coder.L_T)
    return np.asarray(ls), np.asarray(lt)


def lz78_encode(x: Any, size: int | None = None) -> str:
    xs = _seq(x)
    size = size or _size(xs)
    rec_coder = LZ78Coder(size)
    out = [_delta_bits(len(xs))]
    for s in xs:
        before = rec_coder.phrases
        cur = rec_coder.cur
        rec_coder.feed(int(s))
        if rec_coder.phrases > before:
            out.append(_fixed_bits(cur, ceil_log2(before + 1)))
            out.append(_fixed_bits(int(s), rec_coder.letter_bits))
    if rec_coder.cur != 0:
        out.append(_fixed_bits(rec_coder.cur, ceil_log2(rec_coder.phrases + 1)))
    return "".join(out)


def lz78_decode(bits: str, size: int) -> np.ndarray:
    rd = _Reader(bits)
    n = rd.delta()
    letter_bits = ceil_log2(size)
    strings: list[tuple[int, ...]] = [()]
    out: list[int] = []
    while len(out) < n:
        node = rd.read(ceil_log2(len(strings)))
        if node >= len(strings):
            raise InvalidInput("invalid phrase reference")
        prefix = strings[node]
        if node != 0 and len(prefix) == n - len(out):
            out.extend(prefix)
            break
        sym = rd.read(letter_bits)
        strings.append(prefix + (sym,))
        out.extend(prefix + (sym,))
    return np.asarray(out, dtype=np.int64)


def lz78_termination_bound(n: int) -> int:
    """Worst-case L_T - L_S for inputs of length n."""
    return delta_length(n) + ceil_log2(n + 1)


# --------------------------------------------------------------------------
# conditional LZ
# --------------------------------------------------------------------------


class ConditionalLZCoder:
    """Incremental joint parse of (x, y) pairs; x is coded given y."""

    def __init__(self, size_x: int, size_y: int):
        self.size_x = size_x
        self.size_y = size_y
        self.letter_bits = ceil_log2(size_x)
        # pair trie
        self.children: list[dict[tuple[int, int], int]] = [{}]
        self.depth = [0]
        self.ynode = [0]
        # y trie: node counts of pair phrases sharing each y-path
        self.ychildren: list[dict[int, int]] = [{}]
        self.ycount = [1]
        self.cur = 0
        self.n = 0
        self.L_S = 0
        # largest group of same-y-part phrases met along the current y-path
        self._ycur = 0
        self._cand = 1
        self._start = 0
        self.record = ParseRecord()
        self.costs: list[int] = []
        self.y_parts: list[tuple[int, ...]] = []
        self._ybuf: list[int] = []

    @property
    def phrases(self) -> int:
        return len(self.children) - 1

    def _pending_cost(self) -> int:
        if self.cur == 0:
            return 0
        return gamma_length(self.depth[self.cur] + 1) + ceil_log2(self._cand)

    def feed(self, xs: int, ys: int) -> None:
        self.n += 1
        self._ybuf.append(ys)
        key = (xs, ys)
        nxt = self.children[self.cur].get(key)
        if nxt is not None:
            self.cur = nxt
            self._ycur = self.ynode[nxt]
            self._cand = max(self._cand, self.ycount[self._ycur])
            return
        cost = gamma_length(self.depth[self.cur] + 1) + ceil_log2(self._cand) + self.letter_bits
        self.L_S += cost
        self.costs.append(cost)
        ych = self.ychildren[self._ycur]
        yid = ych.get(ys)
        if yid is None:
            yid = len(self.ychildren)
            ych[ys] = yid
            self.ychildren.append({})
            self.ycount.append(0)
        self.ycount[yid] += 1
        self.children[self.cur][key] = len(self.children)
        self.children.append({})
        self.depth.append(self.depth[self.cur] + 1)
        self.ynode.append(yid)
        self.record.bounds.append((self._start, self.n))
        self.record.refs.append(self.cur)
        self.y_parts.append(tuple(self._ybuf))
        self._ybuf = []
        self._start = self.n
        self.cur = 0
        self._ycur = 0
        self._cand = 1

    def termination(self) -> int:
        if self.n == 0:
            return 0
        return delta_length(self.n) + self._pending_cost()

    @property
    def L_T(self) -> int:
        return self.L_S + self.termination()

    def parse_record(self) -> ParseRecord:
        rec = ParseRecord(list(self.record.bounds), list(self.record.refs), False)
        if self.cur != 0:
            rec.bounds.append((self._start, self.n))
            rec.refs.append(self.cur)
            rec.pending = True
        return rec


def _feed_pairs(x: Any, y: Any, size_x: int | None, size_y: int | None) -> ConditionalLZCoder:
    xs, ys = _seq(x), _seq(y)
    if len(xs) != len(ys):
        raise InvalidInput("x and y must have equal lengths")
    coder = ConditionalLZCoder(size_x or _size(xs), size_y or _size(ys))
    for a, b in zip(xs.tolist(), ys.tolist()):
        coder.feed(a, b)
    return coder


def conditional_lz_parse(x: Any, y: Any) -> ParseRecord:
    return _feed_pairs(x, y, None, None).parse_record()


def conditional_lz_lengths(x: Any, y: Any, size_x: int | None = None,
                           size_y: int | None = None) -> tuple[int, int]:
    coder = _feed_pairs(x, y, size_x, size_y)
    return coder.L_S, coder.L_T


def conditional_lz_length_trace(x: Any, y: Any, size_x: int | None = None,
                                size_y: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = _seq(x), _seq(y)
    coder = ConditionalLZCoder(size_x or _size(xs), size_y or _size(ys))
    ls = [0]
    lt = [0]
    for a, b in zip(xs.tolist(), ys.tolist()):
        coder.feed(a, b)
        ls.append(coder.L_S)
        lt.append(coder.L_T)
    return np.asarray(ls), np.asarray(lt)


@dataclass(frozen=True)
class ConditionalLZStats:
    phrases: int  # completed phrases c
    complexity: float  # sum over completed phrases of log2 c_l(x|y)
    L_S: int
    L_T: int
    r_max: float  # max over completed phrases of cost - log2|X| - log2 c_l
    r_n: float  # smallest r with L_T <= C_LZ + c (log2|X| + r)


def conditional_lz_stats(x: Any, y: Any, size_x: int | None = None,
                         size_y: int | None = None) -> ConditionalLZStats:
    coder = _feed_pairs(x, y, size_x, size_y)
    c = coder.phrases
    lx = math.log2(coder.size_x)
    counts = Counter(coder.y_parts)
    logs = [math.log2(counts[p]) for p in coder.y_parts]
    cplx = float(sum(logs))
    if c == 0:
        return ConditionalLZStats(0, 0.0, coder.L_S, coder.L_T, 0.0, math.inf)
    r_max = max(cost - lx - lg for cost, lg in zip(coder.costs, logs))
    r_avg = (coder.L_T - cplx) / c - lx
    return ConditionalLZStats(c, cplx, coder.L_S, coder.L_T, r_max, max(r_max, r_avg))


def conditional_lz_complexity(x: Any, y: Any) -> float:
    """C_LZ(x|y): sum over completed phrases of log2 of the number of phrases
    sharing that phrase's y-part (counts taken over the whole parse)."""
    return conditional_lz_stats(x, y).complexity


def conditional_lz_encode(x: Any, y: Any, size_x: int | None = None,
                          size_y: int | None = None) -> str:
    xs, ys = _seq(x), _seq(y)
    size_x = size_x or _size(xs)
    coder = ConditionalLZCoder(size_x, size_y or _size(ys))
    out = [_delta_bits(len(xs))]
    for a, b in zip(xs.tolist(), ys.tolist()):
        before = coder.phrases
        cur, cand = coder.cur, coder._cand
        start = coder._start
        coder.feed(a, b)
        if coder.phrases > before:
            out.append(_gamma_bits(coder.depth[cur] + 1))
            out.append(_fixed_bits(_candidate_index(coder, ys, start, cur), ceil_log2(cand)))
            out.append(_fixed_bits(a, coder.letter_bits))
    if coder.cur != 0:
        out.append(_gamma_bits(coder.depth[coder.cur] + 1))
        out.append(_fixed_bits(_candidate_index(coder, ys, coder._start, coder.cur), ceil_log2(coder._cand)))
    return "".join(out)


def _candidates(children, ys: np.ndarray, start: int, depth: int) -> tuple[list[int], int]:
    """Nodes at ``depth`` whose y-path equals ys[start:start+depth], ordered by id,
    and the largest group size met on the way down (root counts as 1)."""
    frontier = [0]
    width = 1
    for d in range(depth):
        yv = int(ys[start + d])
        nxt = []
        for node in frontier:
            for (_, yb), child in children[node].items():
                if yb == yv:
                    nxt.append(child)
        nxt.sort()
        frontier = nxt
        width = max(width, len(nxt))
    return frontier, width


def _candidate_index(coder: ConditionalLZCoder, ys: np.ndarray, start: int, node: int) -> int:
    # the phrase just added is deeper than its prefix, so it never qualifies
    cands, _ = _candidates(coder.children, ys, start, coder.depth[node])
    return cands.index(node)


def conditional_lz_decode(bits: str, y: Any, size_x: int) -> np.ndarray:
    ys = _seq(y)
    rd = _Reader(bits)
    n = rd.delta()
    if n != len(ys):
        raise InvalidInput("side information length differs from coded length")
    letter_bits = ceil_log2(size_x)
    children: list[dict[tuple[int, int], int]] = [{}]
    depth = [0]
    strings: list[tuple[int, ...]] = [()]
    out: list[int] = []
    while len(out) < n:
        pos = len(out)
        ell = rd.gamma()
        if ell - 1 > n - pos:
            raise InvalidInput("phrase length overruns the block")
        cands, width = _candidates(children, ys, pos, ell - 1)
        idx = rd.read(ceil_log2(width))
        if idx >= len(cands):
            raise InvalidInput("invalid phrase reference")
        node = cands[idx]
        prefix = strings[node]
        if ell - 1 == n - pos:
            out.extend(prefix)
            break
        sym = rd.read(letter_bits)
        children[node][(sym, int(ys[pos + ell - 1]))] = len(children)
        children.append({})
        depth.append(depth[node] + 1)
        strings.append(prefix + (sym,))
        out.extend(prefix + (sym,))
    return np.asarray(out, dtype=np.int64)


def conditional_lz_termination_bound(n: int) -> int:
    return delta_length(n) + gamma_length(n) + ceil_log2(n + 1)


# --------------------------------------------------------------------------
# modulo-additive noise
# --------------------------------------------------------------------------


def modulo_noise(x: Any, y: Any, size: int) -> np.ndarray:
    xs, ys = _seq(x), _seq(y)
    if len(xs) != len(ys):
        raise InvalidInput("x and y must have equal lengths")
    if len(xs) and (max(xs.max(), ys.max()) >= size or min(xs.min(), ys.min()) < 0):
        raise InvalidInput("symbols outside the modulo group")
    return (ys - xs) % size


def modulo_noise_lengths(x: Any, y: Any, size: int = 2) -> tuple[int, int]:
    return lz78_lengths(modulo_noise(x, y, size), size)

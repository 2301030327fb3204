"""Communication schemes: fixed-rate random codes and the adaptive rateless scheme.

The adaptive scheme sends K bits per block.  Each block uses a fresh random
codebook.  The decoder watches a sequential metric psi(x^k, y^k, j) for every
codeword, and it ends the block at the first decision time where some
codeword crosses the threshold.  Feedback tells the encoder when a block
ended.

Two simulators are provided.  The explicit one draws the whole codebook, so
it is only usable for small K.  The implicit one covers binary uniform input
with metrics that depend on the competitor only through its count of
disagreements with y.  It never draws the competitors; a dynamic program over
that count gives the exact per-competitor crossing probabilities instead.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from scipy.special import gammaln

from . import compress
from .analysis import FrameworkParams, theorem_framework_params
from .core import (
    Channel,
    InvalidInput,
    InvalidParameter,
    Prior,
    ResourceLimit,
    SharedRandomness,
    SymbolSequence,
    apply_channel,
    as_symbols,
    sample_prior,
)
from .ratefn import ConditionalModel, all_sequences, kt_model

LN2 = math.log(2.0)
CODEBOOK_GUARD = 2**20
EXPLICIT_K_LIMIT = 16
TIE_DECIMALS = 9


def _quantize(v: np.ndarray | float) -> np.ndarray:
    # metric values that agree up to float noise count as ties
    return np.round(np.asarray(v, dtype=float), TIE_DECIMALS)


# --------------------------------------------------------------------------
# fixed-rate codes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedRateCode:
    """Random codebook of M = ceil(2^{nR}) i.i.d. codewords decoded by a rate function."""

    n: int
    rate: float
    prior: Prior
    metric: Callable[[Any, Any], float]
    seed: SharedRandomness
    decoder: str = "max_metric"

    def __post_init__(self):
        if self.decoder not in ("max_metric", "randomized_tie"):
            raise InvalidParameter(f"unknown decoder {self.decoder!r}")
        if self.n < 1 or self.rate < 0:
            raise InvalidParameter("need n >= 1 and rate >= 0")
        if self.M > CODEBOOK_GUARD:
            raise ResourceLimit(f"codebook of {self.M} words exceeds guard {CODEBOOK_GUARD}")

    @property
    def M(self) -> int:
        return max(1, math.ceil(2.0 ** (self.n * self.rate) - 1e-9))

    def codeword(self, message: int) -> SymbolSequence:
        if not 1 <= message <= self.M:
            raise InvalidInput(f"message {message} outside 1..{self.M}")
        return sample_prior(self.prior, self.n, self.seed.derive(f"codeword/{message}"))

    def codebook(self) -> list[SymbolSequence]:
        return [self.codeword(m) for m in range(1, self.M + 1)]


def fixed_encode(code: FixedRateCode, message: int, rand: SharedRandomness | None = None) -> SymbolSequence:
    """Codeword of ``message`` (1-based); the codebook is a function of the code's seed."""
    return code.codeword(message)


def fixed_decode(code: FixedRateCode, y: Any, rand: SharedRandomness | None = None) -> int:
    """Decoded message index (1-based)."""
    ys = as_symbols(y)
    if len(ys) != code.n:
        raise InvalidInput("output length differs from code length")
    scores = _quantize([code.metric(c.data, ys) for c in code.codebook()])
    return _decide(scores, code.rate, code.decoder, rand) + 1


def _decide(scores: np.ndarray, rate: float, decoder: str, rand: SharedRandomness | None) -> int:
    if decoder == "randomized_tie":
        above = np.flatnonzero(scores >= _quantize(rate))
        if len(above):
            rng = (rand or SharedRandomness(0)).generator()
            return int(above[rng.integers(len(above))])
    return int(np.argmax(scores))


def _competitor_tails(values: np.ndarray, weights: np.ndarray, ref: float) -> tuple[float, float]:
    gt = float(np.sum(weights[values > ref]))
    eq = float(np.sum(weights[values == ref]))
    return gt, eq


def _avg_power_mix(a: float, b: float, M: int) -> float:
    """(1/M) sum_{i=0}^{M-1} a^i b^{M-1-i} for 0 <= a <= b <= 1."""
    if M == 1:
        return 1.0
    if b <= 0.0:
        return 0.0  # every term carries a positive power of a or b
    ratio = a / b
    if ratio >= 1.0:
        return b ** (M - 1)
    # geometric series, written to stay accurate when ratio is close to 1
    s = -math.expm1(M * math.log(ratio)) / -math.expm1(math.log(ratio)) if ratio > 0 else 1.0
    return math.exp((M - 1) * math.log(b)) * s / M


def fixed_error_exact(values: np.ndarray, weights: np.ndarray, ref: float, M: int, rate: float | None = None,
                      decoder: str = "max_metric") -> float:
    """Exact error probability given the transmitted word's metric ``ref``.

    ``values``/``weights`` describe the competitor metric distribution under Q
    (e.g. all sequences with their prior masses).  The message index is
    uniform, which turns lowest-index tie breaking into an average.
    """
    v = _quantize(values)
    w = np.asarray(weights, dtype=float)
    r = float(_quantize(ref))
    gt, eq = _competitor_tails(v, w, r)
    if decoder == "randomized_tie" and rate is not None and r >= float(_quantize(rate)):
        above = float(np.sum(w[v >= _quantize(rate)]))
        if above <= 0:
            return 0.0
        p_ok = -math.expm1(M * math.log1p(-min(above, 1.0))) / (M * above) if above < 1 else 1.0 / M
        return 1.0 - p_ok
    # max-metric decoding; also the randomized decoder when the word is below the threshold
    return 1.0 - _avg_power_mix(max(0.0, 1.0 - gt - eq), max(0.0, 1.0 - gt), M)


def fixed_error_monte_carlo(values: np.ndarray, weights: np.ndarray, true_index: int, M: int, trials: int,
                            rand: SharedRandomness, rate: float | None = None, decoder: str = "max_metric",
                            batch: int = 20000) -> tuple[float, float]:
    """Monte Carlo over codebooks drawn from an enumerable input space.

    Each trial draws M codewords i.i.d. from ``weights``, places the
    transmitted word (``true_index`` into ``values``) at a uniform message
    position, and decodes.  Returns (error frequency, binomial sigma).
    """
    v = _quantize(values)
    p = np.asarray(weights, dtype=float)
    p = p / p.sum()
    rng = rand.generator()
    errors = 0
    done = 0
    thr = _quantize(rate) if rate is not None else None
    while done < trials:
        b = min(batch, trials - done)
        book = rng.choice(len(v), size=(b, M), p=p)
        msg = rng.integers(0, M, size=b)
        book[np.arange(b), msg] = true_index
        scores = v[book]
        if decoder == "randomized_tie":
            above = scores >= thr
            n_above = above.sum(axis=1)
            # uniform choice among words above threshold; argmax when none
            key = np.where(above, rng.random((b, M)), -1.0)
            pick = np.where(n_above > 0, np.argmax(key, axis=1), np.argmax(scores, axis=1))
        else:
            pick = np.argmax(scores, axis=1)
        errors += int(np.sum(pick != msg))
        done += b
    freq = errors / trials
    return freq, math.sqrt(max(freq * (1 - freq), 0.0) / trials)


def enumerate_metric(metric: Callable[[Any, Any], float], prior: Prior, y: Any) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All input sequences, their metric against y and their prior masses."""
    ys = as_symbols(y)
    seqs = all_sequences(prior.alphabet.size, len(ys))
    vals = np.array([metric(s, ys) for s in seqs])
    lq = np.array([float(np.sum(prior.letter_log_mass(s))) for s in seqs])
    return seqs, vals, np.exp2(lq)


def goodput(values: np.ndarray, weights: np.ndarray, ref: float, M: int, n: int, rate: float | None = None,
            decoder: str = "max_metric") -> float:
    """(1 - P_e) * log2(M) / n for the word whose metric is ``ref``."""
    if M <= 1:
        return 0.0
    pe = fixed_error_exact(values, weights, ref, M, rate, decoder)
    return (1.0 - pe) * math.log2(M) / n


# --------------------------------------------------------------------------
# sequential metrics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DecodingMetric:
    """A sequential decoding metric with the constants the threshold needs.

    ``trace(x, y, j)`` returns log2 psi(x^k, y^k, j) for k = j+1 .. len(x);
    x and y hold the whole history.  ``log_L(m)`` is log2 of the CCDF
    constant for blocks of length m; ``b0`` the shortest block for which that
    bound holds; ``f0`` the summability slack per symbol outside segments.
    ``noise_profile(x_hist, y_hist)`` is optional and returns a function
    (m, w) -> segment log-metric of a competitor that disagrees with y in w of
    m positions; only meaningful for binary uniform input.
    """

    name: str
    trace: Callable[[np.ndarray, np.ndarray, int], np.ndarray]
    log_L: Callable[[int], float] | None
    b0: int = 0
    f0: float = 0.0
    r_max: float = 1.0
    size: int = 2
    prior: Prior | None = None
    noise_profile: Callable[[np.ndarray, np.ndarray], Callable[[np.ndarray, np.ndarray], np.ndarray]] | None = None

    def __call__(self, x: Any, y: Any, j: int = 0, k: int | None = None) -> float:
        xs, ys = as_symbols(x), as_symbols(y)
        k = len(xs) if k is None else k
        if k <= j:
            return 0.0
        return float(self.trace(xs[:k], ys[:k], j)[-1])


def _causal_trace(model: ConditionalModel, prior: Prior) -> Callable[[np.ndarray, np.ndarray, int], np.ndarray]:
    D = model.delay

    def trace(x: np.ndarray, y: np.ndarray, j: int) -> np.ndarray:
        k_max = len(x)
        lp = model.letter_log_probs(x, y)
        lq = prior.letter_log_mass(x)
        cp = np.concatenate([[0.0], np.cumsum(lp)])
        cq = np.concatenate([[0.0], np.cumsum(lq)])
        ks = np.arange(j + 1, k_max + 1)
        # P term covers letters j+1-D .. k-D (1-based), clamped to the block
        lo = max(j - D, 0)
        hi = np.clip(ks - D, lo, k_max)
        with np.errstate(invalid="ignore"):
            return (cp[hi] - cp[lo]) - (cq[ks] - cq[j])

    return trace


def causal_metric(model: ConditionalModel, prior: Prior, x: Any = None, y: Any = None, j: int = 0,
                  k: int | None = None) -> DecodingMetric | float:
    """Ratio of a D-causal conditional law to the prior on the current block.

    Without (x, y) this returns the metric object; with them, the log-metric.
    """
    if not prior.alphabet.is_finite:
        raise InvalidParameter("causal metric needs a finite alphabet")
    size = prior.alphabet.size
    D = model.delay
    metric = DecodingMetric(
        name=f"causal-{model.family}",
        trace=_causal_trace(model, prior),
        log_L=lambda m: D * math.log2(size),
        b0=0,
        f0=math.log2(1.0 / prior.q_min),
        r_max=math.log2(1.0 / prior.q_min),
        size=size,
        prior=prior,
        noise_profile=_bsc_profile(model) if model.family == "memoryless" and _is_uniform_binary(prior) else None,
    )
    if x is None:
        return metric
    return metric(x, y, j, k)


def _is_uniform_binary(prior: Prior) -> bool:
    return prior.kind == "iid" and prior.alphabet.size == 2 and np.allclose(prior.mass, 0.5)


def _bsc_profile(model: ConditionalModel):
    # a memoryless P(x|y) that only depends on whether x = y
    lp = model.letter_log_probs(np.array([0, 1, 0, 1]), np.array([0, 1, 1, 0]))
    if not (np.isclose(lp[0], lp[1]) and np.isclose(lp[2], lp[3])):
        return None
    agree, disagree = float(lp[0]), float(lp[2])

    def profile(x_hist: np.ndarray, y_hist: np.ndarray):
        def f(m: np.ndarray, w: np.ndarray) -> np.ndarray:
            with np.errstate(invalid="ignore"):
                return m + (m - w) * agree + np.where(w > 0, w * disagree, 0.0)

        return f

    return profile


def _kt_modulo_profile(x_hist: np.ndarray, y_hist: np.ndarray):
    z = (np.asarray(y_hist) - np.asarray(x_hist)) % 2
    c1 = float(np.sum(z))
    c0 = float(len(z)) - c1
    base = gammaln(c0 + 0.5) + gammaln(c1 + 0.5) - gammaln(c0 + c1 + 1.0)

    def f(m: np.ndarray, w: np.ndarray) -> np.ndarray:
        ln_p = gammaln(c0 + 0.5 + m - w) + gammaln(c1 + 0.5 + w) - gammaln(c0 + c1 + 1.0 + m) - base
        return m + ln_p / LN2

    return f


def mixture_metric(prior: Prior, x: Any = None, y: Any = None, j: int = 0, k: int | None = None, *,
                   modulo: bool = False, state_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
                   num_states: int | None = None) -> DecodingMetric | float:
    """Causal metric with the sequential add-1/2 mixture in place of P.

    ``modulo`` models the noise y - x; ``state_fn(x, y)`` supplies per-letter
    states (they may read x strictly before i and y up to i).
    """
    size = prior.alphabet.size
    model = kt_model(size, modulo=modulo, state_fn=state_fn)
    base = causal_metric(model, prior)
    profile = _kt_modulo_profile if (modulo and state_fn is None and _is_uniform_binary(prior)) else None
    metric = DecodingMetric(
        name="mixture-modulo" if modulo else "mixture",
        trace=base.trace,
        log_L=lambda m: 0.0,
        b0=0,
        f0=base.f0,
        r_max=math.log2(size) if modulo else base.r_max,
        size=size,
        prior=prior,
        noise_profile=profile,
    )
    if x is None:
        return metric
    return metric(x, y, j, k)


def compression_metric(kind: str = "modulo", size: int = 2, x: Any = None, y: Any = None, j: int = 0,
                       k: int | None = None, *, size_y: int | None = None, n: int | None = None) -> DecodingMetric | float:
    """(k - j) log2|X| minus the growth of the terminated code length.

    ``kind`` is "modulo" (LZ78 on y - x), "conditional" (conditional LZ of x
    given y) or "plain" (LZ78 on x).  The CCDF constant is 2^{Delta*} with
    Delta* the coder's bound on terminated minus unterminated length at
    horizon ``n`` (taken from the data when not given).
    """
    size_y = size_y or size
    if kind not in ("modulo", "conditional", "plain"):
        raise InvalidParameter(f"unknown coder {kind!r}")

    def lengths(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        if kind == "modulo":
            return compress.lz78_length_trace((ys - xs) % size, size)[1]
        if kind == "plain":
            return compress.lz78_length_trace(xs, size)[1]
        return compress.conditional_lz_length_trace(xs, ys, size, size_y)[1]

    def trace(xs: np.ndarray, ys: np.ndarray, jj: int) -> np.ndarray:
        lt = np.asarray(lengths(np.asarray(xs), np.asarray(ys)), dtype=float)
        m = np.arange(1, len(xs) - jj + 1)
        return m * math.log2(size) - (lt[jj + 1 :] - lt[jj])

    def log_L(m: int, _n: int | None = n) -> float:
        horizon = _n if _n is not None else m
        if kind == "conditional":
            return float(compress.conditional_lz_termination_bound(horizon))
        return float(compress.lz78_termination_bound(horizon))

    prior = Prior.uniform(size)
    metric = DecodingMetric(f"compression-{kind}", trace, log_L, 0, math.log2(size), math.log2(size), size, prior)
    if x is None:
        return metric
    return metric(x, y, j, k)


# --------------------------------------------------------------------------
# thresholds and block size
# --------------------------------------------------------------------------


def adaptive_threshold(log_L: float, n: int, K: int, d_fb: int, eps: float, m: int | None = None,
                       b0: int = 0) -> float:
    """log2 of the decoding threshold n * L * 2^K / (d_FB * eps); +inf for m <= b0."""
    if m is not None and m <= b0:
        return math.inf
    if n <= 0 or d_fb <= 0 or not eps > 0:
        raise InvalidParameter("n, d_FB and eps must be positive")
    return math.log2(n) + log_L + K - math.log2(d_fb * eps)


def ab_bound(a: float, b: float) -> int:
    """K* = ceil(sqrt(a / b)), which keeps a/K + b*K within 3 sqrt(ab) when b <= a."""
    if a <= 0 or b <= 0:
        raise InvalidParameter("a and b must be positive")
    return max(1, math.ceil(math.sqrt(a / b)))


def choose_block_bits(metric: DecodingMetric, n: int, eps: float, d_fb: int = 1) -> int:
    """Block size balancing the per-block overhead against the unfinished last block."""
    if metric.log_L is None:
        raise InvalidParameter("metric lacks its CCDF constant")
    fp = theorem_framework_params(metric.log_L(n), metric.b0, metric.f0, metric.r_max, n, 1, d_fb, eps)
    return ab_bound(metric.r_max * (fp.c_n + fp.b1 * metric.f0), 1.0 / n)


def framework_for(metric: DecodingMetric, n: int, K: int, d_fb: int, eps: float) -> FrameworkParams:
    if metric.log_L is None:
        raise InvalidParameter("metric lacks its CCDF constant")
    return theorem_framework_params(metric.log_L(n), metric.b0, metric.f0, metric.r_max, n, K, d_fb, eps)


# --------------------------------------------------------------------------
# adaptive scheme
# --------------------------------------------------------------------------


@dataclass
class AdaptiveSession:
    """Parameters of one run of the iterated rateless scheme.

    ``mode`` is "explicit", "implicit" or "auto" (implicit when K is too large
    for an explicit codebook and the metric offers a noise profile).
    """

    n: int
    K: int
    d_fb: int
    eps: float
    metric: DecodingMetric
    mode: str = "auto"
    horizon: int | None = None  # n used in the threshold; defaults to n

    def __post_init__(self):
        if self.n < 1 or self.K < 1 or self.d_fb < 1 or not 0 < self.eps < 1:
            raise InvalidParameter("need n, K, d_FB >= 1 and 0 < eps < 1")
        if self.mode not in ("auto", "explicit", "implicit"):
            raise InvalidParameter(f"unknown mode {self.mode!r}")

    def resolved_mode(self) -> str:
        if self.mode != "auto":
            return self.mode
        if self.K <= EXPLICIT_K_LIMIT:
            return "explicit"
        if self.metric.noise_profile is not None:
            return "implicit"
        raise ResourceLimit("K too large for an explicit codebook and the metric has no noise profile")

    def log_threshold(self, m: int) -> float:
        if self.metric.log_L is None:
            raise InvalidParameter("metric lacks its CCDF constant")
        return adaptive_threshold(self.metric.log_L(m), self.horizon or self.n, self.K, self.d_fb,
                                  self.eps, m, self.metric.b0)


@dataclass
class Transcript:
    seed: int
    n: int
    K: int
    R_emp: float
    R_act: float
    B: int
    error: bool
    block_ends: list[int]
    decoded_blocks: int
    mode: str
    sent_bits: list[int] | None = None
    decoded_bits: list[int] | None = None
    x: np.ndarray | None = field(default=None, repr=False)
    y: np.ndarray | None = field(default=None, repr=False)
    x_decoder: np.ndarray | None = field(default=None, repr=False)

    def prefix_correct(self) -> bool:
        if self.sent_bits is None or self.decoded_bits is None:
            return not self.error
        return self.decoded_bits == self.sent_bits[: len(self.decoded_bits)]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n": self.n,
            "K": self.K,
            "R_emp": self.R_emp,
            "R_act": self.R_act,
            "B": self.B,
            "error": self.error,
            "block_ends": list(self.block_ends),
            "mode": self.mode,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True)


def _jsonable(v: Any) -> Any:
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, dict):
        return {k: _jsonable(u) for k, u in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(u) for u in v]
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    return v


class _Link:
    """Forward channel driven symbol by symbol from a fixed noise realization."""

    def __init__(self, channel: Channel, n: int, size: int, rand: SharedRandomness):
        self.channel = channel
        self.n = n
        self.size = size
        self.rand = rand
        self.x = np.zeros(n, dtype=np.int64)

    def outputs(self) -> np.ndarray:
        # outputs at i depend on x up to i and the noise at i only, so
        # re-running over the full buffer keeps earlier outputs unchanged
        from .core import Alphabet

        seq = SymbolSequence(Alphabet.finite(self.size), self.x.copy())
        return np.asarray(apply_channel(self.channel, seq, self.rand).data, dtype=np.int64)


def _bits_to_index(bits: Sequence[int]) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


def _index_to_bits(v: int, K: int) -> list[int]:
    return [(v >> (K - 1 - i)) & 1 for i in range(K)]


def _decision_mask(j: int, m_max: int, d_fb: int, b0: int) -> np.ndarray:
    ks = np.arange(j + 1, j + m_max + 1)
    m = ks - j
    return ((ks - 1) % d_fb == 0) & (m > b0)


def run_adaptive(session: AdaptiveSession, channel: Channel, rand: SharedRandomness,
                 message_bits: Callable[[int, int], list[int]] | None = None, start: int = 0,
                 history: tuple[np.ndarray, np.ndarray] | None = None,
                 channel_rand: SharedRandomness | None = None) -> Transcript:
    """Run the scheme over symbols start+1 .. start+n.

    ``message_bits(block, K)`` supplies the bits of each block (pseudorandom
    by default).  ``history`` = (x, x_decoder) of the first ``start`` symbols
    is used by the infinite-horizon wrapper, which also passes one
    ``channel_rand`` for all epochs so the noise realization stays fixed.
    """
    metric = session.metric
    if metric.log_L is None:
        raise InvalidParameter("metric lacks its CCDF constant; no threshold is derivable")
    prior = metric.prior
    if prior is None or prior.kind != "iid":
        raise InvalidParameter("adaptive simulation needs an i.i.d. finite prior")
    mode = session.resolved_mode()
    if mode == "implicit" and (metric.noise_profile is None or not _is_uniform_binary(prior)):
        raise InvalidParameter("implicit mode needs binary uniform input and a noise profile")
    if mode == "explicit" and session.K > EXPLICIT_K_LIMIT:
        raise ResourceLimit(f"K={session.K} too large for an explicit codebook")

    size = prior.alphabet.size
    total = start + session.n
    link = _Link(channel, total, size, channel_rand or rand.derive("channel"))
    x_dec = np.zeros(total, dtype=np.int64)
    if history is not None:
        hx, hd = history
        link.x[:start] = hx[:start]
        x_dec[:start] = hd[:start]
    if message_bits is None:
        def message_bits(b: int, K: int) -> list[int]:
            return rand.derive(f"message/{b}").generator().integers(0, 2, size=K).tolist()

    K = session.K
    d_fb = session.d_fb
    thr_cache: dict[int, float] = {}

    def thr(m: int) -> float:
        if m not in thr_cache:
            thr_cache[m] = session.log_threshold(m)
        return thr_cache[m]

    j = start
    block = 0
    decoded = 0
    error = False
    block_ends: list[int] = []
    sent: list[int] = []
    got: list[int] = []
    while j < total:
        m_max = total - j
        brand = rand.derive(f"block/{block}")
        decide = _decision_mask(j - start, m_max, d_fb, metric.b0)
        thresholds = np.array([thr(m) if decide[m - 1] else math.inf for m in range(1, m_max + 1)])
        if mode == "explicit":
            bits = list(message_bits(block, K))
            res = _explicit_block(metric, prior, link, x_dec, j, m_max, thresholds, bits, brand)
        else:
            bits = None
            res = _implicit_block(metric, link, x_dec, j, m_max, thresholds, K, brand)
        k, wrong, dec_bits = res
        if k is None:
            break
        decoded += 1
        block_ends.append(k)
        if bits is not None:
            sent.extend(bits)
            got.extend(dec_bits)
        error = error or wrong
        # symbols between the decision and the next block come from a shared
        # pseudorandom stream, so the decoder knows them
        j_next = min(k + d_fb - 1, total)
        if j_next > k:
            gap = brand.derive("gap").generator().choice(size, size=j_next - k, p=prior.mass)
            link.x[k:j_next] = gap
            x_dec[k:j_next] = gap
        j = j_next
        block += 1

    y = link.outputs()
    lp = metric.trace(link.x[:total], y[:total], start)
    r_emp = float(lp[-1]) / session.n if len(lp) else 0.0
    started = decoded + (1 if j < total else 0)
    return Transcript(
        seed=int(rand.master_seed),
        n=session.n,
        K=K,
        R_emp=r_emp,
        R_act=K * decoded / session.n,
        B=started,
        error=bool(error),
        block_ends=block_ends,
        decoded_blocks=decoded,
        mode=mode,
        sent_bits=sent if mode == "explicit" else None,
        decoded_bits=got if mode == "explicit" else None,
        x=link.x.copy(),
        y=y,
        x_decoder=x_dec,
    )


def _explicit_block(metric: DecodingMetric, prior: Prior, link: _Link, x_dec: np.ndarray, j: int, m_max: int,
                    thresholds: np.ndarray, bits: list[int], brand: SharedRandomness):
    K = len(bits)
    M = 2**K
    book = brand.derive("codebook").generator().choice(prior.alphabet.size, size=(M, m_max), p=prior.mass)
    msg = _bits_to_index(bits)
    link.x[j:] = book[msg]
    y = link.outputs()
    buf = x_dec[: j + m_max].copy()
    first = np.full(M, np.iinfo(np.int64).max)
    final = np.empty(M)
    for c in range(M):
        buf[j:] = book[c]
        tr = metric.trace(buf, y[: j + m_max], j)
        final[c] = tr[-1]
        hit = np.flatnonzero(tr >= thresholds)
        if len(hit):
            first[c] = hit[0]
    if first.min() == np.iinfo(np.int64).max:
        # unfinished block: the decoder keeps its best guess as history for later epochs
        x_dec[j : j + m_max] = book[int(np.argmax(final))]
        return None, False, []
    t = int(first.min())
    winner = int(np.flatnonzero(first == t)[0])  # lowest index among the earliest
    k = j + t + 1
    x_dec[j:k] = book[winner][: t + 1]
    return k, winner != msg, _index_to_bits(winner, K)


@dataclass(frozen=True)
class CrossingMasses:
    """Per-competitor crossing probabilities in one block (log2 masses).

    ``before[i]`` is the log2 mass of crossing exactly at block length
    ``steps[i]`` for crossings before the true word's own crossing;
    ``at_true`` the log2 mass of crossing at that same time.
    """

    log_before: float
    log_at_true: float
    steps: list[int]
    weights: list[np.ndarray]


def _log2_binom_pmf(m: int) -> np.ndarray:
    w = np.arange(m + 1)
    return (gammaln(m + 1) - gammaln(w + 1) - gammaln(m - w + 1)) / LN2 - m


def competitor_crossings(profile: Callable[[np.ndarray, np.ndarray], np.ndarray], thresholds: np.ndarray,
                         horizon: int, true_time: int | None) -> CrossingMasses:
    """Crossing masses of one uniform random competitor by dynamic programming.

    The competitor's disagreement count with y after m symbols is a symmetric
    random walk; the state carries the log2 mass of paths that have not yet
    crossed.  Block lengths with thresholds above m are skipped, since a
    metric bounded by the prior ratio cannot exceed m there.
    """
    ms = np.arange(1, horizon + 1)
    reachable = np.flatnonzero(ms >= thresholds[:horizon])
    if len(reachable) == 0:
        return CrossingMasses(-math.inf, -math.inf, [], [])
    m0 = int(reachable[0]) + 1
    state = _log2_binom_pmf(m0 - 1)
    steps: list[int] = []
    weights: list[np.ndarray] = []
    before = []
    at_true = -math.inf
    for m in range(m0, horizon + 1):
        nxt = np.full(m + 1, -np.inf)
        nxt[:m] = state
        nxt[1:] = np.logaddexp2(nxt[1:], state)
        nxt -= 1.0
        if math.isfinite(thresholds[m - 1]) and m >= thresholds[m - 1]:
            w = np.arange(m + 1)
            cross = profile(np.full(m + 1, float(m)), w.astype(float)) >= thresholds[m - 1]
            if np.any(cross):
                masses = np.where(cross, nxt, -np.inf)
                tot = float(np.logaddexp2.reduce(masses[cross]))
                if true_time is not None and m == true_time:
                    at_true = tot
                else:
                    before.append(tot)
                steps.append(m)
                weights.append(masses)
                nxt[cross] = -np.inf
        state = nxt
    log_before = float(np.logaddexp2.reduce(before)) if before else -math.inf
    return CrossingMasses(log_before, at_true, steps, weights)


def _scaled_neg_log1m(log2p: float, log2scale: float) -> float:
    """2^log2scale * -ln(1 - 2^log2p), without underflow for tiny p."""
    if log2p == -math.inf:
        return 0.0
    if log2p >= 0.0:
        return math.inf
    if log2p < -20.0:
        p = 2.0**log2p
        return 2.0 ** min(log2scale + log2p, 1000.0) * (1.0 + p / 2.0)
    return 2.0 ** min(log2scale, 1000.0) * -math.log1p(-(2.0**log2p))


def block_error_probability(log_before: float, log_at_true: float, K: int, true_crossed: bool) -> float:
    """Probability that one of N = 2^K - 1 competitors wins the block.

    F (log2 ``log_before``) is a competitor's chance of crossing before the
    true word, g (log2 ``log_at_true``) of crossing at the same time.  Earlier
    crossings always win; simultaneous ones only with a lower index, averaged
    over a uniform message index:
    P(correct) = (1/(N+1)) sum_{i=0}^{N} (1-F-g)^i (1-F)^{N-i}.
    """
    log2N = K + math.log2(-math.expm1(-K * LN2))
    a_n = _scaled_neg_log1m(log_before, log2N)  # -N ln(1 - F)
    if not true_crossed or log_at_true == -math.inf:
        return float(-math.expm1(-a_n))
    log_one_minus_f = -_scaled_neg_log1m(log_before, 0.0) / LN2
    log_ratio = log_at_true - log_one_minus_f  # log2 of g / (1 - F)
    if log_ratio >= 0.0:
        mean_tie = 2.0**-K  # only index 0 survives the tie
    else:
        g_n = _scaled_neg_log1m(log_ratio, K)  # -(N+1) ln(1 - g/(1-F))
        denom = 2.0 ** min(K + log_ratio, 1000.0)
        mean_tie = -math.expm1(-g_n) / denom if g_n > 0 else 1.0
    p_ok = math.exp(-a_n) * min(mean_tie, 1.0)
    return min(1.0, max(0.0, 1.0 - p_ok))


def _implicit_block(metric: DecodingMetric, link: _Link, x_dec: np.ndarray, j: int, m_max: int,
                    thresholds: np.ndarray, K: int, brand: SharedRandomness):
    rng = brand.generator()
    seg = rng.integers(0, 2, size=m_max)
    link.x[j:] = seg
    y = link.outputs()
    buf = x_dec[: j + m_max].copy()
    buf[j:] = seg
    tr = metric.trace(buf, y[: j + m_max], j)
    hit = np.flatnonzero(tr >= thresholds)
    true_time = int(hit[0]) + 1 if len(hit) else None
    horizon = true_time if true_time is not None else m_max
    profile = metric.noise_profile(x_dec[:j], y[:j])
    cm = competitor_crossings(profile, thresholds, horizon, true_time)
    p_err = block_error_probability(cm.log_before, cm.log_at_true, K, true_time is not None)
    if rng.random() < p_err:
        m, w = _sample_crossing(cm, true_time, rng)
        z = np.zeros(m, dtype=np.int64)
        z[rng.choice(m, size=w, replace=False)] = 1
        k = j + m
        x_dec[j:k] = (y[j:k] - z) % 2
        return k, True, []
    if true_time is None:
        # unfinished block: take the transmitted word as the decoder's best guess
        x_dec[j : j + m_max] = seg
        return None, False, []
    k = j + true_time
    x_dec[j:k] = seg[:true_time]
    return k, False, []


def _sample_crossing(cm: CrossingMasses, true_time: int | None, rng: np.random.Generator) -> tuple[int, int]:
    # the earliest crossing decides; for rare events its time is proportional
    # to the per-competitor masses, with half weight on ties at the true time
    tot = []
    for m, wv in zip(cm.steps, cm.weights):
        t = float(np.logaddexp2.reduce(wv[np.isfinite(wv)]))
        tot.append(t - 1.0 if m == true_time else t)
    tot_arr = np.asarray(tot)
    pr = np.exp2(tot_arr - tot_arr.max())
    idx = int(rng.choice(len(pr), p=pr / pr.sum()))
    wv = cm.weights[idx]
    fin = np.isfinite(wv)
    pw = np.where(fin, np.exp2(np.where(fin, wv, 0.0) - np.max(wv[fin])), 0.0)
    return cm.steps[idx], int(rng.choice(len(pw), p=pw / pw.sum()))


# --------------------------------------------------------------------------
# infinite horizon
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochSchedule:
    """Epochs of doubling length with error budgets eps / (2 i^2).

    Epoch 1 holds symbols 1..3 and epoch i >= 2 holds 2^i symbols, so epoch i
    ends at 2^{i+1} - 1.
    """

    eps: float
    metric: DecodingMetric
    d_fb: int = 1

    def end(self, i: int) -> int:
        return 2 ** (i + 1) - 1

    def length(self, i: int) -> int:
        return self.end(i) - (self.end(i - 1) if i > 1 else 0)

    def eps_i(self, i: int) -> float:
        return self.eps / (2.0 * i * i)

    def K_i(self, i: int) -> int:
        return choose_block_bits(self.metric, self.length(i), self.eps_i(i), self.d_fb)

    def epochs(self) -> Iterator[int]:
        i = 1
        while True:
            yield i
            i += 1


def doubling_delta(n: int, log_L_n: float, eps: float, d_fb: int, f0: float, r_max: float, b1: float = 1.0) -> float:
    """Closed-form bound on the rate loss of the doubling wrapper at time n."""
    lg = math.log2(n)
    inner = (math.log2(n) + log_L_n + 2 * math.log2(max(lg, 1.0)) - math.log2(2 * eps * d_fb) + b1 * f0) * r_max
    return (lg + 2 * math.sqrt(max(inner, 0.0)) * math.sqrt(n) / (math.sqrt(2) - 1)) / n


def doubling_delta_sum(n: int, log_L: Callable[[int], float] | float, eps: float, d_fb: int, f0: float,
                       r_max: float, b1: float = 1.0) -> float:
    """Rate loss of the doubling wrapper at time n as the per-epoch sum, before any relaxation.

    Epoch i contributes 2 sqrt(h_i (log2(h_i L_{h_i} / (d eps_i)) + b1 f0) R_max) + 1 bits.  The closed
    form of ``doubling_delta`` sums sqrt(h_i) as (sqrt2^j - 1)/(sqrt2 - 1), which misses a factor
    sqrt 2, so this sum can exceed it.
    """
    ll = log_L if callable(log_L) else (lambda _h, v=float(log_L): v)
    total = 0.0
    i = 1
    while True:
        h = 2**i
        e_i = eps / (2.0 * i * i)
        k_h = math.log2(h / (d_fb * e_i)) + ll(h) + b1 * f0
        total += 2.0 * math.sqrt(h * max(k_h, 0.0) * r_max) + 1.0
        if 2 ** (i + 1) - 1 >= n:
            return total / n
        i += 1


@dataclass
class EpochRecord:
    epoch: int
    start: int
    end: int
    K: int
    eps: float
    transcript: Transcript
    cumulative_rate: float
    cumulative_R_emp: float


def run_doubling(metric: DecodingMetric, channel: Channel, rand: SharedRandomness, n_obs: int, eps: float,
                 d_fb: int = 1, mode: str = "auto") -> Iterator[EpochRecord]:
    """Run the scheme epoch by epoch up to observation time ``n_obs``.

    Each epoch is designed for its own length and budget; the metric sees the
    entire history.  Yields one record per observed epoch.
    """
    sched = EpochSchedule(eps, metric, d_fb)
    chan = rand.derive("channel")
    hx = np.zeros(n_obs, dtype=np.int64)
    hd = np.zeros(n_obs, dtype=np.int64)
    bits = 0
    start = 0
    for i in sched.epochs():
        if start >= n_obs:
            return
        h = sched.length(i)
        stop = min(start + h, n_obs)
        K = sched.K_i(i)
        sess = AdaptiveSession(stop - start, K, d_fb, sched.eps_i(i), metric, mode, horizon=h)
        tr = run_adaptive(sess, channel, rand.derive(f"epoch/{i}"), start=start, history=(hx, hd),
                          channel_rand=chan)
        hx[:stop] = tr.x[:stop]
        hd[:stop] = tr.x_decoder[:stop]
        bits += tr.decoded_blocks * K
        y = tr.y[:stop]
        r_emp = metric(hx[:stop], y, 0) / stop
        yield EpochRecord(i, start, stop, K, sched.eps_i(i), tr, bits / stop, r_emp)
        start = stop

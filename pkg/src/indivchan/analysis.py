"""Estimators and calculators for redundancy, Chernoff constants, regret and converse bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy.special import gammaln
from scipy.stats import binomtest, norm

from . import empirics
from .core import InvalidInput, InvalidParameter, OverheadReport, Prior, ResourceLimit, SharedRandomness, sample_prior

LOG2E = math.log2(math.e)
GUARD = 10**7


def _all_seqs(size: int, n: int, guard: int) -> np.ndarray:
    if size**n > guard:
        raise ResourceLimit(f"{size}^{n} sequences exceed guard {guard}")
    return np.asarray(list(product(range(size), repeat=n)), dtype=np.int64).reshape(-1, n)


def _seq_log_mass(prior: Prior, seqs: np.ndarray) -> np.ndarray:
    return np.array([float(np.sum(prior.letter_log_mass(s))) for s in seqs])


def wilson_interval(k: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    ci = binomtest(int(k), int(trials)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


# --------------------------------------------------------------------------
# intrinsic redundancy
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RedundancyResult:
    value: float
    y: np.ndarray | None
    R: float
    method: str
    ci: tuple[float, float] | None = None
    lower_bound: bool = False


def _tail_sup(values: np.ndarray, weights: np.ndarray, n: int) -> tuple[float, float]:
    """sup_R (1/n) log2 Q{v >= R} + R over a step CCDF; returns (value, argmax R).

    Between achieved values the CCDF is flat, so the sup sits at an achieved value.
    """
    ok = np.isfinite(values) & (weights > 0)
    if not np.any(ok):
        return -math.inf, math.nan
    v = values[ok]
    w = weights[ok]
    order = np.argsort(-v, kind="stable")
    v, w = v[order], w[order]
    tail = np.cumsum(w)
    # keep the last index of each run of equal values
    last = np.r_[v[1:] != v[:-1], True]
    vals = np.log2(tail[last]) / n + v[last]
    i = int(np.argmax(vals))
    return float(vals[i]), float(v[last][i])


def intrinsic_redundancy(rate_fn: Callable[[Any, Any], float], prior: Prior, n: int, method: str = "exhaustive",
                         size_y: int | None = None, ys: Iterable[Any] | None = None, trials: int = 2000,
                         rand: SharedRandomness | None = None, guard: int = GUARD) -> RedundancyResult:
    """sup over (y, R) of (1/n) log2 Q{R_emp(X, y) >= R} + R.

    Exhaustive mode enumerates every y and every x.  Monte Carlo mode samples
    x under Q for the supplied (or uniformly sampled) y-set and reports a
    lower bound with a Wilson interval on the maximizing tail probability.
    """
    if not prior.alphabet.is_finite:
        raise InvalidParameter("intrinsic redundancy needs a finite input alphabet")
    size_x = prior.alphabet.size
    size_y = size_y or size_x
    if method == "exhaustive":
        if (size_x * size_y) ** n > guard:
            raise ResourceLimit(f"|X|^n |Y|^n exceeds guard {guard}")
        xs = _all_seqs(size_x, n, guard)
        w = np.exp2(_seq_log_mass(prior, xs))
        y_iter = list(ys) if ys is not None else list(_all_seqs(size_y, n, guard))
        best = (-math.inf, None, math.nan)
        for y in y_iter:
            vals = np.array([rate_fn(x, y) for x in xs], dtype=float)
            val, R = _tail_sup(vals, w, n)
            if val > best[0]:
                best = (val, np.asarray(y), R)
        return RedundancyResult(best[0], best[1], best[2], "exhaustive")
    if method == "monte_carlo":
        rand = rand or SharedRandomness(0)
        if ys is None:
            rng = rand.derive("y").generator()
            y_iter = [rng.integers(0, size_y, size=n) for _ in range(16)]
        else:
            y_iter = list(ys)
        best = (-math.inf, None, math.nan, None)
        for yi, y in enumerate(y_iter):
            sample = [sample_prior(prior, n, rand.derive(f"x/{yi}/{t}")).data for t in range(trials)]
            vals = np.array([rate_fn(x, y) for x in sample], dtype=float)
            val, R = _tail_sup(vals, np.full(trials, 1.0 / trials), n)
            if val > best[0]:
                k = int(np.sum(vals >= R))
                lo, hi = wilson_interval(k, trials)
                ci = (math.log2(lo) / n + R if lo > 0 else -math.inf, math.log2(hi) / n + R)
                best = (val, np.asarray(y), R, ci)
        return RedundancyResult(best[0], best[1], best[2], "monte_carlo", best[3], True)
    raise InvalidParameter(f"unknown method {method!r}")


def exceed_tail(rate_fn: Callable[[Any, Any], float], prior: Prior, y: Any, guard: int = GUARD) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive (values, masses) of R_emp(X, y) under Q."""
    n = len(np.asarray(y))
    xs = _all_seqs(prior.alphabet.size, n, guard)
    return np.array([rate_fn(x, y) for x in xs], dtype=float), np.exp2(_seq_log_mass(prior, xs))


def necessary_condition(rate_fn: Callable[[Any, Any], float], prior: Prior, y: Any, eps: float,
                        guard: int = GUARD) -> tuple[bool, float]:
    """Check Q{R_emp >= R} <= 2^{-nR} / (1 - eps) at every achieved R.

    Returns (holds, worst value of (1 - eps) Q{R_emp >= R} 2^{nR}).
    """
    n = len(np.asarray(y))
    vals, w = exceed_tail(rate_fn, prior, y, guard)
    val, _ = _tail_sup(vals, w, n)
    worst = (1.0 - eps) * 2.0 ** (n * val) if math.isfinite(val) else 0.0
    return bool(worst <= 1.0 + 1e-12), float(worst)


def achievability_gap(eps: float) -> float:
    """Bits lost by requiring error eps: log2((1 - eps) / eps)."""
    if not 0 < eps < 1:
        raise InvalidParameter("eps must lie in (0, 1)")
    return math.log2((1.0 - eps) / eps)


# --------------------------------------------------------------------------
# Chernoff constant
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ChernoffResult:
    L: float
    mu_bound: float  # (1/n) log2 L, an upper bound on mu_Q of F_n[R_emp]
    method: str
    ci: tuple[float, float] | None = None


def chernoff_L(rate_fn: Callable[[Any, Any], float], F: Callable[[float], float], prior: Prior, y: Any,
               n: int | None = None, method: str = "exhaustive", trials: int = 10000,
               rand: SharedRandomness | None = None, guard: int = GUARD) -> ChernoffResult:
    """E_Q[2^{n F(R_emp(X, y))}]."""
    ys = np.asarray(y)
    n = n or len(ys)
    if method == "exhaustive":
        vals, w = exceed_tail(rate_fn, prior, ys, guard)
        f = np.array([F(v) for v in vals], dtype=float)
        with np.errstate(over="ignore"):
            L = float(np.sum(w * np.exp2(n * f)))
        return ChernoffResult(L, math.log2(L) / n if L > 0 else -math.inf, "exhaustive")
    if method == "monte_carlo":
        rand = rand or SharedRandomness(0)
        terms = np.array([2.0 ** (n * F(rate_fn(sample_prior(prior, n, rand.derive(f"x/{t}")).data, ys)))
                          for t in range(trials)])
        mean = float(np.mean(terms))
        half = float(norm.ppf(0.975) * np.std(terms, ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf
        return ChernoffResult(mean, math.log2(mean) / n if mean > 0 else -math.inf, "monte_carlo",
                              (mean - half, mean + half))
    raise InvalidParameter(f"unknown method {method!r}")


# --------------------------------------------------------------------------
# NML and mixture regret
# --------------------------------------------------------------------------


def _compositions(m: int, parts: int) -> Iterable[tuple[int, ...]]:
    if parts == 1:
        yield (m,)
        return
    for k in range(m + 1):
        for rest in _compositions(m - k, parts - 1):
            yield (k,) + rest


def _log2_shtarkov_sum(m: int, size: int) -> float:
    """log2 sum over x in X^m of the memoryless ML probability, by types."""
    if m == 0:
        return 0.0
    terms = []
    for comp in _compositions(m, size):
        c = np.asarray(comp, dtype=float)
        nz = c[c > 0]
        log_mult = (gammaln(m + 1) - np.sum(gammaln(c + 1))) / math.log(2)
        terms.append(log_mult + float(np.sum(nz * np.log2(nz / m))))
    return float(np.logaddexp2.reduce(terms))


def nml_constant(size: int, n: int, z: Any = None, method: str = "types", guard: int = GUARD) -> float:
    """log2 c_NML = log2 sum_x p_ML(x | z) for conditionally memoryless laws."""
    zs = np.zeros(n, dtype=np.int64) if z is None else np.asarray(z, dtype=np.int64)
    if len(zs) != n:
        raise InvalidInput("context length differs from n")
    if method == "types":
        return float(sum(_log2_shtarkov_sum(int(c), size) for c in np.bincount(zs)))
    if method == "exhaustive":
        xs = _all_seqs(size, n, guard)
        vals = [empirics.empirical_probability(x, zs) for x in xs]
        return float(np.logaddexp2.reduce(vals))
    raise InvalidParameter(f"unknown method {method!r}")


def dirichlet_constant(size_x: int) -> float:
    """log2(Gamma(1/2)^|X| / Gamma(|X|/2))."""
    return (size_x * gammaln(0.5) - gammaln(size_x / 2.0)) / math.log(2)


def dirichlet_regret_bound(size_x: int, size_z: int, n: int) -> float:
    """Worst-case regret bound of the per-context add-1/2 mixture, in bits."""
    if size_x < 2 or size_z < 1 or n < 1:
        raise InvalidParameter("need |X| >= 2, |Z| >= 1, n >= 1")
    per = ((size_x - 1) / 2.0 * math.log2(n / (2 * math.pi * size_z)) + dirichlet_constant(size_x)
           + size_x / 2.0 * LOG2E + size_x**2 * LOG2E / (4.0 * n))
    return size_z * per


def mixture_regret(x: Any, z: Any, size_x: int, num_states: int | None = None) -> float:
    """log2 p_ML(x|z) - log2 P_w(x|z) for the per-context add-1/2 mixture."""
    from .ratefn import kt_letter_log_probs

    xs = np.asarray(x, dtype=np.int64)
    zs = np.zeros(len(xs), dtype=np.int64) if z is None else np.asarray(z, dtype=np.int64)
    pw = float(np.sum(kt_letter_log_probs(xs, zs, size_x, num_states)))
    return empirics.empirical_probability(xs, zs) - pw


# --------------------------------------------------------------------------
# theorem constants
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FrameworkParams:
    c_n: float
    b1: int
    f0: float | Callable[[float], float]
    r_max: float
    n: int
    K: int
    delta_n: float

    def f0_at(self, t: float) -> float:
        return float(self.f0(t)) if callable(self.f0) else float(self.f0)

    def F(self, t: float) -> float:
        """Rate guaranteed on error-free runs whose empirical rate is t."""
        return t / (1.0 + (self.c_n + self.b1 * self.f0_at(t)) / self.K) - self.K / self.n

    def report(self) -> OverheadReport:
        rep = OverheadReport()
        inputs = {"n": self.n, "K": self.K, "r_max": self.r_max}
        rep.add("c_n", self.c_n, "log2(n L_n / (d_FB eps))", inputs=inputs)
        rep.add("b1", self.b1, "b0 + 2 d_FB - 1", inputs=inputs)
        rep.add("delta_n", self.delta_n, "3 sqrt(R_max (c_n + b1 f0*) / n)", inputs=inputs)
        rep.add("F_n(R_max)", self.F(self.r_max), "R / (1 + (c_n + b1 f0)/K) - K/n", inputs=inputs)
        return rep


def theorem_framework_params(log_L_n: float, b0: int, f0: float | Callable[[float], float], r_max: float,
                             n: int, K: int, d_fb: int, eps: float) -> FrameworkParams:
    """Constants of the adaptive guarantee for a metric with CCDF constant 2^log_L_n."""
    if n <= 0 or K <= 0 or d_fb <= 0 or not eps > 0:
        raise InvalidParameter("n, K, d_FB and eps must be positive")
    c_n = math.log2(n) + log_L_n - math.log2(d_fb * eps)
    b1 = int(b0) + 2 * int(d_fb) - 1
    f0_star = float(f0(r_max)) if callable(f0) else float(f0)
    delta = 3.0 * math.sqrt(max(r_max * (c_n + b1 * f0_star), 0.0) / n)
    return FrameworkParams(c_n, b1, f0, r_max, n, K, delta)


def conditional_form_converse(r_max: float, n: int, eps: float) -> float:
    """Lower bound on the redundancy of any scheme achieving a conditional-form rate."""
    if r_max <= 0 or n <= 1.0 / r_max or not 0 <= eps < 1:
        raise InvalidParameter("need R_max > 0, n > 1/R_max and 0 <= eps < 1")
    return -(math.log2(n) + math.log2(math.e * r_max / (1.0 - eps))) / (n - 1.0 / r_max)


@dataclass(frozen=True)
class ConverseResult:
    delta_L: float
    kraft_sum: float
    feasible: bool


def modadd_converse_lengths(rate_fn: Callable[[np.ndarray], float], n: int, eps: float, size: int = 2,
                            guard: int = GUARD) -> ConverseResult:
    """Turn a noise-only rate function into code lengths and check Kraft.

    Lengths are ceil(n log2|X| - n R(z) + delta_L); feasible when the Kraft
    sum over all z is at most 1.
    """
    if not 0 <= eps < 1:
        raise InvalidParameter("eps must lie in [0, 1)")
    delta_l = math.log2(n * math.e * math.log(size) / (1.0 - eps))
    zs = _all_seqs(size, n, guard)
    lengths = np.array([math.ceil(n * math.log2(size) - n * rate_fn(z) + delta_l - 1e-12) for z in zs], dtype=float)
    kraft = float(np.sum(np.exp2(-lengths)))
    return ConverseResult(delta_l, kraft, kraft <= 1.0 + 1e-12)


def kraft_sum(lengths: Sequence[float]) -> float:
    return float(np.sum(np.exp2(-np.asarray(lengths, dtype=float))))


# --------------------------------------------------------------------------
# finite-state probability assigners
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteStateMachine:
    """Assigns P(x_i | s_i, y_i) and moves to next_state[s_i, x_i, y_i]."""

    next_state: np.ndarray  # (S, |X|, |Y|)
    probs: np.ndarray  # (S, |Y|, |X|)
    initial: int = 0

    def __post_init__(self):
        ns = np.asarray(self.next_state, dtype=np.int64)
        p = np.asarray(self.probs, dtype=float)
        S = ns.shape[0]
        if p.shape[0] != S or p.shape[1] != ns.shape[2] or p.shape[2] != ns.shape[1]:
            raise InvalidParameter("probability and transition tables disagree on sizes")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=2) - 1) > 1e-9):
            raise InvalidParameter("per-state conditional masses must sum to 1")
        if np.any(ns < 0) or np.any(ns >= S):
            raise InvalidParameter("transition to an unknown state")
        object.__setattr__(self, "next_state", ns)
        object.__setattr__(self, "probs", p)

    @property
    def num_states(self) -> int:
        return self.next_state.shape[0]

    def states(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.empty(len(x), dtype=np.int64)
        s = self.initial
        ns = self.next_state
        for i, (a, b) in enumerate(zip(x.tolist(), y.tolist())):
            out[i] = s
            s = ns[s, a, b]
        return out

    def sample_x(self, y: Any, rng: np.random.Generator) -> np.ndarray:
        ys = np.asarray(y, dtype=np.int64)
        x = np.empty(len(ys), dtype=np.int64)
        s = self.initial
        u = rng.random(len(ys))
        for i, b in enumerate(ys.tolist()):
            a = int(np.searchsorted(np.cumsum(self.probs[s, b]), u[i], side="right"))
            a = min(a, self.probs.shape[2] - 1)
            x[i] = a
            s = self.next_state[s, a, b]
        return x


def fsm_probability(machine: FiniteStateMachine, x: Any, y: Any) -> float:
    """log2 of the probability the machine assigns to x given y."""
    xs = np.asarray(x, dtype=np.int64)
    ys = np.asarray(y, dtype=np.int64)
    if len(xs) != len(ys):
        raise InvalidInput("x and y must have equal lengths")
    st = machine.states(xs, ys)
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log2(machine.probs[st, ys, xs])))


def random_fsm(num_states: int, size_x: int, size_y: int, rng: np.random.Generator,
               floor: float = 0.0) -> FiniteStateMachine:
    """Random transitions and Dirichlet(1) masses mixed with a uniform floor."""
    ns = rng.integers(0, num_states, size=(num_states, size_x, size_y))
    p = rng.dirichlet(np.ones(size_x), size=(num_states, size_y))
    p = (1 - floor * size_x) * p + floor
    return FiniteStateMachine(ns, p)


# --------------------------------------------------------------------------
# good-put tail
# --------------------------------------------------------------------------


def goodput_tail_ratio(values: np.ndarray, weights: np.ndarray, n: int) -> float:
    """max over R of Q{R_good >= R} 2^{nR} for one y, given the good-put of every input."""
    val, _ = _tail_sup(np.asarray(values, dtype=float), np.asarray(weights, dtype=float), n)
    return 2.0 ** (n * val) if math.isfinite(val) else 0.0

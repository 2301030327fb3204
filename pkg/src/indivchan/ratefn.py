"""Rate functions R_emp(x, y) in bits/symbol, and the registry the CLI uses.

A rate function may carry a factory for a sequential decoding metric
(see :mod:`indivchan.coding`); entries with one are marked adaptive-capable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Any, Callable, Iterable

import numpy as np

from . import compress, empirics
from .core import InvalidInput, InvalidParameter, Prior, SharedRandomness, as_symbols, prior_log_mass, sample_prior

EXHAUSTIVE_GUARD = 10**7


def _seq(a: Any) -> np.ndarray:
    arr = np.asarray(as_symbols(a), dtype=np.int64)
    if arr.ndim != 1:
        raise InvalidInput("finite-alphabet sequence expected")
    return arr


def _pair(x: Any, y: Any) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = _seq(x), _seq(y)
    if len(xs) != len(ys):
        raise InvalidInput("x and y must have equal lengths")
    return xs, ys


# --------------------------------------------------------------------------
# conditional models
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionalModel:
    """A conditional law P(x|y) given letter by letter.

    ``letter_log_probs(x, y)`` returns log2 P(x_i | x^{i-1}, y^{i+delay}) for
    every i; entry i may only read x[:i+1] and y[:i+1+delay].
    """

    letter_log_probs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    delay: int = 0
    family: str = "custom"
    size_x: int = 2

    def log_prob(self, x: Any, y: Any) -> float:
        xs, ys = _pair(x, y)
        return float(np.sum(self.letter_log_probs(xs, ys)))

    @classmethod
    def memoryless(cls, table: Any) -> "ConditionalModel":
        """P(x_i | y_i) = table[y_i, x_i]."""
        t = np.asarray(table, dtype=float)
        if np.any(np.abs(t.sum(axis=1) - 1) > 1e-9):
            raise InvalidParameter("each row of the table must sum to 1")
        with np.errstate(divide="ignore"):
            lt = np.log2(t)
        return cls(lambda x, y: lt[y, x], 0, "memoryless", t.shape[1])

    @classmethod
    def bsc_posterior(cls, p: float) -> "ConditionalModel":
        return cls.memoryless([[1 - p, p], [p, 1 - p]])

    @classmethod
    def point_mass(cls, size: int = 2) -> "ConditionalModel":
        """x = y with certainty."""
        return cls.memoryless(np.eye(size))

    @classmethod
    def from_prior(cls, prior: Prior) -> "ConditionalModel":
        return cls(lambda x, y: prior.letter_log_mass(x), 0, "prior", prior.alphabet.size)


def markov_states(x: Any, y: Any, order: int, size_x: int, size_y: int) -> tuple[np.ndarray, np.ndarray]:
    """State labels z_x = x_{i-D}^{i-1} and z_y = y_{i-D}^{i+D} at every i.

    Symbols before the start or after the end of the block read as 0.
    """
    xs, ys = _pair(x, y)
    n = len(xs)
    d = order
    xp = np.concatenate([np.zeros(d, dtype=np.int64), xs])
    yp = np.concatenate([np.zeros(d, dtype=np.int64), ys, np.zeros(d, dtype=np.int64)])
    zx = np.zeros(n, dtype=np.int64)
    for lag in range(d, 0, -1):
        zx = zx * size_x + xp[d - lag : d - lag + n]
    zy = np.zeros(n, dtype=np.int64)
    for off in range(-d, d + 1):
        zy = zy * size_y + yp[d + off : d + off + n]
    return zx, zy


def kt_letter_log_probs(symbols: np.ndarray, states: np.ndarray, size: int,
                        num_states: int | None = None) -> np.ndarray:
    """Sequential add-1/2 (Dirichlet-1/2 mixture) log2 probabilities per state."""
    symbols = np.asarray(symbols, dtype=np.int64)
    states = np.asarray(states, dtype=np.int64)
    n = len(symbols)
    if n == 0:
        return np.zeros(0)
    num_states = num_states or int(states.max()) + 1
    cells = num_states * size
    if cells * n <= 2**24:
        key = states * size + symbols
        onehot = np.zeros((n, cells), dtype=np.int32)
        onehot[np.arange(n), key] = 1
        before = np.cumsum(onehot, axis=0) - onehot
        sym_count = before[np.arange(n), key]
        state_count = before.reshape(n, num_states, size)[np.arange(n), states].sum(axis=1)
        return np.log2((sym_count + 0.5) / (state_count + size / 2.0))
    counts = np.zeros((num_states, size))
    out = np.empty(n)
    half = size / 2.0
    for i, (s, a) in enumerate(zip(states.tolist(), symbols.tolist())):
        row = counts[s]
        out[i] = math.log2((row[a] + 0.5) / (row.sum() + half))
        row[a] += 1
    return out


def kt_model(size: int, modulo: bool = False, state_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
             delay: int = 0) -> ConditionalModel:
    """Dirichlet-1/2 mixture over conditionally memoryless laws.

    With ``modulo`` the modelled letter is the noise y_i - x_i mod |X|; the
    map x_i -> noise is one to one for fixed y_i, so this is still a law on x.
    ``state_fn(x, y)`` gives the state sequence (default: a single state).
    """

    def lp(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        sym = (y - x) % size if modulo else x
        states = np.zeros(len(x), dtype=np.int64) if state_fn is None else state_fn(x, y)
        return kt_letter_log_probs(sym, states, size)

    return ConditionalModel(lp, delay, "kt-modulo" if modulo else "kt", size)


# --------------------------------------------------------------------------
# rate functions
# --------------------------------------------------------------------------


def conditional_form_rate(model: ConditionalModel, prior: Prior, x: Any, y: Any) -> float:
    """(1/n) log2(P(x|y) / Q(x)); nan when Q(x) = 0."""
    xs, ys = _pair(x, y)
    lq = prior_log_mass(prior, xs)
    if lq == -math.inf:
        return math.nan
    return (model.log_prob(xs, ys) - lq) / len(xs)


def emi_rate(x: Any, y: Any) -> float:
    return empirics.empirical_mutual_information(x, y)


def emi_ml_rate(prior: Prior, x: Any, y: Any) -> float:
    """(1/n) log2(p^(x|y) / Q(x)); for i.i.d. Q this is I^ + D(P^_x || Q)."""
    xs, ys = _pair(x, y)
    lq = prior_log_mass(prior, xs)
    if lq == -math.inf:
        return math.nan
    return (empirics.empirical_probability(xs, ys) - lq) / len(xs)


def markov_state_rate(x: Any, y: Any, order: int, prior: Prior | None = None, form: str = "ml",
                      size_x: int = 2, size_y: int = 2) -> float:
    """Rate from conditional statistics given z_i = (x_{i-D}^{i-1}, y_{i-D}^{i+D}).

    form "ml":  H^_Q(x) - H^(x|z)           (needs the prior)
    form "ml*": I^(x; z_y | z_x)
    """
    xs, ys = _pair(x, y)
    n = len(xs)
    if n <= order:
        raise InvalidInput("block length must exceed the Markov order")
    zx, zy = markov_states(xs, ys, order, size_x, size_y)
    z = empirics.joint_key(zx, zy)
    if form == "ml":
        if prior is None:
            raise InvalidParameter("the ML form needs a prior")
        lq = prior_log_mass(prior, xs)
        if lq == -math.inf:
            return math.nan
        return (empirics.empirical_probability(xs, z) - lq) / n
    if form == "ml*":
        return empirics.empirical_entropy(xs, zx) - empirics.empirical_entropy(xs, z)
    raise InvalidParameter(f"unknown form {form!r}")


def modulo_additive_rate(x: Any, y: Any, size: int = 2) -> float:
    z = compress.modulo_noise(x, y, size)
    return math.log2(size) - empirics.empirical_entropy(z)


def compression_rate(x: Any, y: Any, coder: str = "modulo", size: int = 2, size_y: int | None = None) -> float:
    """log2|X| - L_T(x|y)/n for a sequential coder.

    coder: "modulo" (LZ78 on y - x), "conditional" (conditional LZ) or
    "plain" (LZ78 on x, ignoring y).
    """
    xs, ys = _pair(x, y)
    if coder == "modulo":
        lt = compress.modulo_noise_lengths(xs, ys, size)[1]
    elif coder == "conditional":
        lt = compress.conditional_lz_lengths(xs, ys, size, size_y or size)[1]
    elif coder == "plain":
        lt = compress.lz78_lengths(xs, size)[1]
    else:
        raise InvalidParameter(f"unknown coder {coder!r}")
    return math.log2(size) - lt / len(xs)


# --------------------------------------------------------------------------
# metric to rate
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricRate:
    rate: float  # (1/n) log2(log(1-eps)/log(1-p) + 1)
    approx: float  # (1/n) log2(eps/p)
    p: float  # Pr_Q{u(X~, y) > u(x, y)}
    capped: bool


def all_sequences(size: int, n: int) -> np.ndarray:
    if size**n > EXHAUSTIVE_GUARD:
        from .core import ResourceLimit

        raise ResourceLimit("sequence space exceeds the exhaustive guard")
    return np.asarray(list(product(range(size), repeat=n)), dtype=np.int64).reshape(-1, n)


def exceed_probability(u: Callable[[np.ndarray, np.ndarray], float], prior: Prior, x: Any, y: Any,
                       method: str = "exhaustive", trials: int = 10000,
                       rand: SharedRandomness | None = None) -> float:
    """Pr_Q{u(X~, y) > u(x, y)} with strict inequality."""
    xs = as_symbols(x)
    ys = as_symbols(y)
    ref = u(xs, ys)
    n = len(xs)
    if method == "exhaustive":
        if not prior.alphabet.is_finite:
            raise InvalidParameter("exhaustive evaluation needs a finite alphabet")
        seqs = all_sequences(prior.alphabet.size, n)
        w = np.array([2.0 ** prior_log_mass(prior, s) for s in seqs])
        hit = np.array([u(s, ys) > ref for s in seqs])
        return float(np.sum(w[hit]))
    if method == "monte_carlo":
        rand = rand or SharedRandomness(0)
        hits = 0
        for t in range(trials):
            xt = sample_prior(prior, n, rand.derive(f"mc/{t}")).data
            hits += u(xt, ys) > ref
        return hits / trials
    raise InvalidParameter(f"unknown method {method!r}")


def metric_to_rate_from_p(p: float, n: int, eps: float, cap_bits: float) -> MetricRate:
    if not 0 < eps < 1:
        raise InvalidParameter("eps must lie in (0, 1)")
    if p <= 0:
        return MetricRate(cap_bits / n, cap_bits / n, p, True)
    if p >= 1:
        return MetricRate(0.0, math.log2(eps) / n, p, False)
    m = math.log1p(-eps) / math.log1p(-p) + 1.0
    return MetricRate(math.log2(m) / n, math.log2(eps / p) / n, p, False)


def metric_to_rate(u: Callable[[np.ndarray, np.ndarray], float], prior: Prior, x: Any, y: Any, eps: float,
                   method: str = "exhaustive", trials: int = 10000,
                   rand: SharedRandomness | None = None) -> MetricRate:
    """Rate promised by a decoding metric u; p = 0 is capped at log2 of the
    number of input sequences (log2 |X| per symbol)."""
    n = len(as_symbols(x))
    p = exceed_probability(u, prior, x, y, method, trials, rand)
    cap = n * math.log2(prior.alphabet.size) if prior.alphabet.is_finite else n * 64.0
    return metric_to_rate_from_p(p, n, eps, cap)


def goodput_function(traces: Iterable[Any]) -> float:
    """Mean of (1 - error) * rate over traces conditioned on one (x, y).

    A trace is a (rate, error) pair or an object with ``rate`` and ``error``.
    """
    vals = []
    for tr in traces:
        if isinstance(tr, tuple):
            rate, err = tr
        else:
            rate, err = tr.rate, tr.error
        vals.append((1.0 - float(err)) * rate)
    if not vals:
        return math.nan
    return float(np.mean(vals))


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------


@dataclass
class RateFunction:
    name: str
    evaluate: Callable[[Any, Any], float]
    adaptive: bool = False
    metric_factory: Callable[..., Any] | None = None
    r_max: float | None = None
    description: str = ""
    params: dict = field(default_factory=dict)

    def __call__(self, x: Any, y: Any) -> float:
        return self.evaluate(x, y)

    def metric(self, **kw: Any) -> Any:
        if self.metric_factory is None:
            raise InvalidParameter(f"rate function {self.name!r} has no sequential metric")
        return self.metric_factory(**kw)


@dataclass(frozen=True)
class RegistryEntry:
    id: str
    description: str
    adaptive: bool
    build: Callable[..., RateFunction]


def _build_emi(**kw: Any) -> RateFunction:
    return RateFunction("emi", emi_rate, False, None, None, "empirical mutual information")


def _build_emi_ml(size: int = 2, **kw: Any) -> RateFunction:
    prior = kw.get("prior") or Prior.uniform(size)

    def metric(**mk: Any):
        from .coding import mixture_metric

        return mixture_metric(prior, state_fn=lambda x, y: y, num_states=kw.get("size_y", size), **mk)

    return RateFunction("emi-ml", lambda x, y: emi_ml_rate(prior, x, y), True, metric,
                        math.log2(size), "empirical mutual information plus divergence from the prior")


def _build_markov(size: int = 2, order: int = 1, form: str = "ml*", **kw: Any) -> RateFunction:
    prior = kw.get("prior") or Prior.uniform(size)
    return RateFunction(
        "markov",
        lambda x, y: markov_state_rate(x, y, order, prior, form, size, kw.get("size_y", size)),
        False, None, math.log2(size), f"order-{order} Markov state rate ({form})", {"order": order},
    )


def _build_modadd(size: int = 2, **kw: Any) -> RateFunction:
    prior = Prior.uniform(size)

    def metric(**mk: Any):
        from .coding import mixture_metric

        return mixture_metric(prior, modulo=True, **mk)

    return RateFunction("modadd", lambda x, y: modulo_additive_rate(x, y, size), True, metric,
                        math.log2(size), "log|X| minus empirical entropy of the modulo noise")


def _build_lz(size: int = 2, **kw: Any) -> RateFunction:
    def metric(**mk: Any):
        from .coding import compression_metric

        return compression_metric("modulo", size, **mk)

    return RateFunction("lz", lambda x, y: compression_rate(x, y, "modulo", size), True, metric,
                        math.log2(size), "LZ78 length of the modulo noise")


def _build_clz(size: int = 2, **kw: Any) -> RateFunction:
    size_y = kw.get("size_y", size)

    def metric(**mk: Any):
        from .coding import compression_metric

        return compression_metric("conditional", size, size_y=size_y, **mk)

    return RateFunction("clz", lambda x, y: compression_rate(x, y, "conditional", size, size_y), True, metric,
                        math.log2(size), "conditional LZ length of x given y")


def _build_mimo(**kw: Any) -> RateFunction:
    from . import mimo

    cfg = kw.get("config") or mimo.MimoConfig(t=1, r=1)

    def ev(x: Any, y: Any) -> float:
        return mimo.mimo_rate(as_symbols(x), as_symbols(y), cfg)[1]

    return RateFunction("mimo", ev, False, None, None, "gaussian second-order rate (ML* form)")


REGISTRY: dict[str, RegistryEntry] = {
    "emi": RegistryEntry("emi", "empirical mutual information I^(x;y)", False, _build_emi),
    "emi-ml": RegistryEntry("emi-ml", "I^(x;y) + D(P^_x || Q), adaptive through a per-y mixture", True, _build_emi_ml),
    "markov": RegistryEntry("markov", "rate from order-D Markov state statistics", False, _build_markov),
    "modadd": RegistryEntry("modadd", "log|X| - H^(y - x), adaptive through a noise mixture", True, _build_modadd),
    "lz": RegistryEntry("lz", "log|X| - L_T(y - x)/n with LZ78", True, _build_lz),
    "clz": RegistryEntry("clz", "log|X| - L_T(x|y)/n with conditional LZ", True, _build_clz),
    "mimo": RegistryEntry("mimo", "gaussian MIMO second-order rate", False, _build_mimo),
}


def list_registry(filter: str | None = None) -> list[RegistryEntry]:
    ids = sorted(REGISTRY)
    if filter is not None:
        ids = [i for i in ids if filter in i]
    return [REGISTRY[i] for i in ids]


def get_rate_function(name: str, **kw: Any) -> RateFunction:
    if name not in REGISTRY:
        raise InvalidParameter(f"unknown rate function {name!r}")
    return REGISTRY[name].build(**kw)

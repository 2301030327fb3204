"""Alphabets, sequences, priors, channels and shared randomness.

Every other module builds on the types defined here.  All logarithms in the
package are base 2 unless a name says otherwise.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.special import gammaincc

LOG2E = math.log2(math.e)


class InvalidInput(ValueError):
    """Input data does not match what an operation expects."""


class InvalidParameter(ValueError):
    """A configuration parameter is outside its valid range."""


class ResourceLimit(RuntimeError):
    """An exhaustive computation would exceed its guard."""


# --------------------------------------------------------------------------
# alphabets and sequences
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Alphabet:
    kind: str  # "finite", "real" or "complex"
    size: int = 0
    dim: int = 0

    def __post_init__(self):
        if self.kind == "finite":
            if self.size < 2:
                raise InvalidParameter("finite alphabet needs size >= 2")
        elif self.kind in ("real", "complex"):
            if self.dim < 1:
                raise InvalidParameter("vector alphabet needs dim >= 1")
        else:
            raise InvalidParameter(f"unknown alphabet kind {self.kind!r}")

    @classmethod
    def finite(cls, size: int) -> "Alphabet":
        return cls("finite", size=size)

    @classmethod
    def real(cls, dim: int) -> "Alphabet":
        return cls("real", dim=dim)

    @classmethod
    def complex(cls, dim: int) -> "Alphabet":
        return cls("complex", dim=dim)

    @property
    def is_finite(self) -> bool:
        return self.kind == "finite"

    @property
    def d(self) -> int:
        """Real degrees of freedom per complex entry (1 real, 2 complex)."""
        return 2 if self.kind == "complex" else 1


BINARY = Alphabet.finite(2)


@dataclass(frozen=True, eq=False)
class SymbolSequence:
    """A length-n sequence over an alphabet.

    Finite symbols are stored as an int array of shape (n,), vector symbols
    as an (n, dim) float or complex array.
    """

    alphabet: Alphabet
    data: np.ndarray

    def __post_init__(self):
        a = self.alphabet
        if a.is_finite:
            arr = np.asarray(self.data, dtype=np.int64).reshape(-1)
            if arr.size and (arr.min() < 0 or arr.max() >= a.size):
                raise InvalidInput("symbol outside finite alphabet")
        else:
            dtype = complex if a.kind == "complex" else float
            arr = np.asarray(self.data, dtype=dtype)
            if arr.ndim == 1:
                arr = arr.reshape(-1, 1) if a.dim == 1 else arr.reshape(1, -1)
            if arr.ndim != 2 or arr.shape[1] != a.dim:
                raise InvalidInput("vector symbols must have shape (n, dim)")
            if not np.all(np.isfinite(arr)):
                raise InvalidInput("non-finite vector symbol")
        if len(arr) < 1:
            raise InvalidInput("sequences must have n >= 1")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    def __len__(self) -> int:
        return len(self.data)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, SymbolSequence)
            and self.alphabet == other.alphabet
            and self.data.shape == other.data.shape
            and bool(np.all(self.data == other.data))
        )

    def segment(self, i: int, j: int) -> np.ndarray:
        """Symbols i..j, 1-based and inclusive, clamped to the valid range."""
        lo = max(i, 1) - 1
        hi = min(j, len(self))
        if hi <= lo:
            return self.data[:0]
        return self.data[lo:hi]

    @classmethod
    def binary(cls, bits: Sequence[int] | str) -> "SymbolSequence":
        if isinstance(bits, str):
            bits = [int(c) for c in bits]
        return cls(BINARY, np.asarray(bits))


def as_symbols(x: Any) -> np.ndarray:
    """Raw data of a SymbolSequence, or the argument as an array."""
    if isinstance(x, SymbolSequence):
        return x.data
    return np.asarray(x)


# --------------------------------------------------------------------------
# shared randomness
# --------------------------------------------------------------------------


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class SharedRandomness:
    """A reproducible random stream named by (master seed, label path).

    Encoder and decoder holding equal (seed, path) draw identical values.
    """

    master_seed: int
    path: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise InvalidParameter("master seed must be a 64-bit unsigned integer")

    def derive(self, label: str) -> "SharedRandomness":
        return SharedRandomness(self.master_seed, self.path + (str(label),))

    def generator(self) -> np.random.Generator:
        keys = tuple(_label_key(lbl) for lbl in self.path)
        return np.random.default_rng(np.random.SeedSequence(self.master_seed, spawn_key=keys))


def derive_stream(rand: SharedRandomness, label: str) -> SharedRandomness:
    return rand.derive(label)


# --------------------------------------------------------------------------
# priors
# --------------------------------------------------------------------------


def trimmed_gaussian_tail(d: int, t: int, omega: float) -> float:
    """Probability mass of the untrimmed gaussian outside the trim ellipsoid."""
    return float(gammaincc(d * t / 2.0, d * omega**2 / 2.0))


def _logdet(a: np.ndarray) -> float:
    sign, ld = np.linalg.slogdet(a)
    if sign == 0:
        return -math.inf
    return float(ld)


@dataclass(frozen=True, eq=False)
class Prior:
    """Input distribution over length-n sequences.

    kinds:
      iid              -- ``mass`` has shape (|X|,)
      markov           -- ``mass`` has shape (|X|**order, |X|); row index is the
                          previous ``order`` symbols read as a base-|X| number
                          with the oldest symbol most significant
      trimmed_gaussian -- ``cov`` is the t x t input covariance, ``omega`` the
                          trim radius; ``alphabet`` is real or complex
    """

    kind: str
    alphabet: Alphabet
    mass: np.ndarray | None = None
    order: int = 0
    initial: tuple[int, ...] = ()
    cov: np.ndarray | None = None
    omega: float = math.inf

    def __post_init__(self):
        if self.kind in ("iid", "markov"):
            m = np.asarray(self.mass, dtype=float)
            if self.kind == "iid":
                m = m.reshape(-1)
                rows = m[None, :]
            else:
                if self.order < 1:
                    raise InvalidParameter("markov prior needs order >= 1")
                rows = m.reshape(-1, self.alphabet.size)
                if rows.shape[0] != self.alphabet.size**self.order:
                    raise InvalidParameter("markov table has wrong number of rows")
                m = rows
                init = self.initial or (0,) * self.order
                if len(init) != self.order:
                    raise InvalidParameter("initial state length must equal order")
                object.__setattr__(self, "initial", tuple(int(v) for v in init))
            if rows.shape[1] != self.alphabet.size:
                raise InvalidParameter("mass length must equal alphabet size")
            if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1) > 1e-12):
                raise InvalidParameter("per-letter masses must be >= 0 and sum to 1")
            m.setflags(write=False)
            object.__setattr__(self, "mass", m)
        elif self.kind == "trimmed_gaussian":
            if self.omega <= 0 or not math.isfinite(self.omega):
                raise InvalidParameter("trim radius must be positive and finite")
            c = np.atleast_2d(np.asarray(self.cov, dtype=complex if self.alphabet.d == 2 else float))
            if c.shape != (self.alphabet.dim, self.alphabet.dim):
                raise InvalidParameter("covariance must be t x t")
            if not np.allclose(c, c.conj().T) or np.min(np.linalg.eigvalsh(c)) <= 0:
                raise InvalidParameter("covariance must be hermitian positive definite")
            c.setflags(write=False)
            object.__setattr__(self, "cov", c)
        else:
            raise InvalidParameter(f"unknown prior kind {self.kind!r}")

    # constructors ---------------------------------------------------------
    @classmethod
    def iid(cls, mass: Sequence[float]) -> "Prior":
        m = np.asarray(mass, dtype=float)
        return cls("iid", Alphabet.finite(len(m)), mass=m)

    @classmethod
    def uniform(cls, size: int) -> "Prior":
        return cls.iid(np.full(size, 1.0 / size))

    @classmethod
    def markov(cls, table: np.ndarray, order: int, initial: Sequence[int] = ()) -> "Prior":
        table = np.asarray(table, dtype=float)
        return cls("markov", Alphabet.finite(table.shape[-1]), mass=table, order=order, initial=tuple(initial))

    @classmethod
    def trimmed_gaussian(cls, cov: Any, omega: float, complex_valued: bool = False) -> "Prior":
        cov = np.atleast_2d(np.asarray(cov))
        t = cov.shape[0]
        alpha = Alphabet.complex(t) if complex_valued else Alphabet.real(t)
        return cls("trimmed_gaussian", alpha, cov=cov, omega=float(omega))

    # derived quantities ---------------------------------------------------
    @property
    def tail(self) -> float:
        """Untrimmed mass outside the trim region (0 for discrete priors)."""
        if self.kind != "trimmed_gaussian":
            return 0.0
        return trimmed_gaussian_tail(self.alphabet.d, self.alphabet.dim, self.omega)

    def _log2_peak_density(self) -> float:
        d = self.alphabet.d
        t = self.alphabet.dim
        # |(2pi/d) cov|^{-d/2}: the normalizer of the real (d=1) or circular
        # complex (d=2) gaussian density.
        logdet = _logdet(np.real_if_close(self.cov)) if d == 1 else float(np.linalg.slogdet(self.cov)[1])
        ln = -(d / 2.0) * (t * math.log(2 * math.pi / d) + logdet)
        return ln * LOG2E - math.log2(1.0 - self.tail)

    @property
    def q_max(self) -> float:
        if self.kind == "trimmed_gaussian":
            return 2.0 ** self._log2_peak_density()
        return float(np.max(self.mass))

    @property
    def q_min(self) -> float:
        """Smallest nonzero per-letter mass (density on the trim boundary)."""
        if self.kind == "trimmed_gaussian":
            d = self.alphabet.d
            return self.q_max * math.exp(-d * self.omega**2 / 2.0)
        m = self.mass
        return float(np.min(m[m > 0]))

    # per-letter evaluation ------------------------------------------------
    def markov_states(self, x: np.ndarray) -> np.ndarray:
        """Row index into the markov table for every position of x."""
        size = self.alphabet.size
        hist = np.concatenate([np.asarray(self.initial, dtype=np.int64), np.asarray(x, dtype=np.int64)])
        states = np.zeros(len(x), dtype=np.int64)
        for lag in range(self.order, 0, -1):
            states = states * size + hist[self.order - lag : self.order - lag + len(x)]
        return states

    def letter_log_mass(self, x: Any) -> np.ndarray:
        """log2 Q(x_i | x^{i-1}) for every i; -inf where the mass is zero."""
        data = as_symbols(x)
        with np.errstate(divide="ignore"):
            if self.kind == "iid":
                return np.log2(self.mass[data])
            if self.kind == "markov":
                return np.log2(self.mass[self.markov_states(data), data])
        return self._gauss_letter_log_density(data)

    def _gauss_letter_log_density(self, data: np.ndarray) -> np.ndarray:
        d = self.alphabet.d
        arr = np.asarray(data).reshape(-1, self.alphabet.dim)
        quad = quadratic_form(arr, self.cov)
        out = self._log2_peak_density() - (d / 2.0) * quad * LOG2E
        return np.where(quad <= self.omega**2, out, -np.inf)


def quadratic_form(rows: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """x cov^{-1} x^* for every row x."""
    sol = np.linalg.solve(cov, rows.T)
    return np.real(np.einsum("ij,ji->i", rows.conj(), sol))


def sample_prior(prior: Prior, n: int, rand: SharedRandomness) -> SymbolSequence:
    if n < 1:
        raise InvalidInput("n must be >= 1")
    rng = rand.generator()
    a = prior.alphabet
    if prior.kind == "iid":
        data = rng.choice(a.size, size=n, p=prior.mass)
    elif prior.kind == "markov":
        data = np.empty(n, dtype=np.int64)
        state = list(prior.initial)
        u = rng.random(n)
        cdf = np.cumsum(prior.mass, axis=1)
        for i in range(n):
            row = 0
            for s in state:
                row = row * a.size + s
            sym = int(np.searchsorted(cdf[row], u[i], side="right"))
            sym = min(sym, a.size - 1)
            data[i] = sym
            state = state[1:] + [sym]
    else:
        data = _sample_trimmed(prior, n, rng)
    return SymbolSequence(a, data)


def _sample_trimmed(prior: Prior, n: int, rng: np.random.Generator) -> np.ndarray:
    t = prior.alphabet.dim
    chol = np.linalg.cholesky(prior.cov)
    out = []
    have = 0
    while have < n:
        m = n - have + 8
        if prior.alphabet.d == 2:
            w = (rng.standard_normal((m, t)) + 1j * rng.standard_normal((m, t))) / math.sqrt(2)
        else:
            w = rng.standard_normal((m, t))
        rows = w @ chol.T
        keep = rows[quadratic_form(rows, prior.cov) <= prior.omega**2]
        out.append(keep)
        have += len(keep)
    return np.concatenate(out)[:n]


def prior_log_mass(prior: Prior, x: Any) -> float:
    """log2 Q(x); -inf for sequences of zero mass."""
    data = as_symbols(x)
    if prior.alphabet.is_finite:
        if data.ndim != 1:
            raise InvalidInput("finite prior expects a 1-d symbol sequence")
        if data.size and (data.min() < 0 or data.max() >= prior.alphabet.size):
            raise InvalidInput("symbol outside prior alphabet")
    else:
        arr = np.asarray(data)
        if arr.ndim != 2 or arr.shape[1] != prior.alphabet.dim:
            raise InvalidInput("vector prior expects an (n, t) array")
    return float(np.sum(prior.letter_log_mass(data)))


# --------------------------------------------------------------------------
# channels
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Channel:
    """A channel producing one output symbol per input symbol.

    kinds and their parameters:
      fixed_output     -- ``output``: the y sequence, x is ignored
      modulo_additive  -- ``errors``: fixed error sequence, or ``noise_mass``:
                          i.i.d. error distribution; y = x + e mod |X|
      dmc              -- ``matrix``: W[x, y]
      delay            -- y_i = x_{i-1}, y_1 = ``fill``
      onoff_binary     -- one draw per block: with probability ``p_on`` y = x,
                          otherwise y is uniform and independent of x
      gaussian_mimo    -- ``matrix`` H (r x t), ``noise_cov`` (r x r); Y = X H^T + N
    """

    kind: str
    output: Any = None
    errors: Any = None
    noise_mass: Any = None
    matrix: Any = None
    noise_cov: Any = None
    fill: int = 0
    p_on: float = 0.5
    size: int = 2
    params: dict = field(default_factory=dict)

    @classmethod
    def fixed_output(cls, y: SymbolSequence) -> "Channel":
        return cls("fixed_output", output=y)

    @classmethod
    def modulo_additive(cls, size: int, errors: Any = None, noise_mass: Any = None) -> "Channel":
        if (errors is None) == (noise_mass is None):
            raise InvalidParameter("give exactly one of errors or noise_mass")
        return cls("modulo_additive", errors=errors, noise_mass=noise_mass, size=size)

    @classmethod
    def bsc(cls, p: float) -> "Channel":
        return cls.modulo_additive(2, noise_mass=[1 - p, p])

    @classmethod
    def dmc(cls, matrix: Any) -> "Channel":
        w = np.asarray(matrix, dtype=float)
        if np.any(np.abs(w.sum(axis=1) - 1) > 1e-12):
            raise InvalidParameter("transition rows must sum to 1")
        return cls("dmc", matrix=w, size=w.shape[1])

    @classmethod
    def delay(cls, size: int = 2, fill: int = 0) -> "Channel":
        return cls("delay", size=size, fill=fill)

    @classmethod
    def onoff_binary(cls, p_on: float = 0.5) -> "Channel":
        return cls("onoff_binary", p_on=p_on, size=2)

    @classmethod
    def gaussian_mimo(cls, h: Any, noise_cov: Any) -> "Channel":
        return cls("gaussian_mimo", matrix=np.atleast_2d(h), noise_cov=np.atleast_2d(noise_cov))


def apply_channel(channel: Channel, x: SymbolSequence, rand: SharedRandomness) -> SymbolSequence:
    n = len(x)
    rng = rand.generator()
    k = channel.kind
    if k == "fixed_output":
        y = channel.output
        if len(y) != n:
            raise InvalidInput("fixed output length differs from input length")
        return y
    if k == "gaussian_mimo":
        if x.alphabet.is_finite:
            raise InvalidInput("gaussian channel needs vector input")
        h = channel.matrix
        if h.shape[1] != x.alphabet.dim:
            raise InvalidInput("channel matrix does not match input dimension")
        r = h.shape[0]
        chol = np.linalg.cholesky(channel.noise_cov)
        if x.alphabet.d == 2:
            w = (rng.standard_normal((n, r)) + 1j * rng.standard_normal((n, r))) / math.sqrt(2)
            out = Alphabet.complex(r)
        else:
            w = rng.standard_normal((n, r))
            out = Alphabet.real(r)
        return SymbolSequence(out, x.data @ h.T + w @ chol.T)
    if not x.alphabet.is_finite:
        raise InvalidInput("finite-alphabet channel needs finite input")
    data = x.data
    if k == "modulo_additive":
        if x.alphabet.size != channel.size:
            raise InvalidInput("modulo channel alphabet mismatch")
        if channel.errors is not None:
            e = np.asarray(as_symbols(channel.errors), dtype=np.int64)
            # a longer error sequence is an individual noise sequence seen up to time n
            if len(e) < n:
                raise InvalidInput("error sequence shorter than the input")
            e = e[:n]
        else:
            e = rng.choice(channel.size, size=n, p=channel.noise_mass)
        return SymbolSequence(x.alphabet, (data + e) % channel.size)
    if k == "dmc":
        w = channel.matrix
        if w.shape[0] != x.alphabet.size:
            raise InvalidInput("transition matrix does not match input alphabet")
        cdf = np.cumsum(w, axis=1)[data]
        u = rng.random(n)[:, None]
        y = np.minimum((u >= cdf).sum(axis=1), w.shape[1] - 1)
        return SymbolSequence(Alphabet.finite(w.shape[1]), y)
    if k == "delay":
        y = np.concatenate([[channel.fill], data[:-1]])
        return SymbolSequence(x.alphabet, y)
    if k == "onoff_binary":
        if x.alphabet.size != 2:
            raise InvalidInput("on/off channel is binary")
        if rng.random() < channel.p_on:
            return SymbolSequence(x.alphabet, data.copy())
        return SymbolSequence(x.alphabet, rng.integers(0, 2, size=n))
    raise InvalidParameter(f"unknown channel kind {k!r}")


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


@dataclass
class ReportEntry:
    value: float
    formula: str
    method: str = "closed_form"  # closed_form, exhaustive, monte_carlo
    inputs: dict = field(default_factory=dict)
    ci: tuple[float, float] | None = None


@dataclass
class OverheadReport:
    """Named scalars with the formula and method that produced each one."""

    entries: dict[str, ReportEntry] = field(default_factory=dict)

    def add(self, name: str, value: float, formula: str, method: str = "closed_form",
            inputs: dict | None = None, ci: tuple[float, float] | None = None) -> None:
        if method == "monte_carlo" and ci is None:
            raise InvalidParameter("monte carlo entries need a confidence interval")
        self.entries[name] = ReportEntry(float(value), formula, method, dict(inputs or {}), ci)

    def __getitem__(self, name: str) -> float:
        return self.entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def values(self) -> dict[str, float]:
        return {k: e.value for k, e in self.entries.items()}

"""Gaussian second-order rate functions for real (d=1) and complex (d=2) MIMO.

Rows of X (n x t) and Y (n x r) are channel uses.  With u=1 the empirical
mean is removed (covariance statistics), with u=0 it is not (correlation
statistics).  Densities use the normalization |(2 pi / d) C|^{-d/2}, which is
the exact gaussian normalizer in both the real and circular complex case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import (
    LOG2E,
    InvalidInput,
    InvalidParameter,
    OverheadReport,
    Prior,
    trimmed_gaussian_tail,
)


@dataclass(frozen=True)
class MimoConfig:
    t: int
    r: int
    d: int = 1
    u: int = 0
    cov: Any = None  # input covariance, identity when None
    omega: float = 5.0
    n: int = 1000
    eps: float = 1e-3
    d_fb: int = 1
    K: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        if self.d not in (1, 2) or self.u not in (0, 1):
            raise InvalidParameter("d must be 1 or 2 and u must be 0 or 1")
        if self.t < 1 or self.r < 1:
            raise InvalidParameter("antenna counts must be >= 1")
        if not self.omega > 0:
            raise InvalidParameter("trim radius must be positive")
        if self.gamma is not None and not 0 < self.gamma < 1:
            raise InvalidParameter("gamma must lie in (0, 1)")
        lam = self.input_cov
        if not np.allclose(lam, lam.conj().T) or np.min(np.linalg.eigvalsh(lam)) <= 0:
            raise InvalidParameter("input covariance must be hermitian positive definite")

    @property
    def input_cov(self) -> np.ndarray:
        if self.cov is None:
            return np.eye(self.t)
        return np.atleast_2d(np.asarray(self.cov, dtype=complex if self.d == 2 else float))

    def prior(self) -> Prior:
        return Prior.trimmed_gaussian(self.input_cov, self.omega, complex_valued=self.d == 2)


def _logdet2(a: np.ndarray) -> float:
    """log2 |det a| (absolute determinant); -inf when singular."""
    if a.size == 0:
        return 0.0
    sign, ld = np.linalg.slogdet(a)
    if sign == 0:
        return -math.inf
    return float(ld) * LOG2E


def _check(a: Any, name: str) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InvalidInput(f"{name} must be an n x dim matrix")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} has non-finite entries")
    return arr


# --------------------------------------------------------------------------
# empirical second-order statistics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalSecondOrder:
    cxx: np.ndarray
    cyy: np.ndarray  # over the retained Y columns
    cyx: np.ndarray
    cx_given_y: np.ndarray
    mean_x: np.ndarray
    mean_y: np.ndarray
    kept_y: tuple[int, ...]  # columns of Y retained after pruning
    degenerate: bool


def independent_columns(a: np.ndarray, rtol: float = 1e-10) -> list[int]:
    """Greedy left-to-right selection of linearly independent columns.

    A column is kept when it is not (numerically) in the span of the columns
    already kept, so later duplicates are the ones dropped.
    """
    kept: list[int] = []
    scale = max(float(np.max(np.abs(a))) if a.size else 0.0, 1e-300)
    basis = np.zeros((a.shape[0], 0), dtype=a.dtype)
    for j in range(a.shape[1]):
        col = a[:, j]
        if basis.shape[1]:
            col = col - basis @ (basis.conj().T @ col)
        nrm = np.linalg.norm(col)
        if nrm > rtol * scale * math.sqrt(a.shape[0]):
            kept.append(j)
            basis = np.column_stack([basis, col / nrm])
    return kept


def _center(a: np.ndarray, u: int) -> tuple[np.ndarray, np.ndarray]:
    if u:
        mu = a.mean(axis=0)
        return a - mu, mu
    return a, np.zeros(a.shape[1], dtype=a.dtype)


def empirical_second_order(X: Any, Y: Any, config: MimoConfig) -> EmpiricalSecondOrder:
    X = _check(X, "X")
    Y = _check(Y, "Y")
    n = X.shape[0]
    if Y.shape[0] != n:
        raise InvalidInput("X and Y must have the same number of rows")
    xc, mx = _center(X, config.u)
    yc, my = _center(Y, config.u)
    kept = independent_columns(yc)
    yk = yc[:, kept]
    cxx = xc.conj().T @ xc / n
    cyy = yk.conj().T @ yk / n
    cyx = yk.conj().T @ xc / n
    if kept:
        cxy = cxx - cyx.conj().T @ np.linalg.solve(cyy, cyx)
    else:
        cxy = cxx.copy()
    cxy = (cxy + cxy.conj().T) / 2
    degenerate = n < X.shape[1] + Y.shape[1] + config.u + 1 or len(kept) < Y.shape[1]
    return EmpiricalSecondOrder(cxx, cyy, cyx, cxy, mx, my, tuple(kept), bool(degenerate))


def conditional_logdet(s: EmpiricalSecondOrder, rtol: float = 1e-12) -> float:
    """log2 |C_{X|Y}|, or -inf when it is singular relative to C_XX."""
    eig = np.linalg.eigvalsh(s.cx_given_y)
    scale = max(float(np.real(np.trace(s.cxx))), 1e-300)
    if eig.min() <= rtol * scale:
        return -math.inf
    return float(np.sum(np.log2(eig)))


def _pml_from_logdet(logdet_c: float, n: int, t: int, d: int) -> float:
    # log2 of the ML density -(d/2) n log2 |(2 pi e / d) C|
    if logdet_c == -math.inf:
        return math.inf
    return -(d / 2.0) * n * (t * math.log2(2 * math.pi * math.e / d) + logdet_c)


def pml_gaussian(X: Any, config: MimoConfig) -> float:
    """log2 of the maximized i.i.d. gaussian density of X (+inf if degenerate)."""
    X = _check(X, "X")
    xc, _ = _center(X, config.u)
    c = xc.conj().T @ xc / X.shape[0]
    return _pml_from_logdet(_logdet2(c), X.shape[0], X.shape[1], config.d)


def pml_gaussian_conditional(X: Any, Y: Any, config: MimoConfig) -> float:
    """log2 of the maximized conditional gaussian density of X given Y."""
    X = _check(X, "X")
    s = empirical_second_order(X, Y, config)
    return _pml_from_logdet(conditional_logdet(s), X.shape[0], X.shape[1], config.d)


def pml_gaussian_conditional_qr(X: Any, Y: Any, config: MimoConfig) -> float:
    """Same quantity through the innovation norms of Z = [1_u, Y, X].

    |n C_{X|Y}| is the product of the squared diagonal entries of R that
    belong to the X columns.
    """
    X = _check(X, "X")
    Y = _check(Y, "Y")
    n, t = X.shape
    yc, _ = _center(Y, config.u)
    kept = independent_columns(yc)
    cols = []
    if config.u:
        cols.append(np.ones((n, 1), dtype=X.dtype))
    cols += [Y[:, kept], X]
    Z = np.column_stack(cols)
    R = np.linalg.qr(Z, mode="r")
    diag = np.abs(np.diag(R))[-t:]
    if np.min(diag) <= 1e-6 * max(float(np.linalg.norm(X)), 1e-300):
        return math.inf
    logdet_nc = float(np.sum(2 * np.log2(diag)))
    return _pml_from_logdet(logdet_nc - t * math.log2(n), n, t, config.d)


# --------------------------------------------------------------------------
# rate functions
# --------------------------------------------------------------------------


def mimo_rate(X: Any, Y: Any, config: MimoConfig) -> tuple[float, float]:
    """(R_ML, R_ML*) in bits per channel use; +inf when C_{X|Y} is singular."""
    X = _check(X, "X")
    n = X.shape[0]
    d = config.d
    s = empirical_second_order(X, Y, config)
    ld_cond = conditional_logdet(s)
    if ld_cond == -math.inf:
        return math.inf, math.inf
    lam = config.input_cov
    r_star = (d / 2.0) * (_logdet2(s.cxx) - ld_cond)
    trace = float(np.real(np.trace((X.conj().T @ X / n) @ np.linalg.inv(lam)))) - X.shape[1]
    r_ml = (d / 2.0) * (_logdet2(lam) - ld_cond) + (d / 2.0) * LOG2E * trace
    return r_ml, r_star


def mimo_rate_symmetric(X: Any, Y: Any, config: MimoConfig) -> float:
    """(d/2) log2(|C_XX| |C_YY| / |C_(XY)(XY)|)."""
    X = _check(X, "X")
    Y = _check(Y, "Y")
    xc, _ = _center(X, config.u)
    yc, _ = _center(Y, config.u)
    n = X.shape[0]
    z = np.column_stack([xc, yc])
    czz = z.conj().T @ z / n
    cxx = xc.conj().T @ xc / n
    cyy = yc.conj().T @ yc / n
    return (config.d / 2.0) * (_logdet2(cxx) + _logdet2(cyy) - _logdet2(czz))


# --------------------------------------------------------------------------
# trimmed prior and theorem parameters
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrimmedStats:
    tail: float  # untrimmed mass outside the ellipsoid
    q_min: float
    q_max: float
    a0: float  # log2(1 / (1 - tail))


def trimmed_prior_stats(config: MimoConfig) -> TrimmedStats:
    prior = config.prior()
    tail = trimmed_gaussian_tail(config.d, config.t, config.omega)
    return TrimmedStats(tail, prior.q_min, prior.q_max, -math.log2(1.0 - tail))


@dataclass
class GaussianParams:
    a: dict[str, float]
    K: float
    gamma: float
    A: float
    B: float
    eta: float
    alpha: float
    delta: float
    delta0: float | None
    saturation: float
    tail: float
    inputs: dict = field(default_factory=dict)

    def F(self, rate: Any) -> Any:
        """Guaranteed rate eta t / (1 + alpha t) - delta."""
        t = np.asarray(rate, dtype=float)
        return self.eta * t / (1 + self.alpha * t) - self.delta

    def report(self) -> OverheadReport:
        rep = OverheadReport()
        for k, v in self.a.items():
            rep.add(k, v, f"constant {k}", inputs=self.inputs)
        rep.add("K", self.K, "bits per block", inputs=self.inputs)
        rep.add("gamma", self.gamma, "metric scaling", inputs=self.inputs)
        rep.add("A", self.A, "gamma (a3/(1-gamma) + a4)", inputs=self.inputs)
        rep.add("B", self.B, "log2 n + a1 + a2 log2(1/(1-gamma)) + (a3/(1-gamma) + a4) gamma a5", inputs=self.inputs)
        rep.add("eta", self.eta, "gamma / (1 + B/K)", inputs=self.inputs)
        rep.add("alpha", self.alpha, "A / (K + B)", inputs=self.inputs)
        rep.add("delta", self.delta, "a0 + K/n", inputs=self.inputs)
        if self.delta0 is not None:
            rep.add("delta0", self.delta0, "3 n^(-1/3) a6^(1/3) R0^(2/3) + 1/n", inputs=self.inputs)
        rep.add("saturation", self.saturation, "eta/alpha - delta", inputs=self.inputs)
        rep.add("tail", self.tail, "upper regularized incomplete gamma", inputs=self.inputs)
        return rep


def gaussian_theorem_params(config: MimoConfig, R0: float | None = None) -> GaussianParams:
    """Overhead constants of the adaptive gaussian scheme.

    With ``R0`` the block size and gamma are set by the optimization rule
    K = ceil((n sqrt(a6) R0)^(2/3)), gamma = 1 - sqrt(a6/K); otherwise the
    config's K and gamma are used.
    """
    n, t, r, d, u = config.n, config.t, config.r, config.d, config.u
    if n < 1 or not 0 < config.eps < 1 or config.d_fb < 1:
        raise InvalidParameter("need n >= 1, 0 < eps < 1, d_fb >= 1")
    ts = trimmed_prior_stats(config)
    a0 = ts.a0
    a2 = (d / 4.0) * (t + 1 + 2 * r + 2 * u) * t
    a1 = a0 + math.log2(1.0 / (config.d_fb * config.eps)) + a2 * LOG2E
    a3 = t + 1 + r + u
    a4 = 2 * config.d_fb - 1
    a5 = (d / 2.0) * (t + config.omega**2) * LOG2E
    consts = {"a0": a0, "a1": a1, "a2": a2, "a3": a3, "a4": a4, "a5": a5}
    delta0 = None
    if R0 is not None:
        if R0 <= 0:
            raise InvalidParameter("R0 must be positive")
        a6 = math.log2(n) + a1 + a2 + (a3 + a4) * (R0 + a5)
        consts["a6"] = a6
        K = float(math.ceil((n * math.sqrt(a6) * R0) ** (2.0 / 3.0)))
        gamma = 1.0 - math.sqrt(a6 / K)
        delta0 = 3.0 * n ** (-1.0 / 3.0) * a6 ** (1.0 / 3.0) * R0 ** (2.0 / 3.0) + 1.0 / n
    else:
        if config.K is None or config.gamma is None:
            raise InvalidParameter("give K and gamma, or R0")
        K, gamma = float(config.K), float(config.gamma)
    if not 0 < gamma < 1 or K <= 0:
        raise InvalidParameter("derived gamma must lie in (0, 1) and K must be positive")
    slope = a3 / (1 - gamma) + a4
    A = gamma * slope
    B = math.log2(n) + a1 + a2 * math.log2(1 / (1 - gamma)) + slope * gamma * a5
    eta = gamma / (1 + B / K)
    alpha = A / (K + B)
    delta = a0 + K / n
    return GaussianParams(consts, K, gamma, A, B, eta, alpha, delta, delta0, eta / alpha - delta, ts.tail,
                          {"n": n, "t": t, "r": r, "d": d, "u": u, "eps": config.eps, "omega": config.omega,
                           "d_fb": config.d_fb, "R0": R0})


# --------------------------------------------------------------------------
# sequential metric
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MimoMetricMeta:
    L_m: float
    b0: float
    f0_const: float  # f0 = f0_const + (1/n) log2 psi

    def f0(self, log_psi: float, n: int) -> float:
        return self.f0_const + log_psi / n


def mimo_metric_meta(config: MimoConfig, gamma: float) -> MimoMetricMeta:
    t, r, d, u = config.t, config.r, config.d, config.u
    tail = trimmed_gaussian_tail(d, t, config.omega)
    L = (1.0 / (1.0 - tail)) * (math.e / (1.0 - gamma)) ** ((d / 4.0) * (t + 1 + 2 * r + 2 * u) * t)
    b0 = (t + 1 + r + u) / (1.0 - gamma)
    f0 = (d / 2.0) * (t + config.omega**2) * gamma * LOG2E
    return MimoMetricMeta(L, b0, f0)


def mimo_gamma_metric(X: Any, Y: Any, j: int, k: int, config: MimoConfig, gamma: float,
                      prior: Prior | None = None) -> float:
    """gamma (log2 p_ML(X_{j+1}^k | Y_{j+1}^k) - log2 Q(X_{j+1}^k)) in bits.

    Only rows j+1..k are read.  Q is the trimmed input prior unless another
    prior is given.
    """
    if k <= j:
        raise InvalidInput("metric needs k > j")
    X = _check(X, "X")[j:k]
    Y = _check(Y, "Y")[j:k]
    prior = prior or config.prior()
    lq = float(np.sum(prior.letter_log_mass(X)))
    if lq == -math.inf:
        return math.inf
    return gamma * (pml_gaussian_conditional(X, Y, config) - lq)


def untrimmed_log_density(X: Any, config: MimoConfig) -> float:
    """log2 of the untrimmed gaussian input density of X."""
    X = _check(X, "X")
    d = config.d
    lam = config.input_cov
    quad = np.real(np.einsum("ij,ji->i", X.conj(), np.linalg.solve(lam, X.T)))
    per = -(d / 2.0) * (config.t * math.log2(2 * math.pi / d) + _logdet2(lam))
    return float(X.shape[0] * per - (d / 2.0) * LOG2E * np.sum(quad))

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erfc

from indivchan import mimo as G
from indivchan.analysis import wilson_interval
from indivchan.core import InvalidInput, InvalidParameter, SharedRandomness, sample_prior


def gauss(rng, n, k, d):
    a = rng.standard_normal((n, k))
    if d == 2:
        a = (a + 1j * rng.standard_normal((n, k))) / math.sqrt(2)
    return a


def test_x_equal_y_gives_zero_residual():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 2))
    s = G.empirical_second_order(X, X, G.MimoConfig(t=2, r=2))
    assert np.allclose(s.cx_given_y, 0.0, atol=1e-12)
    assert G.mimo_rate(X, X, G.MimoConfig(t=2, r=2))[1] == math.inf


@pytest.mark.parametrize("u", [0, 1])
def test_duplicate_column_is_pruned(u):
    rng = np.random.default_rng(1)
    X = rng.standard_normal((40, 2))
    Y = X @ rng.standard_normal((2, 2)) + rng.standard_normal((40, 2))
    cfg2 = G.MimoConfig(t=2, r=2, u=u)
    cfg3 = G.MimoConfig(t=2, r=3, u=u)
    Y3 = np.column_stack([Y, Y[:, 0]])
    a = G.empirical_second_order(X, Y, cfg2)
    b = G.empirical_second_order(X, Y3, cfg3)
    assert b.kept_y == (0, 1)
    assert np.allclose(a.cx_given_y, b.cx_given_y)
    assert G.pml_gaussian_conditional(X, Y3, cfg3) == pytest.approx(G.pml_gaussian_conditional(X, Y, cfg2))


@pytest.mark.parametrize("d,u", [(1, 0), (1, 1), (2, 0), (2, 1)])
def test_residual_covariance_is_lmmse_residual(d, u):
    rng = np.random.default_rng(2)
    n, t, r = 50, 3, 2
    X, Y = gauss(rng, n, t, d), gauss(rng, n, r, d)
    X = X + Y @ gauss(rng, r, t, d)
    design = np.column_stack([np.ones(n), Y]) if u else Y
    coef, *_ = np.linalg.lstsq(design, X, rcond=None)
    resid = X - design @ coef
    s = G.empirical_second_order(X, Y, G.MimoConfig(t=t, r=r, d=d, u=u))
    assert np.allclose(s.cx_given_y, resid.conj().T @ resid / n, atol=1e-12)


def test_scalar_closed_form():
    x = np.random.default_rng(3).standard_normal((25, 1))
    var = float(np.sum(x**2) / 25)
    assert G.pml_gaussian(x, G.MimoConfig(t=1, r=1)) == pytest.approx(-12.5 * math.log2(2 * math.pi * math.e * var))


def test_orthogonal_output_changes_nothing():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((30, 2))
    Y = rng.standard_normal((30, 2))
    Y = Y - X @ np.linalg.lstsq(X, Y, rcond=None)[0]  # empirically orthogonal to X
    cfg = G.MimoConfig(t=2, r=2)
    assert G.pml_gaussian_conditional(X, Y, cfg) == pytest.approx(G.pml_gaussian(X, cfg), rel=1e-10)
    assert G.mimo_rate(X, Y, cfg)[1] == pytest.approx(0.0, abs=1e-10)


def test_siso_correlation_form():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(40)
    y = 0.6 * x + rng.standard_normal(40)
    rho = np.dot(x, y) / math.sqrt(np.dot(x, x) * np.dot(y, y))
    r_star = G.mimo_rate(x[:, None], y[:, None], G.MimoConfig(t=1, r=1))[1]
    assert r_star == pytest.approx(0.5 * math.log2(1 / (1 - rho**2)), rel=1e-12)


@pytest.mark.parametrize("d,u", [(1, 0), (1, 1), (2, 0), (2, 1)])
def test_symmetric_form(d, u):
    rng = np.random.default_rng(6)
    for _ in range(20):
        t, r = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        X = gauss(rng, 40, t, d)
        Y = X @ gauss(rng, t, r, d) + gauss(rng, 40, r, d)
        cfg = G.MimoConfig(t=t, r=r, d=d, u=u)
        assert G.mimo_rate(X, Y, cfg)[1] == pytest.approx(G.mimo_rate_symmetric(X, Y, cfg), abs=1e-9)


def test_qr_path_degenerate_and_errors():
    X = np.ones((10, 1))
    with pytest.raises(InvalidInput):
        G.pml_gaussian(np.array([[np.nan]]), G.MimoConfig(t=1, r=1))
    assert G.pml_gaussian_conditional_qr(X, X, G.MimoConfig(t=1, r=1)) == math.inf


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([1, 2]), st.sampled_from([0, 1]))
def test_invariances(seed, d, u):
    rng = np.random.default_rng(seed)
    t = r = int(rng.integers(1, 4))
    X = gauss(rng, 30, t, d)
    Y = X @ gauss(rng, t, r, d) + gauss(rng, 30, r, d)
    cfg = G.MimoConfig(t=t, r=r, d=d, u=u)
    base = G.mimo_rate(X, Y, cfg)[1]
    assert base >= -1e-9
    gx = gauss(rng, t, t, d) + 2 * np.eye(t)
    gy = gauss(rng, r, r, d) + 2 * np.eye(r)
    assert G.mimo_rate(X @ gx, Y @ gy, cfg)[1] == pytest.approx(base, abs=1e-6)
    assert G.mimo_rate(Y, X, cfg)[1] == pytest.approx(base, abs=1e-9)


def test_trimmed_stats():
    far = G.trimmed_prior_stats(G.MimoConfig(t=1, r=1, omega=40.0))
    assert far.tail < 1e-300 or far.tail == 0.0
    assert far.a0 == pytest.approx(0.0, abs=1e-15)
    s = G.trimmed_prior_stats(G.MimoConfig(t=1, r=1, d=1, omega=3.0))
    assert s.tail == pytest.approx(erfc(math.sqrt(4.5)), rel=1e-12)
    s = G.trimmed_prior_stats(G.MimoConfig(t=2, r=2, d=2, omega=5.0))
    assert s.tail == pytest.approx(26 * math.exp(-25), rel=1e-12)
    assert s.tail == pytest.approx(3.61e-10, rel=1e-3)
    assert s.q_min < s.q_max


def test_config_validation():
    with pytest.raises(InvalidParameter):
        G.MimoConfig(t=1, r=1, gamma=1.0)
    with pytest.raises(InvalidParameter):
        G.MimoConfig(t=1, r=1, omega=0.0)
    with pytest.raises(InvalidParameter):
        G.MimoConfig(t=2, r=1, cov=[[1, 2], [2, 1]])


def test_delta_grows_with_block_size():
    deltas = [G.gaussian_theorem_params(G.MimoConfig(t=2, r=2, d=2, u=1, n=100_000, K=K, gamma=0.9)).delta
              for K in (1e3, 1e4, 5e4)]
    assert deltas == sorted(deltas)


def test_optimized_rate_loss_bound():
    cfg = G.MimoConfig(t=2, r=2, d=2, u=1, n=100_000, eps=1e-3)
    p = G.gaussian_theorem_params(cfg, R0=5.0)
    a0 = p.a["a0"]
    for t in np.linspace(0.0, 5.0, 100):
        assert p.F(t) >= t - p.delta0 - a0 - 1e-12


def test_gamma_metric_identity_and_locality():
    rng = np.random.default_rng(7)
    cfg = G.MimoConfig(t=2, r=2, d=1, u=0, omega=5.0)
    n, gamma = 60, 0.9
    X = sample_prior(cfg.prior(), n, SharedRandomness(3)).data
    Y = X @ rng.standard_normal((2, 2)) + rng.standard_normal((n, 2))
    tail = G.trimmed_prior_stats(cfg).tail
    r_ml = G.mimo_rate(X, Y, cfg)[0]
    assert G.mimo_gamma_metric(X, Y, 0, n, cfg, gamma) == pytest.approx(gamma * n * (r_ml + math.log2(1 - tail)))
    X2, Y2 = X.copy(), Y.copy()
    X2[:10] += 1.0
    Y2[50:] -= 2.0
    assert G.mimo_gamma_metric(X, Y, 10, 50, cfg, gamma) == pytest.approx(G.mimo_gamma_metric(X2, Y2, 10, 50, cfg, gamma))
    with pytest.raises(InvalidInput):
        G.mimo_gamma_metric(X, Y, 5, 5, cfg, gamma)


def test_gamma_metric_expectation_bound():
    cfg = G.MimoConfig(t=1, r=1, d=1, u=0, omega=5.0)
    gamma, n, trials = 0.5, 12, 10_000
    meta = G.mimo_metric_meta(cfg, gamma)
    assert n >= meta.b0
    rng = np.random.default_rng(8)
    Y = rng.standard_normal((n, 1))
    X = sample_prior(cfg.prior(), n * trials, SharedRandomness(9)).data.reshape(trials, n, 1)
    psi = np.array([2.0 ** G.mimo_gamma_metric(X[i], Y, 0, n, cfg, gamma) for i in range(trials)])
    mean, sd = psi.mean(), psi.std() / math.sqrt(trials)
    assert mean <= meta.L_m * (1 + 5 * sd / mean)


def test_scaled_ml_rate_redundancy():
    # sampled tail of gamma R_ML under Q stays under the closed-form redundancy bound
    cfg = G.MimoConfig(t=1, r=1, d=1, u=0, omega=5.0)
    n, gamma, trials = 16, 0.8, 20_000
    tail = G.trimmed_prior_stats(cfg).tail
    bound = (math.log2(1 / (1 - tail)) + 0.25 * 4 * math.log2(math.e / (1 - gamma))) / n
    rng = np.random.default_rng(10)
    for _ in range(3):
        Y = rng.standard_normal((n, 1))
        X = sample_prior(cfg.prior(), n * trials, SharedRandomness(int(rng.integers(1 << 30)))).data.reshape(trials, n, 1)
        vals = np.array([gamma * G.mimo_rate(X[i], Y, cfg)[0] for i in range(trials)])
        for R in np.quantile(vals, [0.5, 0.9, 0.99, 0.999]):
            k = int(np.sum(vals >= R))
            hi = wilson_interval(k, trials)[1]
            assert math.log2(hi) / n + R <= bound


def test_siso_tail_decays_too_slowly():
    # Pr{1/2 log 1/(1 - rho^2) >= R} behaves like 2^{-(n-1)R}, not 2^{-nR}
    n, trials = 8, 1_000_000
    rng = np.random.default_rng(11)
    x = rng.standard_normal((trials, n))
    y = rng.standard_normal((trials, n))
    rho2 = np.sum(x * y, 1) ** 2 / (np.sum(x * x, 1) * np.sum(y * y, 1))
    rates = -0.5 * np.log2(1 - rho2)
    grid = np.linspace(0.5, 1.75, 6)
    ccdf = np.array([np.mean(rates >= R) for R in grid])
    slope = np.polyfit(grid, np.log2(ccdf), 1)[0]
    assert -slope <= n - 0.5

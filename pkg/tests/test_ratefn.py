import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import kstest

from indivchan import analysis, empirics, ratefn as RF
from indivchan.core import InvalidInput, InvalidParameter, Prior, SharedRandomness, apply_channel, Channel, sample_prior

UNIFORM = Prior.uniform(2)


def rand_pair(rng, n, flip=0.1):
    x = rng.integers(0, 2, n)
    return x, np.where(rng.random(n) < flip, 1 - x, x)


def test_conditional_form_examples():
    rng = np.random.default_rng(0)
    x, y = rand_pair(rng, 9)
    assert RF.conditional_form_rate(RF.ConditionalModel.from_prior(UNIFORM), UNIFORM, x, y) == 0.0
    assert RF.conditional_form_rate(RF.ConditionalModel.point_mass(2), UNIFORM, y, y) == 1.0
    assert math.isnan(RF.conditional_form_rate(RF.ConditionalModel.point_mass(2), Prior.iid([1, 0]), [1], [1]))


MODELS = {
    "bsc": RF.ConditionalModel.bsc_posterior(0.2),
    "kt": RF.kt_model(2),
    "kt-per-y": RF.kt_model(2, state_fn=lambda x, y: y),
    "kt-modulo": RF.kt_model(2, modulo=True),
}


@pytest.mark.parametrize("name", sorted(MODELS))
def test_conditional_form_chernoff_identity(name):
    n = 6
    xs = RF.all_sequences(2, n)
    prior = Prior.iid([0.6, 0.4])
    rng = np.random.default_rng(1)
    for _ in range(4):
        y = rng.integers(0, 2, n)
        total = sum(2 ** (prior_log(prior, x) + n * RF.conditional_form_rate(MODELS[name], prior, x, y)) for x in xs)
        assert total == pytest.approx(1.0, abs=1e-9)


def prior_log(prior, x):
    return float(np.sum(prior.letter_log_mass(x)))


@pytest.mark.parametrize("name", sorted(MODELS))
def test_models_are_normalized_and_causal(name):
    model = MODELS[name]
    n = 5
    xs = RF.all_sequences(2, n)
    y = np.array([0, 1, 1, 0, 1])
    assert sum(2 ** model.log_prob(x, y) for x in xs) == pytest.approx(1.0, abs=1e-9)
    # letter i only depends on y up to i + delay
    y2 = y.copy()
    y2[-1] ^= 1
    for x in xs[:8]:
        a = model.letter_log_probs(x, y)
        b = model.letter_log_probs(x, y2)
        assert np.allclose(a[: n - 1 - model.delay], b[: n - 1 - model.delay])


def test_emi_forms():
    x = np.array([0, 1, 1, 0, 1, 0, 0, 1])
    assert RF.emi_rate(x, x) == pytest.approx(empirics.empirical_entropy(x))
    # P^_x equals Q: the two forms coincide
    assert RF.emi_ml_rate(UNIFORM, x, x) == pytest.approx(RF.emi_rate(x, x))


def test_emi_ml_is_conditional_form_with_empirical_law():
    rng = np.random.default_rng(2)
    prior = Prior.iid([0.7, 0.3])
    for _ in range(30):
        x, y = rand_pair(rng, 20, 0.3)
        table = np.zeros((2, 2))
        for a, b in zip(x, y):
            table[b, a] += 1
        for b in range(2):
            table[b] = table[b] / table[b].sum() if table[b].sum() else 0.5
        model = RF.ConditionalModel.memoryless(table)
        assert RF.emi_ml_rate(prior, x, y) == pytest.approx(RF.conditional_form_rate(model, prior, x, y), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40).flatmap(lambda n: st.tuples(st.lists(st.integers(0, 1), min_size=n, max_size=n),
                                                       st.lists(st.integers(0, 1), min_size=n, max_size=n))),
       st.floats(0.05, 0.95))
def test_ml_minus_mi_is_divergence(xy, q):
    x, y = xy
    prior = Prior.iid([1 - q, q])
    diff = RF.emi_ml_rate(prior, x, y) - RF.emi_rate(x, y)
    d = empirics.kl_divergence(empirics.letter_frequencies(x, 2), [1 - q, q])
    assert diff == pytest.approx(d, abs=1e-9)
    assert diff >= -1e-12


def test_markov_order_zero_reduces_to_emi():
    rng = np.random.default_rng(3)
    prior = Prior.iid([0.6, 0.4])
    for _ in range(20):
        x, y = rand_pair(rng, 30, 0.2)
        assert RF.markov_state_rate(x, y, 0, prior, "ml") == pytest.approx(RF.emi_ml_rate(prior, x, y), abs=1e-12)
        assert RF.markov_state_rate(x, y, 0, None, "ml*") == pytest.approx(RF.emi_rate(x, y), abs=1e-12)


def test_markov_rate_captures_delay():
    n = 4096
    x = sample_prior(UNIFORM, n, SharedRandomness(4))
    y = apply_channel(Channel.delay(2), x, SharedRandomness(5))
    assert RF.markov_state_rate(x.data, y.data, 1, None, "ml*") > 0.95
    assert RF.emi_rate(x.data, y.data) < 0.01


def test_markov_ml_dominates_ml_star():
    rng = np.random.default_rng(6)
    prior = Prior.markov([[0.8, 0.2], [0.3, 0.7]], 1, initial=(0,))
    for _ in range(30):
        x = sample_prior(prior, 50, SharedRandomness(int(rng.integers(1 << 30)))).data
        y = np.where(rng.random(50) < 0.2, 1 - x, x)
        assert RF.markov_state_rate(x, y, 1, prior, "ml") >= RF.markov_state_rate(x, y, 1, None, "ml*") - 1e-9


def test_markov_boundary_and_errors():
    with pytest.raises(InvalidInput):
        RF.markov_state_rate([0, 1], [0, 1], 2)
    # symbols before the start read as 0: the first state is all zeros
    zx, zy = RF.markov_states([1, 1, 0], [1, 0, 1], 1, 2, 2)
    assert zx[0] == 0 and zy[0] == 0 * 4 + 1 * 2 + 0


def test_modulo_additive_examples():
    x = np.array([0, 1, 1, 0, 1, 0, 0, 1])
    assert RF.modulo_additive_rate(x, x) == 1.0
    e = np.array([1, 0, 0, 0, 1, 0, 0, 0])
    assert RF.modulo_additive_rate(x, (x + e) % 2) == pytest.approx(0.1887, abs=1e-4)
    rng = np.random.default_rng(7)
    big = rng.integers(0, 2, 8192)
    assert RF.modulo_additive_rate(big, rng.integers(0, 2, 8192)) < 0.01


def test_compression_rate_examples():
    rng = np.random.default_rng(8)
    x, y = rng.integers(0, 2, 64), rng.integers(0, 2, 64)
    assert RF.compression_rate(x, y, "conditional") <= 0
    n = 16384
    z = rng.integers(0, 2, n)
    assert RF.compression_rate(z, z, "modulo") > 0.85


def test_metric_to_rate_plug_in():
    assert RF.metric_to_rate_from_p(0.01, 10, 0.01, 10).rate == pytest.approx(0.1)
    capped = RF.metric_to_rate_from_p(0.0, 10, 0.01, 10)
    assert capped.capped and capped.rate == 1.0
    with pytest.raises(InvalidParameter):
        RF.metric_to_rate_from_p(0.1, 10, 1.5, 10)


def test_metric_to_rate_tracks_emi():
    rng = np.random.default_rng(9)
    n, eps = 12, 0.01
    for _ in range(10):
        x, y = rand_pair(rng, n, 0.15)
        mr = RF.metric_to_rate(RF.emi_rate, UNIFORM, x, y, eps)
        assert abs(mr.rate - RF.emi_rate(x, y)) <= math.log2(1 / eps) / n
        mc = RF.metric_to_rate(RF.emi_rate, UNIFORM, x, y, eps, "monte_carlo", 4000, SharedRandomness(1))
        assert abs(mc.p - mr.p) <= 4 * math.sqrt(mr.p * (1 - mr.p) / 4000) + 1e-3


def test_exceed_probability_is_uniform():
    # a tie-free metric: p(X, y) for X ~ Q is uniform on the grid k / 2^n
    n = 10
    w = np.random.default_rng(10).standard_normal(n) * 2.0 ** np.arange(n)

    def u(x, y):
        return float(np.dot(w, x))

    xs = RF.all_sequences(2, n)
    vals = np.sort(xs @ w)
    rng = np.random.default_rng(11)
    draws = rng.integers(0, 2, (600, n)) @ w
    p = 1.0 - np.searchsorted(vals, draws, side="right") / len(vals)
    p = p + rng.random(len(p)) / len(vals)  # spread the lattice for the KS test
    assert kstest(p, "uniform").pvalue > 0.01
    x0 = xs[5]
    assert RF.exceed_probability(u, UNIFORM, x0, np.zeros(n, int)) == pytest.approx(np.mean(vals > u(x0, None)))


def test_goodput_function():
    assert RF.goodput_function([(0.5, False)]) == 0.5
    assert RF.goodput_function([(0.5, False), (0.5, True)]) == 0.25
    assert math.isnan(RF.goodput_function([]))


def test_registry():
    ids = [e.id for e in RF.list_registry()]
    assert set(ids) == {"emi", "emi-ml", "markov", "modadd", "lz", "clz", "mimo"}
    assert ids == [e.id for e in RF.list_registry()]
    assert RF.list_registry("nope") == []
    with pytest.raises(InvalidParameter):
        RF.get_rate_function("nope")
    with pytest.raises(InvalidParameter):
        RF.get_rate_function("emi").metric()


@pytest.mark.parametrize("name", ["lz", "clz"])
def test_compression_metric_equals_rate(name):
    rng = np.random.default_rng(12)
    rf = RF.get_rate_function(name)
    m = rf.metric(n=200)
    for _ in range(10):
        x, y = rand_pair(rng, 200)
        assert m(x, y) == pytest.approx(200 * rf(x, y), abs=1e-6)


@pytest.mark.parametrize("name,size_z", [("modadd", 1), ("emi-ml", 2)])
def test_mixture_metric_is_rate_minus_regret(name, size_z):
    rng = np.random.default_rng(13)
    rf = RF.get_rate_function(name)
    m = rf.metric()
    n = 300
    r_n = analysis.dirichlet_regret_bound(2, size_z, n)
    for _ in range(10):
        x, y = rand_pair(rng, n, 0.2)
        gap = n * rf(x, y) - m(x, y)
        assert -1e-6 <= gap <= r_n


@pytest.mark.parametrize("name", ["modadd", "emi-ml"])
def test_block_splitting(name):
    m = RF.get_rate_function(name).metric()
    rng = np.random.default_rng(14)
    for _ in range(20):
        x, y = rand_pair(rng, 40, 0.3)
        j, k = sorted(rng.integers(1, 41, 2))
        assert m(x, y, 0, k) == pytest.approx(m(x, y, 0, j) + m(x, y, j, k), abs=1e-6)


def _mu(rate_fn, n):
    return analysis.intrinsic_redundancy(rate_fn, UNIFORM, n).value


def test_offset_shifts_redundancy():
    for n in (3, 4):
        for delta in (0.25, -0.4):
            base = _mu(RF.emi_rate, n)
            assert _mu(lambda x, y: RF.emi_rate(x, y) + delta, n) == pytest.approx(base + delta, abs=1e-9)

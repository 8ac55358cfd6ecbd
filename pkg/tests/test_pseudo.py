import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from halstream.errors import ValidationError
from halstream.pseudo import Aggregator, NoiseSpec, Strategy, add_zero_sum_noise


def random_simplex(rng, m, n):
    return rng.dirichlet(np.ones(n), size=m)


def ma_closed_form(ys, w):
    # ((w-1)/w)^(m-1) y_1 + sum_{j>=2} (1/w) ((w-1)/w)^(m-j) y_j
    m = len(ys)
    r = (w - 1) / w
    out = r ** (m - 1) * ys[0]
    for j in range(2, m + 1):
        out = out + (1 / w) * r ** (m - j) * ys[j - 1]
    return out


class TestObserve:
    def test_ha_mean(self):
        a = Aggregator("ha", 2)
        a.observe(0, [1.0, 0.0])
        a.observe(0, [0.0, 1.0])
        np.testing.assert_array_equal(a.pseudo_target(0), [0.5, 0.5])

    def test_ma_window_two(self):
        a = Aggregator("ma", 2, window=2)
        a.observe(0, [1.0, 0.0])
        a.observe(0, [0.0, 1.0])
        np.testing.assert_array_equal(a.pseudo_target(0), [0.5, 0.5])

    def test_ma_first_observation_is_target(self):
        a = Aggregator("ma", 3, window=7.5)
        a.observe(4, [0.2, 0.3, 0.5])
        np.testing.assert_array_equal(a.pseudo_target(4), [0.2, 0.3, 0.5])

    def test_pf_last(self):
        a = Aggregator("pf", 2)
        a.observe(0, [1.0, 0.0])
        a.observe(0, [0.3, 0.7])
        np.testing.assert_array_equal(a.pseudo_target(0), [0.3, 0.7])

    def test_off_simplex_rejected(self):
        a = Aggregator("ha", 2)
        with pytest.raises(ValidationError):
            a.observe(0, [0.7, 0.7])
        with pytest.raises(ValidationError):
            a.observe(0, [1.5, -0.5])

    def test_wrong_length_rejected(self):
        with pytest.raises(ValidationError):
            Aggregator("pf", 3).observe(0, [1.0, 0.0])

    @pytest.mark.parametrize("w", [1.0, 0.5])
    def test_ma_window_must_exceed_one(self, w):
        with pytest.raises(ValidationError):
            Aggregator("ma", 2, window=w)

    def test_default_has_no_aggregator(self):
        with pytest.raises(ValidationError):
            Aggregator(Strategy.DEFAULT, 2)

    def test_strategy_parse(self):
        assert Strategy.parse("HA") is Strategy.HA
        assert Strategy.parse(Strategy.MA) is Strategy.MA
        with pytest.raises(ValidationError):
            Strategy.parse("median")

    def test_observe_many_orders_by_time_then_node(self):
        a = Aggregator("pf", 2)
        a.observe_many([5, 5], [[0.0, 1.0], [1.0, 0.0]], [2.0, 1.0])
        np.testing.assert_array_equal(a.pseudo_target(5), [0.0, 1.0])


class TestPseudoTarget:
    def test_unobserved_node_unavailable(self):
        a = Aggregator("ha", 2)
        assert a.pseudo_target(3) is None
        a.observe(1, [1.0, 0.0])
        assert a.pseudo_target(0) is None and a.pseudo_target(3) is None
        assert 1 in a and 0 not in a and len(a) == 1

    def test_ha_three(self):
        a = Aggregator("ha", 2)
        for y in ([1.0, 0.0], [1.0, 0.0], [0.0, 1.0]):
            a.observe(2, y)
        np.testing.assert_allclose(a.pseudo_target(2), [2 / 3, 1 / 3], rtol=0, atol=1e-15)
        assert a.count(2) == 3

    def test_pf_single(self):
        a = Aggregator("pf", 2)
        a.observe(0, [0.2, 0.8])
        np.testing.assert_array_equal(a.pseudo_target(0), [0.2, 0.8])

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(0)
        for s in ("ha", "ma", "pf"):
            a = Aggregator(s, 4, window=3)
            for _ in range(50):
                a.observe(int(rng.integers(0, 8)), random_simplex(rng, 1, 4)[0])
            nodes, vecs = a.pseudo_targets(np.arange(12))
            for v, y in zip(nodes, vecs):
                np.testing.assert_array_equal(y, a.pseudo_target(v))
            assert set(nodes) == {v for v in range(12) if a.pseudo_target(v) is not None}

    def test_snapshot_is_independent(self):
        a = Aggregator("ha", 2)
        a.observe(0, [1.0, 0.0])
        snap = a.snapshot()
        a.observe(0, [0.0, 1.0])
        np.testing.assert_array_equal(snap.pseudo_target(0), [1.0, 0.0])


class TestOracles:
    @given(m=st.integers(1, 1000), n=st.integers(2, 6), seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_ha_equals_mean(self, m, n, seed):
        ys = random_simplex(np.random.default_rng(seed), m, n)
        a = Aggregator("ha", n)
        for y in ys:
            a.observe(0, y)
        np.testing.assert_allclose(a.pseudo_target(0), ys.mean(axis=0), rtol=0, atol=1e-12)

    @given(m=st.integers(1, 300), w=st.floats(1.01, 20.0), seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_ma_closed_form(self, m, w, seed):
        ys = random_simplex(np.random.default_rng(seed), m, 3)
        a = Aggregator("ma", 3, window=w)
        for y in ys:
            a.observe(0, y)
        np.testing.assert_allclose(a.pseudo_target(0), ma_closed_form(ys, w), rtol=0, atol=1e-10)

    @given(m=st.integers(1, 50), seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_pf_is_last(self, m, seed):
        ys = random_simplex(np.random.default_rng(seed), m, 3)
        a = Aggregator("pf", 3)
        for y in ys:
            a.observe(0, y)
        assert a.pseudo_target(0).tobytes() == ys[-1].tobytes()

    @pytest.mark.parametrize("s", ["ha", "ma", "pf"])
    def test_constant_stream_fixed_point(self, s):
        c = np.array([0.25, 0.5, 0.25])
        a = Aggregator(s, 3, window=4)
        for _ in range(37):
            a.observe(1, c)
        np.testing.assert_array_equal(a.pseudo_target(1), c)

    @given(seed=st.integers(0, 2**32 - 1), gamma=st.floats(0, 5), s=st.sampled_from(["ha", "ma", "pf"]))
    @settings(max_examples=40, deadline=None)
    def test_emitted_targets_on_simplex(self, seed, gamma, s):
        rng = np.random.default_rng(seed)
        a = Aggregator(s, 5, window=2.5)
        for y in random_simplex(rng, 20, 5):
            a.observe(0, y)
        out = add_zero_sum_noise(a.pseudo_target(0), gamma, 1.0, rng)
        assert np.all(out >= 0)
        assert abs(out.sum() - 1) < 1e-9


class TestNoise:
    def test_gamma_zero_identity(self):
        y = np.array([0.1, 0.2, 0.7])
        assert add_zero_sum_noise(y, 0.0, 1.0, np.random.default_rng(0)).tobytes() == y.tobytes()

    def test_gamma_zero_consumes_no_randomness(self):
        r1, r2 = np.random.default_rng(3), np.random.default_rng(3)
        add_zero_sum_noise(np.array([0.5, 0.5]), 0.0, 1.0, r1)
        assert r1.random() == r2.random()

    def test_outputs_on_simplex(self):
        rng = np.random.default_rng(0)
        for y in random_simplex(rng, 10_000, 4):
            out = add_zero_sum_noise(y, 0.5, 1.0, rng)
            assert np.all(out >= 0)
            assert abs(out.sum() - 1) < 1e-9

    def test_small_noise_is_unbiased(self):
        rng = np.random.default_rng(11)
        ybar = np.array([0.5, 0.5])
        outs = np.array([add_zero_sum_noise(ybar, 0.01, 1.0, rng) for _ in range(100_000)])
        se = outs.std(axis=0, ddof=1) / np.sqrt(len(outs))
        assert np.all(np.abs(outs.mean(axis=0) - ybar) <= 4 * se)

    def test_noise_is_zero_sum_before_clipping(self):
        rng = np.random.default_rng(2)
        y = np.full(6, 1 / 6)
        out = add_zero_sum_noise(y, 0.01, 1.0, rng)
        assert abs(out.sum() - 1) < 1e-15 and np.any(out != y)

    def test_noise_spec_validation(self):
        with pytest.raises(ValidationError):
            NoiseSpec(gamma=-0.1)
        with pytest.raises(ValidationError):
            NoiseSpec(alpha=0.0)

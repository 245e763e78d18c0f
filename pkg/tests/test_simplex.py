import numpy as np
import pytest

from simplexdiff.schedule import NoiseSchedule
from simplexdiff.simplex import (
    add_noise,
    encode_tokens,
    probs_to_embedding,
    project_argmax,
    sample_prior,
    self_cond_average,
)
from simplexdiff.tensor import softmax_np


class TestEncodeTokens:
    def test_single_token(self):
        out = encode_tokens([2], k=5.0, vocab_size=4)
        np.testing.assert_array_equal(out, [[-5.0, -5.0, 5.0, -5.0]])

    def test_round_trip_through_projection(self):
        rng = np.random.default_rng(0)
        tokens = rng.integers(0, 37, size=24)
        S0 = encode_tokens(tokens, k=5.0, vocab_size=37)
        np.testing.assert_array_equal(project_argmax(S0, 5.0), S0)
        np.testing.assert_array_equal(np.argmax(S0, axis=-1), tokens)

    def test_row_sums(self):
        k, V = 5.0, 9
        S0 = encode_tokens([3, 0, 8], k=k, vocab_size=V)
        np.testing.assert_allclose(S0.sum(axis=-1), k * (2 - V))

    def test_out_of_range_id(self):
        with pytest.raises(ValueError, match="vocabulary"):
            encode_tokens([4], k=5.0, vocab_size=4)


class TestAddNoise:
    def test_t_zero_leaves_input_unchanged(self):
        sched = NoiseSchedule(T_train=100)
        S0 = encode_tokens([1, 2], k=5.0, vocab_size=4)
        out = add_noise(S0, 0, sched, np.random.default_rng(0))
        np.testing.assert_array_equal(out, S0)

    @pytest.mark.parametrize("t_frac", [0.1, 0.5, 0.9])
    def test_monte_carlo_mean_and_variance(self, t_frac):
        # empirical moments over 1e5 draws vs sqrt(abar)*S0 and k^2*(1-abar)
        sched = NoiseSchedule(T_train=5000, k=5.0)
        t = int(t_frac * sched.T_train)
        S0 = encode_tokens([2], k=sched.k, vocab_size=4).astype(np.float64)
        rng = np.random.default_rng(123)
        n = 10**5
        draws = np.stack([add_noise(S0, t, sched, rng) for _ in range(n)])

        ab = sched.alpha_bar(t)
        target_mean = np.sqrt(ab) * S0
        target_var = sched.k**2 * (1.0 - ab)
        se = np.sqrt(target_var / n)
        assert np.abs(draws.mean(axis=0) - target_mean).max() <= 4.0 * se
        emp_var = draws.var(axis=0)
        np.testing.assert_allclose(emp_var, target_var, rtol=0.05)

    def test_per_example_t_broadcast(self):
        sched = NoiseSchedule(T_train=100, k=5.0)
        S0 = np.stack([encode_tokens([1, 2], k=5.0, vocab_size=4) for _ in range(3)])
        out = add_noise(S0, np.array([0, 0, 0]), sched, np.random.default_rng(0))
        np.testing.assert_array_equal(out, S0)

    def test_argmax_agreement_decays_with_t(self):
        # expected per-row agreement with the clean argmax is non-increasing in t
        sched = NoiseSchedule(T_train=1000, k=5.0)
        rng = np.random.default_rng(7)
        tokens = rng.integers(0, 16, size=8)
        S0 = encode_tokens(tokens, k=5.0, vocab_size=16)
        rates = []
        for t in (100, 500, 900):
            agree = 0
            draws = 1000
            for _ in range(draws):
                St = add_noise(S0, t, sched, rng)
                agree += (np.argmax(St, axis=-1) == tokens).mean()
            rates.append(agree / draws)
        assert rates[0] >= rates[1] - 0.02 and rates[1] >= rates[2] - 0.02


class TestProjectArgmax:
    def test_idempotent_on_clean(self):
        S0 = encode_tokens([0, 3, 1], k=5.0, vocab_size=4)
        np.testing.assert_array_equal(project_argmax(S0, 5.0), S0)

    def test_tie_breaks_to_lowest_index(self):
        out = project_argmax(np.array([[0.1, 0.3, -2.0, 0.3]]), 5.0)
        np.testing.assert_array_equal(out, [[-5.0, 5.0, -5.0, -5.0]])

    def test_projection_is_idempotent(self):
        rng = np.random.default_rng(1)
        S = rng.normal(size=(6, 9)).astype(np.float32)
        once = project_argmax(S, 5.0)
        np.testing.assert_array_equal(project_argmax(once, 5.0), once)


class TestProbsToEmbedding:
    def test_one_hot_selects_row(self):
        rng = np.random.default_rng(2)
        E = rng.normal(size=(5, 3))
        p = np.zeros((2, 5))
        p[0, 3] = 1.0
        p[1, 0] = 1.0
        out = probs_to_embedding(p, E)
        np.testing.assert_allclose(out, E[[3, 0]])

    def test_uniform_gives_column_mean(self):
        rng = np.random.default_rng(3)
        E = rng.normal(size=(7, 4))
        p = np.full((1, 7), 1.0 / 7.0)
        np.testing.assert_allclose(probs_to_embedding(p, E), E.mean(axis=0, keepdims=True))

    def test_output_within_convex_hull(self):
        rng = np.random.default_rng(4)
        E = rng.normal(size=(11, 6))
        p = softmax_np(rng.normal(size=(20, 11)))
        out = probs_to_embedding(p, E)
        assert (out <= E.max(axis=0) + 1e-9).all()
        assert (out >= E.min(axis=0) - 1e-9).all()

    def test_unnormalized_rows_raise(self):
        E = np.zeros((4, 2))
        with pytest.raises(ValueError, match="sum to 1"):
            probs_to_embedding(np.full((1, 4), 0.3), E)


class TestSelfCondAverage:
    def test_absent_condition_is_plain_softmax(self):
        rng = np.random.default_rng(5)
        S = rng.normal(size=(3, 8))
        np.testing.assert_array_equal(self_cond_average(S, None), softmax_np(S))

    def test_identical_inputs_collapse(self):
        rng = np.random.default_rng(6)
        S = rng.normal(size=(3, 8))
        np.testing.assert_allclose(self_cond_average(S, S.copy()), softmax_np(S), atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(7)
        S = rng.normal(scale=10, size=(12, 5)).astype(np.float32)
        P = rng.normal(scale=10, size=(12, 5)).astype(np.float32)
        avg = self_cond_average(S, P)
        np.testing.assert_allclose(avg.sum(axis=-1), 1.0, atol=1e-6)
        assert (avg >= 0).all()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            self_cond_average(np.zeros((2, 4)), np.zeros((3, 4)))


class TestSamplePrior:
    def test_moments(self):
        k = 5.0
        rng = np.random.default_rng(8)
        draw = sample_prior(1000, 1000, k, rng, dtype=np.float64)
        n = draw.size
        se = k / np.sqrt(n)
        assert abs(draw.mean()) <= 4.0 * se
        assert 0.99 * k <= draw.std() <= 1.01 * k

    def test_fixed_seed_reproduces(self):
        a = sample_prior(4, 7, 5.0, np.random.default_rng(42))
        b = sample_prior(4, 7, 5.0, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_bad_dims(self):
        with pytest.raises(ValueError):
            sample_prior(0, 5, 5.0, np.random.default_rng(0))

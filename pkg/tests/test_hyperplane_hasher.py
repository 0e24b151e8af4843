from dataclasses import replace

import numpy as np
import pytest

from hyperhash.errors import InvalidArgumentError
from hyperhash.experiments import cluster_corpus, hashed_map
from hyperhash.hamming_index import hamming, pack
from hyperhash.hyperplane_hasher import (
    LOSS_TERMS,
    HashLossWeights,
    HashModel,
    HashTrainConfig,
    OrderShift,
    _order_selector,
    binarize,
    hash_codes,
    hash_forward,
    hash_grad,
    hash_init,
    hash_total_loss,
    hash_train,
    loss_mse,
    loss_o,
    loss_q,
    loss_u,
    loss_w,
    order_weights,
    prepare_inputs,
)
from hyperhash.utilities import PipelineConfig


def _only(term):
    values = {f"lambda_{name}": 0.0 for name in LOSS_TERMS}
    values[f"lambda_{term}"] = 1.0
    return HashLossWeights(**values)


def _numeric_grad(model, inputs, weights, step=1e-6):
    def total():
        return hash_total_loss(inputs, hash_forward(model, inputs), weights).total

    grads = []
    for array in (model.p, model.b):
        numeric = np.zeros_like(array)
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + step
            upper = total()
            array[index] = original - step
            lower = total()
            array[index] = original
            numeric[index] = (upper - lower) / (2.0 * step)
        grads.append(numeric)
    return grads


class TestHashInit:

    def test_deterministic(self):
        np.testing.assert_array_equal(hash_init(4, 16, 30).p, hash_init(4, 16, 30).p)

    def test_entry_variance(self):
        model = hash_init(1, 64, 2000)
        assert np.var(model.p) == pytest.approx(1.0, abs=0.05)
        assert not model.b.any()

    @pytest.mark.parametrize("l_bits, dim2d", [(0, 10), (8, 1), (2.5, 10)])
    def test_invalid_shape(self, l_bits, dim2d):
        with pytest.raises(InvalidArgumentError):
            hash_init(0, l_bits, dim2d)

    def test_model_rejects_mismatched_bias(self):
        with pytest.raises(InvalidArgumentError):
            HashModel(np.zeros((4, 6)), np.zeros(3))


class TestForward:

    def test_relaxed_range_and_shape(self, rng):
        model = hash_init(2, 16, 40)
        relaxed = hash_forward(model, rng.standard_normal((7, 40)) * 10.0)
        assert relaxed.shape == (7, 16)
        assert np.all(np.abs(relaxed) <= 1.0)

    def test_width_mismatch(self, rng):
        with pytest.raises(InvalidArgumentError):
            hash_forward(hash_init(2, 16, 40), rng.standard_normal((3, 41)))

    def test_binarize_maps_zero_to_plus_one(self):
        np.testing.assert_array_equal(binarize([-0.2, 0.0, 0.7]), np.array([-1, 1, 1], dtype=np.int8))

    def test_prepare_inputs(self):
        prepared = prepare_inputs([[3.0, 4.0], [0.0, 0.0]])
        np.testing.assert_allclose(prepared, [[0.6, 0.8], [0.0, 0.0]])

    def test_normalisation_keeps_codes_at_zero_bias(self, rng):
        model = hash_init(3, 32, 20)
        scenes = rng.standard_normal((6, 20)) * rng.uniform(0.1, 50.0, (6, 1))
        np.testing.assert_array_equal(hash_codes(model, scenes), hash_codes(model, scenes, normalize=False))


class TestLossTerms:

    def test_consistent_bipolar_codes_zero_every_term_but_order(self):
        v = np.array([1.0, -1.0, 1.0, -1.0])
        codes = np.vstack([v, -v, v])
        assert loss_w(codes) == 0.0
        assert loss_q(codes) == 0.0
        assert loss_u(codes) == 0.0
        assert loss_mse(codes, codes) == pytest.approx(0.0, abs=1e-24)

    def test_w_spot_value(self):
        assert loss_w(np.full((1, 4), np.sqrt(0.5))) == pytest.approx(0.5625, abs=1e-12)

    def test_w_zero_only_at_extremes(self, rng):
        assert loss_w(rng.uniform(-0.9, 0.9, (4, 8))) > 0.0

    def test_u_spot_value(self):
        assert loss_u(np.array([[1.0, 1.0, 1.0, -1.0], [1.0, -1.0, 1.0, -1.0]])) == 2.0

    def test_q_spot_values(self):
        assert loss_q(np.array([[0.5, -0.5]])) == 0.25
        assert loss_q(np.array([[0.0, 1.0]])) == 0.5

    def test_mse_tracks_cosine_gap(self):
        inputs = np.array([[1.0, 0.0], [0.0, 1.0]])
        relaxed = np.array([[1.0, 1.0], [1.0, 1.0]])
        # cosine matrix is the identity, code similarity is all ones
        assert loss_mse(inputs, relaxed) == 0.5

    def test_mse_row_mismatch(self, rng):
        with pytest.raises(InvalidArgumentError):
            loss_mse(rng.standard_normal((3, 5)), rng.standard_normal((4, 2)))

    def test_all_terms_non_negative(self, rng):
        inputs = rng.standard_normal((6, 12))
        relaxed = np.tanh(rng.standard_normal((6, 8)))
        loss = hash_total_loss(inputs, relaxed, HashLossWeights())
        assert all(value >= 0.0 for value in loss.terms.values())
        expected = sum(getattr(HashLossWeights(), f"lambda_{t}") * loss.terms[t] for t in LOSS_TERMS)
        assert loss.total == pytest.approx(expected, rel=1e-12)


class TestOrderLoss:
    CODE = np.array([[1.0, 0.9, 0.1], [0.9, 1.0, 0.95], [0.1, 0.95, 1.0]])
    SCENE = np.array([[1.0, 0.1, 0.9], [0.1, 1.0, 0.95], [0.9, 0.95, 1.0]])

    def test_selector_marks_only_moved_pairs(self):
        selector = _order_selector(self.SCENE, self.CODE)
        expected = np.full((3, 3), OrderShift.UNCHANGED, dtype=np.int8)
        expected[0, 2] = OrderShift.REDUCED
        expected[0, 1] = OrderShift.INCREASED
        np.testing.assert_array_equal(selector, expected)

    def test_identical_orderings_are_unchanged(self):
        assert not _order_selector(self.SCENE, self.SCENE).any()

    def test_preserved_ranking_gives_zero_loss(self, rng):
        inputs = prepare_inputs(rng.standard_normal((5, 8)))
        assert not order_weights(inputs, inputs).any()
        assert loss_o(inputs, inputs) == 0.0

    def test_scrambled_ranking_is_penalised(self, rng):
        inputs = prepare_inputs(rng.standard_normal((5, 8)))
        relaxed = np.tanh(rng.standard_normal((5, 4)))
        assert order_weights(inputs, relaxed).any()
        assert loss_o(inputs, relaxed) > 0.0

    def test_needs_two_rows(self):
        with pytest.raises(InvalidArgumentError):
            loss_o(np.ones((1, 3)), np.ones((1, 2)))


class TestHashGrad:

    @pytest.mark.parametrize("term", LOSS_TERMS)
    def test_each_term_matches_finite_differences(self, term):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            model = hash_init(seed, 4, 6)
            model.p *= 0.5
            model.b[:] = 0.1 * rng.standard_normal(4)
            inputs = rng.standard_normal((5, 6))
            weights = _only(term)
            d_p, d_b = hash_grad(model, inputs, weights)
            numeric_p, numeric_b = _numeric_grad(model, inputs, weights)
            np.testing.assert_allclose(d_p, numeric_p, rtol=1e-4, atol=1e-8, err_msg=f"{term} P (seed {seed})")
            np.testing.assert_allclose(d_b, numeric_b, rtol=1e-4, atol=1e-8, err_msg=f"{term} b (seed {seed})")

    def test_weighted_sum_matches_finite_differences(self, rng):
        model = hash_init(9, 6, 8)
        inputs = prepare_inputs(rng.standard_normal((7, 8)))
        weights = HashLossWeights()
        d_p, d_b = hash_grad(model, inputs, weights)
        numeric_p, numeric_b = _numeric_grad(model, inputs, weights)
        np.testing.assert_allclose(d_p, numeric_p, rtol=1e-4, atol=1e-8)
        np.testing.assert_allclose(d_b, numeric_b, rtol=1e-4, atol=1e-8)

    def test_zero_weights_give_zero_gradient(self, rng):
        d_p, d_b = hash_grad(hash_init(1, 4, 6), rng.standard_normal((3, 6)), HashLossWeights.zero())
        assert not d_p.any() and not d_b.any()


class TestHyperplaneRounding:

    def test_hamming_fraction_tracks_angle(self):
        """Mean normalised Hamming distance over 200 pairs within 0.05 of theta / pi at L = 64."""
        gaps = []
        for seed in range(200):
            rng = np.random.default_rng(seed)
            x = rng.standard_normal(100)
            y = rng.uniform(0.0, 1.0) * x + rng.standard_normal(100)
            theta = np.arccos(np.dot(x, y) / (np.linalg.norm(x) * np.linalg.norm(y)))
            codes = hash_codes(hash_init(seed, 64, 100), np.vstack([x, y]))
            gaps.append(hamming(pack(codes[0]), pack(codes[1])) / 64 - theta / np.pi)
        assert abs(np.mean(gaps)) <= 0.05
        assert np.mean(np.abs(gaps)) <= 0.1


class TestHashTrain:

    def test_configuration_checks(self):
        with pytest.raises(InvalidArgumentError):
            HashTrainConfig(batch_size=1).validate()
        with pytest.raises(InvalidArgumentError):
            HashLossWeights(lambda_w=-0.1)
        with pytest.raises(InvalidArgumentError):
            HashLossWeights().without("z")

    def test_without_zeroes_one_term(self):
        weights = HashLossWeights().without("q")
        assert weights.lambda_q == 0.0
        assert weights.lambda_mse == 1.0

    def test_zero_epochs_returns_copy(self, rng):
        model = hash_init(1, 8, 10)
        trained, trace = hash_train(model, rng.standard_normal((6, 10)), HashTrainConfig(epochs=0))
        assert trace == []
        np.testing.assert_array_equal(trained.p, model.p)
        assert trained is not model

    def test_normalised_step_moves_exactly_learning_rate(self, rng):
        model = hash_init(1, 8, 10)
        corpus = prepare_inputs(rng.standard_normal((6, 10)))
        config = HashTrainConfig(learning_rate=0.05, epochs=1, batch_size=64)
        trained, _ = hash_train(model, corpus, config)
        moved = np.sqrt(np.sum((trained.p - model.p) ** 2) + np.sum((trained.b - model.b) ** 2))
        assert moved == pytest.approx(0.05, rel=1e-9)

    def test_plain_step_follows_gradient(self, rng):
        model = hash_init(1, 8, 10)
        corpus = prepare_inputs(rng.standard_normal((6, 10)))
        config = HashTrainConfig(learning_rate=0.1, epochs=1, batch_size=64, normalize_step=False)
        trained, _ = hash_train(model, corpus, config)
        d_p, d_b = hash_grad(model, corpus, config.weights)
        np.testing.assert_allclose(trained.p, model.p - 0.1 * d_p, atol=1e-12)
        np.testing.assert_allclose(trained.b, model.b - 0.1 * d_b, atol=1e-12)

    def test_same_seed_same_model(self, rng):
        model = hash_init(2, 8, 12)
        corpus = prepare_inputs(rng.standard_normal((20, 12)))
        config = HashTrainConfig(epochs=3, batch_size=6, seed=4)
        first, first_trace = hash_train(model, corpus, config)
        second, second_trace = hash_train(model, corpus, config)
        np.testing.assert_array_equal(first.p, second.p)
        assert first_trace == second_trace
        assert set(first_trace[0].terms) == set(LOSS_TERMS)

    def test_loss_decreases(self):
        flat, _ = cluster_corpus(3, n_items=64, n_clusters=4, dimension=50)
        corpus = prepare_inputs(flat)
        config = HashTrainConfig(learning_rate=0.1, epochs=15, batch_size=16, seed=1)
        _, trace = hash_train(hash_init(5, 16, 100), corpus, config)
        assert trace[-1].total < trace[0].total


@pytest.mark.slow
@pytest.mark.parametrize("dimension, margin", [(100, 0.0), (2000, 0.05)])
def test_training_beats_random_hyperplanes(cluster_task, dimension, margin):
    gains = []
    for seed in range(3):
        task = cluster_task(seed, dimension)
        initial = hash_init(seed, 32, 2 * dimension)
        config = replace(PipelineConfig().hash_train_config(), seed=seed)
        trained, _ = hash_train(initial, task.database, config)
        gains.append(hashed_map(task, trained, 50) - hashed_map(task, initial, 50))
    assert np.median(gains) > margin

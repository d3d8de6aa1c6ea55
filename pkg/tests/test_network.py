import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import pnnkit as pk
from pnnkit.errors import NumericalError
from pnnkit.network import reward_gradients, softmax


def _model(widths, seed=0, **cfg):
    """Small random model without training."""
    config = pk.PnnConfig(hidden=tuple(widths[1:-1]), seed=seed, **cfg)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
        biases.append(rng.normal(0, 0.1, fan_out))
    return pk.PnnModel(weights, biases, config)


class TestSoftmax:
    def test_symmetric_logits(self):
        assert softmax(np.array([0.0, 0.0])).tolist() == [0.5, 0.5]

    def test_log_ratio(self):
        probs = softmax(np.array([math.log(1.0), math.log(3.0)]))
        assert probs == pytest.approx([0.25, 0.75])

    @given(shift=st.floats(-50, 50), seed=st.integers(0, 100))
    @settings(max_examples=30, deadline=None)
    def test_shift_invariance(self, shift, seed):
        z = np.random.default_rng(seed).normal(0, 3, 4)
        assert np.abs(softmax(z) - softmax(z + shift)).max() < 1e-12

    def test_rows_sum_to_one_and_positive(self):
        z = np.random.default_rng(1).normal(0, 100, (50, 5))
        probs = softmax(z)
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-12
        assert (probs > 0).all()


class TestPolicyLoss:
    def test_pure_assignment(self):
        model = _model([1, 2])
        # force logits so arm 0 has probability ~1
        model.weights[0][:] = 0.0
        model.biases[0][:] = [50.0, -50.0]
        loss = pk.policy_loss(model, np.zeros((1, 1)), np.array([[2.0, 5.0]]), "minimize")
        assert loss == pytest.approx(2.0)

    def test_even_mixture(self):
        model = _model([1, 2])
        model.weights[0][:] = 0.0
        model.biases[0][:] = 0.0
        loss = pk.policy_loss(model, np.zeros((1, 1)), np.array([[2.0, 4.0]]), "minimize")
        assert loss == pytest.approx(3.0)

    @given(seed=st.integers(0, 300))
    @settings(max_examples=25, deadline=None)
    def test_convex_combination_bounds(self, seed):
        rng = np.random.default_rng(seed)
        model = _model([3, 4, 3], seed=seed)
        X = rng.normal(0, 1, (6, 3))
        gamma = rng.normal(0, 2, (6, 3))
        loss = pk.policy_loss(model, X, gamma, "minimize")
        assert loss >= gamma.min(axis=1).mean() - 1e-9
        assert loss <= gamma.max(axis=1).mean() + 1e-9


class TestTrain:
    def test_dominant_column_always_prescribed(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(0, 1, (300, 2))
        gamma = np.column_stack([np.full(300, 1.0), np.full(300, 0.2), np.full(300, 0.9)])
        split = pk.make_split(300, 1)
        cfg = pk.PnnConfig(hidden=(16,), max_epochs=80, patience=10, seed=2, batch_size=32)
        model, _ = pk.train(X, gamma, split, cfg)
        assign, _ = pk.prescribe(model, X)
        assert (assign == 1).all()

    def test_separable_rule_recovered(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(0, 1, (2000, 2))
        gamma = np.column_stack([X[:, 0], 1 - X[:, 0]])
        split = pk.make_split(2000, 2)
        cfg = pk.PnnConfig(hidden=(32, 32), max_epochs=200, patience=15, seed=3)
        model, _ = pk.train(X, gamma, split, cfg)
        assign, _ = pk.prescribe(model, X[split.test])
        oracle = (X[split.test, 0] > 0.5).astype(int)
        assert np.mean(assign == oracle) >= 0.95

    def test_patience_zero_stops_on_first_worsening(self):
        # lr 0 freezes the model, so validation loss is constant: epoch 2
        # fails to improve and patience 0 halts with epoch 1 as best
        rng = np.random.default_rng(2)
        X = rng.uniform(0, 1, (40, 2))
        gamma = rng.uniform(0, 1, (40, 2))
        split = pk.make_split(40, 3)
        cfg = pk.PnnConfig(hidden=(4,), max_epochs=50, patience=0, seed=4, learning_rate=0.0, dropout=0.0)
        _, trace = pk.train(X, gamma, split, cfg)
        assert trace.best_epoch == 1
        assert trace.stopped_epoch == 2

    def test_maximize_equals_minimize_on_negated(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(0, 1, (200, 2))
        gamma = rng.normal(0, 1, (200, 2))
        split = pk.make_split(200, 4)
        cfg_min = pk.PnnConfig(hidden=(8,), max_epochs=25, patience=5, seed=5, direction="minimize")
        cfg_max = pk.PnnConfig(hidden=(8,), max_epochs=25, patience=5, seed=5, direction="maximize")
        m1, t1 = pk.train(X, gamma, split, cfg_min)
        m2, t2 = pk.train(X, -gamma, split, cfg_max)
        assert t1.train_loss == t2.train_loss
        assert t1.val_loss == t2.val_loss
        for a, b in zip(m1.weights, m2.weights):
            assert (a == b).all()

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(0, 1, (150, 3))
        gamma = rng.normal(0, 1, (150, 2))
        split = pk.make_split(150, 5)
        cfg = pk.PnnConfig(hidden=(8, 8), max_epochs=15, patience=5, seed=6)
        m1, t1 = pk.train(X, gamma, split, cfg)
        m2, t2 = pk.train(X, gamma, split, cfg)
        assert t1.train_loss == t2.train_loss
        for a, b in zip(m1.weights, m2.weights):
            assert (a == b).all()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_reports_epoch(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(0, 1, (40, 2))
        gamma = rng.normal(0, 1, (40, 2))
        gamma[3, 1] = np.inf  # poisons the expected-reward sum
        split = pk.make_split(40, 6)
        cfg = pk.PnnConfig(hidden=(4,), max_epochs=10, patience=5, seed=7)
        with pytest.raises(NumericalError, match="epoch 1"):
            pk.train(X, gamma, split, cfg)


class TestPrescribe:
    def test_argmax(self):
        model = _model([1, 2])
        model.weights[0][:] = 0.0
        model.biases[0][:] = [0.2, 0.8]
        assign, probs = pk.prescribe(model, np.zeros((1, 1)))
        assert assign[0] == 1

    def test_exact_tie_takes_lowest_index(self):
        model = _model([1, 2])
        model.weights[0][:] = 0.0
        model.biases[0][:] = 0.0
        assign, _ = pk.prescribe(model, np.zeros((3, 1)))
        assert (assign == 0).all()

    def test_constant_logit_shift_invariant(self):
        model = _model([2, 3], seed=8)
        X = np.random.default_rng(8).normal(0, 1, (20, 2))
        assign1, _ = pk.prescribe(model, X)
        shifted = pk.PnnModel(
            [W.copy() for W in model.weights],
            [b.copy() for b in model.biases],
            model.config,
        )
        shifted.biases[-1] = shifted.biases[-1] + 7.0
        assign2, _ = pk.prescribe(shifted, X)
        assert (assign1 == assign2).all()


class TestThresholded:
    def _fixed(self, p0, p1):
        model = _model([1, 2])
        model.weights[0][:] = 0.0
        model.biases[0][:] = [math.log(p0), math.log(p1)]
        return model

    def test_zero_thresholds_match_plain(self):
        model = _model([2, 4, 3], seed=9)
        X = np.random.default_rng(9).normal(0, 1, (30, 2))
        plain, _ = pk.prescribe(model, X)
        thr = pk.prescribe_thresholded(model, X, [0.0, 0.0, 0.0])
        assert (plain == thr).all()

    def test_threshold_reroutes(self):
        model = self._fixed(0.6, 0.4)
        out = pk.prescribe_thresholded(model, np.zeros((1, 1)), [0.9, 0.3])
        assert out[0] == 1

    def test_no_qualifier_falls_back_to_argmax(self):
        model = self._fixed(0.6, 0.4)
        out = pk.prescribe_thresholded(model, np.zeros((1, 1)), [0.9, 0.5])
        assert out[0] == 0


class TestGradients:
    def test_small_network_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        model = _model([3, 4, 2], seed=11)
        X = rng.normal(0, 1, (8, 3))
        gamma = rng.normal(0, 1, (8, 2))
        assert pk.grad_check(model, X, gamma) < 1e-5

    def test_zero_rewards_zero_gradient(self):
        model = _model([2, 3, 2], seed=12)
        X = np.random.default_rng(12).normal(0, 1, (5, 2))
        gW, gB = reward_gradients(model, X, np.zeros((5, 2)))
        assert all(np.abs(g).max() == 0.0 for g in gW)
        assert all(np.abs(g).max() == 0.0 for g in gB)

    def test_decay_gradient_closed_form(self):
        model = _model([2, 3, 2], seed=13, weight_decay=0.01)
        X = np.random.default_rng(13).normal(0, 1, (5, 2))
        gW, _ = reward_gradients(model, X, np.zeros((5, 2)))
        for W, g in zip(model.weights, gW):
            assert np.abs(g - 2 * 0.01 * W).max() < 1e-8


class TestSerialization:
    def test_roundtrip_reproduces_prescriptions(self):
        rng = np.random.default_rng(14)
        X = rng.uniform(0, 1, (100, 2))
        gamma = np.column_stack([X[:, 0], 1 - X[:, 0]])
        split = pk.make_split(100, 7)
        cfg = pk.PnnConfig(hidden=(8,), max_epochs=20, patience=5, seed=15)
        model, _ = pk.train(X, gamma, split, cfg)
        back = pk.model_from_json(pk.model_to_json(model))
        a1, p1 = pk.prescribe(model, X)
        a2, p2 = pk.prescribe(back, X)
        assert (a1 == a2).all()
        assert (p1 == p2).all()

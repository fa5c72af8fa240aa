import numpy as np
import pytest

from oracles import check_gradients
from spkver.backend import PldaModel, PldaScorer
from spkver.metrics import DcfParams
from spkver.nplda import (
    NpldaParams,
    NpldaTrainConfig,
    init_from_plda,
    nplda_score,
    nplda_scores,
    soft_detcost,
    train_nplda,
)


def _random_pd(rng, dim, scale=1.0):
    a = rng.normal(size=(dim, dim))
    return scale * (a @ a.T / dim + 0.2 * np.eye(dim))


def _model(seed=0, dim=2):
    rng = np.random.default_rng(seed)
    return PldaModel(
        mu=rng.normal(size=dim),
        sigma_b=_random_pd(rng, dim),
        sigma_w=_random_pd(rng, dim, scale=0.6),
    )


class TestInitFromPlda:
    @pytest.mark.parametrize("dim", [2, 5])
    def test_reproduces_generative_llr_pointwise(self, dim):
        model = _model(seed=dim, dim=dim)
        params = init_from_plda(model)
        scorer = PldaScorer(model)
        rng = np.random.default_rng(100 + dim)
        for _ in range(100):
            e = model.mu + rng.normal(size=dim)
            t = model.mu + rng.normal(size=dim)
            assert abs(nplda_score(params, e, t) - scorer.score(e, t)) < 1e-8

    def test_zero_between_covariance(self):
        model = PldaModel(mu=np.ones(3), sigma_b=np.zeros((3, 3)), sigma_w=np.eye(3))
        params = init_from_plda(model)
        np.testing.assert_allclose(params.lam, 0.0, atol=1e-12)
        rng = np.random.default_rng(0)
        for _ in range(5):
            assert nplda_score(params, rng.normal(size=3), rng.normal(size=3)) == pytest.approx(0.0, abs=1e-10)

    def test_zero_epochs_leaves_scores_unchanged(self):
        model = _model(3)
        params = init_from_plda(model)
        rng = np.random.default_rng(4)
        e = rng.normal(size=(10, 2))
        t = rng.normal(size=(10, 2))
        labels = [True] * 5 + [False] * 5
        result = train_nplda(
            params, e, t, labels, ["p"] * 10, ["p"] * 10,
            NpldaTrainConfig(epochs=0),
        )
        np.testing.assert_array_equal(
            nplda_scores(result.params, e, t), nplda_scores(params, e, t)
        )


class TestNpldaScore:
    def test_constant_params(self):
        params = NpldaParams(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros(2), 3.0)
        rng = np.random.default_rng(1)
        assert nplda_score(params, rng.normal(size=2), rng.normal(size=2)) == 3.0

    def test_symmetric_in_arguments(self):
        rng = np.random.default_rng(2)
        lam = rng.normal(size=(3, 3))  # deliberately asymmetric
        gamma = _random_pd(rng, 3)
        params = NpldaParams(lam, gamma, rng.normal(size=3), -0.5)
        for _ in range(10):
            e, t = rng.normal(size=3), rng.normal(size=3)
            assert nplda_score(params, e, t) == pytest.approx(
                nplda_score(params, t, e), abs=1e-12
            )

    def test_dimension_mismatch(self):
        params = NpldaParams(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros(2), 0.0)
        with pytest.raises(ValueError):
            nplda_score(params, np.zeros(3), np.zeros(3))


class TestSoftDetcost:
    def test_separated_scores_with_sharp_sigmoid(self):
        scores = np.array([5.0, 6.0, -5.0, -6.0])
        labels = np.array([True, True, False, False])
        loss, _, _ = soft_detcost(scores, labels, theta=0.0, alpha=50.0)
        assert loss < 1e-8

    def test_symmetric_case(self):
        scores = np.array([1.0, -1.0, 1.0, -1.0])
        labels = np.array([True, True, False, False])
        params = DcfParams(p_target=0.5, c_miss=1.0, c_fa=1.0)
        loss, _, _ = soft_detcost(scores, labels, theta=0.0, alpha=2.0, cost_params=params)
        # P_miss = P_fa = mean(sig(+-2)) = 0.5 by symmetry
        sig = 0.5 * (1 + np.tanh(1.0))
        expected = (0.5 * ((sig + (1 - sig)) / 2) + 0.5 * ((sig + (1 - sig)) / 2)) / 0.5
        assert loss == pytest.approx(expected)

    def test_single_class_raises(self):
        with pytest.raises(ValueError):
            soft_detcost(np.ones(3), np.array([True, True, True]), 0.0, 10.0)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            scores = rng.normal(size=9)
            labels = np.array([True] * 4 + [False] * 5)
            theta = float(rng.normal())
            loss, d_scores, d_theta = soft_detcost(scores, labels, theta, alpha=4.0)

            def fn(arrays):
                value, _, _ = soft_detcost(arrays["scores"], labels,
                                           float(arrays["theta"]), alpha=4.0)
                return value

            check_gradients(
                fn,
                {"scores": scores.copy(), "theta": np.array(theta)},
                {"scores": d_scores, "theta": np.array(d_theta)},
            )


class TestTrainNplda:
    def _training_set(self, seed=0, n=60):
        model = _model(seed)
        params = init_from_plda(model)
        rng = np.random.default_rng(seed + 1)
        lb = np.linalg.cholesky(model.sigma_b)
        lw = np.linalg.cholesky(model.sigma_w)
        e, t, labels = [], [], []
        for i in range(n):
            y = lb @ rng.normal(size=2)
            e.append(model.mu + y + lw @ rng.normal(size=2))
            if i % 2 == 0:
                t.append(model.mu + y + lw @ rng.normal(size=2))
                labels.append(True)
            else:
                y2 = lb @ rng.normal(size=2)
                t.append(model.mu + y2 + lw @ rng.normal(size=2))
                labels.append(False)
        return params, np.asarray(e), np.asarray(t), labels

    def test_training_cost_never_ends_higher(self):
        params, e, t, labels = self._training_set(7)
        result = train_nplda(
            params, e, t, labels, ["p"] * len(labels), ["p"] * len(labels),
            NpldaTrainConfig(learning_rate=5e-5, epochs=5),
        )
        assert result.loss_trace[-1] <= result.loss_trace[0]
        assert len(result.loss_trace) == 6

    def test_mixed_phrase_pair_rejected_before_update(self):
        params, e, t, labels = self._training_set(8)
        phrases_e = ["p"] * len(labels)
        phrases_t = ["p"] * len(labels)
        phrases_t[3] = "q"
        with pytest.raises(ValueError, match="same-phrase constraint"):
            train_nplda(params, e, t, labels, phrases_e, phrases_t, NpldaTrainConfig())

    def test_single_class_batch_rejected(self):
        params, e, t, labels = self._training_set(9)
        with pytest.raises(ValueError):
            train_nplda(params, e, t, [True] * len(labels), ["p"] * len(labels),
                        ["p"] * len(labels), NpldaTrainConfig())

    def test_deterministic(self):
        params, e, t, labels = self._training_set(10)
        cfg = NpldaTrainConfig(epochs=3)
        a = train_nplda(params, e, t, labels, ["p"] * len(labels), ["p"] * len(labels), cfg)
        b = train_nplda(params, e, t, labels, ["p"] * len(labels), ["p"] * len(labels), cfg)
        np.testing.assert_array_equal(a.params.lam, b.params.lam)
        assert a.theta == b.theta and a.loss_trace == b.loss_trace

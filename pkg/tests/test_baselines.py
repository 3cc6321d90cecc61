#!/usr/bin/env python3
"""
Unit tests for the streaming baselines

Run tests with:
    python -m pytest tests/test_baselines.py -v
"""

import unittest

import numpy as np

from baselines import (
    EmptyModelError, LinearHead, NcmModel, ReplayBuffer, ReplayLearner, SingularCovarianceError, SldaModel,
    finetune_step, ncm_predict, ncm_update, perceptron_step, replay_step, slda_predict, slda_update,
)
from core import InvariantViolation, Rng


class TestNcm(unittest.TestCase):

    def test_01_first_sample_is_mean(self):
        m = ncm_update(NcmModel(2), np.array([1.0, 2.0]), 0)
        np.testing.assert_array_equal(m.means[0], [1.0, 2.0])

    def test_02_two_samples(self):
        m = NcmModel(2)
        m.update(np.array([1.0, 0.0]), 0)
        m.update(np.array([0.0, 1.0]), 0)
        np.testing.assert_allclose(m.means[0], [0.5, 0.5])

    def test_03_matches_batch_mean(self):
        rng = Rng(1)
        xs = rng.normal(1000 * 6).reshape(1000, 6)
        m = NcmModel(6)
        for x in xs:
            m.update(x, 0)
        np.testing.assert_allclose(m.means[0], xs.mean(axis=0), atol=1e-9, rtol=0)

    def test_04_midpoint_tie_goes_to_lower_id(self):
        m = NcmModel(2)
        m.update(np.array([-1.0, 0.0]), 4)
        m.update(np.array([1.0, 0.0]), 2)
        self.assertEqual(ncm_predict(m, np.array([0.0, 0.0])), 2)

    def test_05_matches_linear_scan(self):
        rng = Rng(2)
        m = NcmModel(5)
        for x, k in zip(rng.normal(60 * 5).reshape(60, 5), rng.integers(6, 60)):
            m.update(x, int(k))
        for x in rng.normal(50 * 5).reshape(50, 5):
            distances = {k: float(np.linalg.norm(x - mu)) for k, mu in m.means.items()}
            self.assertEqual(m.predict(x), min(sorted(distances), key=distances.get))

    def test_06_empty_model(self):
        with self.assertRaises(EmptyModelError):
            NcmModel(3).predict(np.ones(3))

    def test_07_writes_d_components_per_sample(self):
        m = NcmModel(7)
        for _ in range(5):
            m.update(np.ones(7), 1)
        self.assertEqual(m.counters.weight_writes, 35)


class TestSlda(unittest.TestCase):

    def test_01_single_sample_has_no_covariance(self):
        m = slda_update(SldaModel(3), np.array([1.0, 2.0, 3.0]), 0)
        np.testing.assert_array_equal(m.covariance, np.zeros((3, 3)))

    def test_02_matches_two_pass_covariance(self):
        rng = Rng(3)
        n, d = 500, 6
        xs = rng.normal(n * d).reshape(n, d)
        labels = rng.integers(4, n)
        m = SldaModel(d)
        for x, k in zip(xs, labels):
            m.update(x, int(k))
        centered = np.vstack([xs[labels == k] - xs[labels == k].mean(axis=0) for k in np.unique(labels)])
        np.testing.assert_allclose(m.covariance, centered.T @ centered / n, atol=1e-8, rtol=0)

    def test_03_frozen_covariance_never_changes(self):
        init = np.eye(3) * 0.5
        m = SldaModel(3, frozen=True, init_covariance=init)
        rng = Rng(4)
        for x in rng.normal(40 * 3).reshape(40, 3):
            m.update(x, 0)
            m.update(-x, 1)
        np.testing.assert_array_equal(m.covariance, init)

    def test_04_precision_cache_is_inverse(self):
        rng = Rng(5)
        m = SldaModel(4)
        for x, k in zip(rng.normal(100 * 4).reshape(100, 4), rng.integers(3, 100)):
            m.update(x, int(k))
        precision = m.refresh()
        self.assertFalse(m.cache_dirty)
        np.testing.assert_allclose(precision @ m.shrunk_covariance(), np.eye(4), atol=1e-6)
        m.update(np.ones(4), 0)
        self.assertTrue(m.cache_dirty)

    def test_05_cached_and_uncached_predictions_agree(self):
        rng = Rng(6)
        m = SldaModel(5)
        for x, k in zip(rng.normal(200 * 5).reshape(200, 5), rng.integers(4, 200)):
            m.update(x + k, int(k))
        queries = rng.normal(50 * 5).reshape(50, 5)
        self.assertEqual([m.predict(x) for x in queries], [m.predict(x, use_cache=False) for x in queries])

    def test_06_large_shrinkage_reduces_to_ncm(self):
        rng = Rng(7)
        slda, ncm = SldaModel(8, shrinkage=1e6), NcmModel(8)
        centers = 2.0 * rng.normal(3 * 8).reshape(3, 8)
        for step in range(300):
            k = step % 3
            x = centers[k] + rng.normal(8)
            slda.update(x, k)
            ncm.update(x, k)
        for x in rng.normal(100 * 8).reshape(100, 8):
            self.assertEqual(slda_predict(slda, x), ncm.predict(x))

    def test_07_identical_means_tie_to_lowest_id(self):
        m = SldaModel(2)
        m.update(np.array([1.0, 1.0]), 5)
        m.update(np.array([1.0, 1.0]), 3)
        self.assertEqual(m.predict(np.array([0.2, -0.4])), 3)

    def test_08_two_dimensional_hand_case(self):
        m = SldaModel(2, shrinkage=0.0)
        for x in ([1.0, 0.0], [3.0, 0.0], [1.0, 2.0], [3.0, 2.0]):
            m.update(np.array(x), 0)
        for x in ([-1.0, 0.0], [-3.0, 0.0], [-1.0, 2.0], [-3.0, 2.0]):
            m.update(np.array(x), 1)
        np.testing.assert_allclose(m.covariance, np.eye(2))
        labels, scores = m.scores(np.array([0.5, 1.0]))
        # identity precision: score_k = mu_k.x - |mu_k|^2 / 2 with mu_0 = (2, 1), mu_1 = (-2, 1)
        expected = {0: 2.0 * 0.5 + 1.0 - 2.5, 1: -2.0 * 0.5 + 1.0 - 2.5}
        for label, score in zip(labels, scores):
            self.assertAlmostEqual(score, expected[label])

    def test_09_singular_covariance(self):
        m = SldaModel(2, shrinkage=0.0)
        m.update(np.array([0.0, 0.0]), 0)
        m.update(np.array([1.0, 0.0]), 0)
        m.update(np.array([5.0, 5.0]), 1)
        with self.assertRaises(SingularCovarianceError):
            m.predict(np.array([1.0, 1.0]))

    def test_10_frozen_default_matches_ncm(self):
        rng = Rng(8)
        slda, ncm = SldaModel(6, frozen=True), NcmModel(6)
        for step in range(120):
            x = rng.normal(6) + (step % 4)
            slda.update(x, step % 4)
            ncm.update(x, step % 4)
        for x in rng.normal(60 * 6).reshape(60, 6):
            self.assertEqual(slda.predict(x), ncm.predict(x))


class TestLinearHead(unittest.TestCase):

    def test_01_perceptron_mistake_bound(self):
        # two classes separated by margin 0.6 along the first axis, unit-norm samples
        rng = Rng(9)
        d = 8
        head = LinearHead(d)
        for step in range(400):
            k = step % 2
            noise = rng.normal(d)
            noise[0] = 0.0
            noise *= 0.8 / np.linalg.norm(noise)
            x = noise.copy()
            x[0] = 0.6 if k == 0 else -0.6
            perceptron_step(head, x, k)
        margin = 0.6 / np.sqrt(2.0)
        self.assertLessEqual(head.mistakes, int(np.ceil(2.0 / margin ** 2)))

    def test_02_gradient_matches_finite_differences(self):
        rng = Rng(10)
        head = LinearHead(5)
        for k in range(3):
            head.row(k)
        head.weights = 0.3 * rng.normal(15).reshape(3, 5)
        head.bias = 0.1 * rng.normal(3)
        X = rng.normal(10).reshape(2, 5)
        labels = [2, 0]
        grad_w, grad_b = head.gradient(X, labels)
        h = 1e-6
        for i in range(3):
            for j in range(5):
                head.weights[i, j] += h
                plus = head.loss(X, labels)
                head.weights[i, j] -= 2 * h
                minus = head.loss(X, labels)
                head.weights[i, j] += h
                self.assertAlmostEqual((plus - minus) / (2 * h), grad_w[i, j], delta=1e-5)
            head.bias[i] += h
            plus = head.loss(X, labels)
            head.bias[i] -= 2 * h
            minus = head.loss(X, labels)
            head.bias[i] += h
            self.assertAlmostEqual((plus - minus) / (2 * h), grad_b[i], delta=1e-5)

    def test_03_finetune_learns_separable_pair(self):
        head = LinearHead(2, step_size=0.5)
        for _ in range(50):
            finetune_step(head, np.array([1.0, 0.0]), 0)
            finetune_step(head, np.array([0.0, 1.0]), 1)
        self.assertEqual(head.predict(np.array([1.0, 0.1])), 0)
        self.assertEqual(head.predict(np.array([0.1, 1.0])), 1)
        self.assertTrue(np.all(np.isfinite(head.weights)))

    def test_04_non_finite_weights_detected(self):
        head = LinearHead(2)
        head.row(0)
        head.weights[0] = [1.0, 0.0]
        with self.assertRaises(InvariantViolation):
            head.perceptron_step(np.array([np.inf, 0.0]), 1)

    def test_05_rejects_bad_step(self):
        with self.assertRaises(ValueError):
            LinearHead(2, step_size=0.0)


class TestReplay(unittest.TestCase):

    def test_01_buffer_evicts_oldest(self):
        buffer = ReplayBuffer(capacity=3)
        for i in range(5):
            buffer.add(np.array([float(i)]), 0)
        self.assertEqual(buffer.occupancy(0), 3)
        xs, labels = buffer.samples()
        self.assertEqual([float(x[0]) for x in xs], [2.0, 3.0, 4.0])
        self.assertEqual(labels, [0, 0, 0])

    def test_02_replay_step_uses_buffer_then_inserts(self):
        learner = ReplayLearner(3, capacity=2)
        replay_step(learner, np.array([1.0, 0.0, 0.0]), 0)
        self.assertEqual(len(learner.buffer), 1)
        writes_first = learner.counters.weight_writes
        replay_step(learner, np.array([0.0, 1.0, 0.0]), 1)
        self.assertEqual(len(learner.buffer), 2)
        self.assertGreater(learner.counters.weight_writes, writes_first)
        for _ in range(5):
            replay_step(learner, np.array([0.0, 0.0, 2.0]), 2)
        self.assertEqual(learner.buffer.occupancy(2), 2)

    def test_03_checkpoint_carries_buffer(self):
        learner = ReplayLearner(2, capacity=4)
        learner.replay_step(np.array([3.0, 4.0]), 1)
        envelope = learner.to_checkpoint()
        self.assertEqual(envelope.method, "replay")
        self.assertEqual(envelope.payload["buffer"], [{"label": 1, "x": [3.0, 4.0]}])


class TestCheckpoints(unittest.TestCase):

    def test_ncm_and_slda_round_trip(self):
        rng = Rng(11)
        ncm, slda = NcmModel(4), SldaModel(4)
        for x, k in zip(rng.normal(80).reshape(20, 4), rng.integers(3, 20)):
            ncm.update(x, int(k))
            slda.update(x, int(k))
        ncm2 = NcmModel.from_checkpoint(ncm.to_checkpoint())
        slda2 = SldaModel.from_checkpoint(slda.to_checkpoint())
        for x in rng.normal(40).reshape(10, 4):
            self.assertEqual(ncm.predict(x), ncm2.predict(x))
            self.assertEqual(slda.predict(x), slda2.predict(x))


if __name__ == "__main__":
    unittest.main()

# Standard library imports
import dataclasses
import unittest

# Third party imports
import numpy as np

# Local application imports
from combinatorial_recommender import api
from combinatorial_recommender import training
from combinatorial_recommender.config import EvaluatorConfig, GeneratorConfig
from combinatorial_recommender.errors import ConfigurationError, UsageError
from combinatorial_recommender.evaluator import EvaluatorModel, predict_list_ctr
from combinatorial_recommender.generator import GeneratorModel, list_log_prob, policy_matrix
from combinatorial_recommender.micrograd import AdaGradState, parameter_checksum
from combinatorial_recommender.sampler import GenerationConfig, MaxPerCategoryRule
from combinatorial_recommender.tests.helpers import (
    SLOW,
    SLOW_REASON,
    numeric_gradient,
    random_sample,
    relative_error,
    tiny_schema,
)

SMALL_EVALUATOR = EvaluatorConfig(point_sizes=(4, 3), head_sizes=(5,), epochs=1, batch_size=8)
SMALL_GENERATOR = GeneratorConfig(point_sizes=(8, 6), classifier_sizes=(8,), epochs=2, batch_size=8,
                                  train_rounds=3, eval_rounds=2, temperature=2.0, learning_rate=0.05)


def _fixed_batch(samples, slates, rewards, temperature=2.0):
    entries = [training.BatchEntry(sample, s, r, np.zeros(len(s))) for sample, s, r in zip(samples, slates, rewards)]
    return training.TrainBatch(entries, temperature)


class test_training(unittest.TestCase):
    def setUp(self):
        self.schema = tiny_schema()
        rng = np.random.default_rng(0)
        self.samples = [random_sample(rng, 5, 2, self.schema) for _ in range(12)]
        self.evaluator = EvaluatorModel.build(self.schema, 2, SMALL_EVALUATOR, np.random.default_rng(1))
        self.generator = GeneratorModel.build(self.schema, 2, SMALL_GENERATOR, np.random.default_rng(2))

    def test_reward_naive(self):
        sample = self.samples[0]
        positions = sample.selected.positions
        self.assertEqual(training.reward_naive(positions, sample), 1)
        self.assertEqual(training.reward_naive(positions[::-1], sample), 0)
        others = tuple(i for i in range(5) if i not in positions)[:2]
        self.assertEqual(training.reward_naive(others, sample), 0)

    def test_reward_ctr_is_mean_ctr(self):
        sample = self.samples[1]
        for slate in [(0, 1), (4, 2), (3, 0)]:
            expected = predict_list_ctr(self.evaluator, sample.candidate_set, slate).per_item_ctr.mean()
            self.assertAlmostEqual(training.reward_ctr(slate, self.evaluator, sample.candidate_set), expected)
        zero = EvaluatorModel.build(self.schema, 2, SMALL_EVALUATOR, np.random.default_rng(1), zero_head=True)
        self.assertEqual(training.reward_ctr((0, 1), zero, sample.candidate_set), 0.5)

    def test_equal_rewards_leave_parameters(self):
        batch = _fixed_batch(self.samples[:2], [[(0, 1), (2, 3)], [(4, 0)]], [[0.5, 0.5], [0.5]])
        before = parameter_checksum(self.generator.parameters())
        state = AdaGradState.for_parameters(self.generator.parameters(), 0.1)
        training.policy_gradient_step(self.generator, batch, state)
        self.assertEqual(before, parameter_checksum(self.generator.parameters()))

    def test_reward_shift_invariance(self):
        slates = [[(0, 1), (2, 3), (1, 4)], [(4, 0), (3, 2)]]
        rewards = [[0.1, 0.5, 0.2], [0.9, 0.4]]
        _, grads, _ = training.surrogate_loss(self.generator, _fixed_batch(self.samples[:2], slates, rewards))
        shifted = [[r + 3.0 for r in group] for group in rewards]
        _, moved, _ = training.surrogate_loss(self.generator, _fixed_batch(self.samples[:2], slates, shifted))
        for name in grads:
            np.testing.assert_allclose(grads[name], moved[name], rtol=1e-9, atol=1e-12)

    def test_positive_advantage_favours_better_slate(self):
        sample = self.samples[2]
        better, worse = (3, 1), (0, 2)
        batch = _fixed_batch([sample], [[better, worse]], [[1.0, 0.0]])

        def margin():
            policy = policy_matrix(self.generator, sample.candidate_set)
            return list_log_prob(policy, better, 2.0) - list_log_prob(policy, worse, 2.0)

        before, surrogate_before = margin(), training.surrogate_loss(self.generator, batch)[0]
        state = AdaGradState.for_parameters(self.generator.parameters(), 0.001)
        training.policy_gradient_step(self.generator, batch, state)
        self.assertGreater(margin(), before)
        self.assertLess(training.surrogate_loss(self.generator, batch)[0], surrogate_before)

    def test_surrogate_gradient(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            model = GeneratorModel.build(self.schema, 2, SMALL_GENERATOR, rng)
            samples = [random_sample(rng, 4, 2, self.schema) for _ in range(2)]
            slates = [[tuple(int(i) for i in rng.permutation(4)[:2]) for _ in range(3)] for _ in samples]
            slates = [list(dict.fromkeys(group)) for group in slates]
            rewards = [list(rng.random(len(group))) for group in slates]
            batch = _fixed_batch(samples, slates, rewards)
            _, grads, _ = training.surrogate_loss(model, batch)
            params = model.parameters()
            for name in ("classifier.1.w", "point.1.w"):
                numeric = numeric_gradient(lambda: training.surrogate_loss(model, batch)[0], params[name])
                self.assertLess(relative_error(grads[name], numeric), 1e-4, name)

    def test_empty_batch(self):
        with self.assertRaises(UsageError):
            training.surrogate_loss(self.generator, training.TrainBatch([], 1.0))

    def test_greedy_top_ctr_slate(self):
        sample = self.samples[3]
        slate = training.greedy_top_ctr_slate(self.evaluator, sample.candidate_set)
        self.assertEqual(len(set(slate)), 2)
        self.assertTrue(all(0 <= i < 5 for i in slate))

    def test_assemble_batch_includes_logged_slate(self):
        generation = GenerationConfig(2.0, 3, 2)
        batch = training.assemble_batch(self.generator, self.samples[:3], training.RewardFn.naive(), generation,
                                        np.random.default_rng(0), lambda s: [s.selected.positions])
        for entry in batch.entries:
            self.assertIn(entry.sample.selected.positions, entry.slates)
            self.assertEqual(entry.rewards[entry.slates.index(entry.sample.selected.positions)], 1.0)
            self.assertTrue(np.all(entry.log_probs <= 0))

    def test_dead_end_samples_are_skipped(self):
        rng = np.random.default_rng(5)
        samples = [random_sample(rng, 5, 3, self.schema) for _ in range(4)]
        generator = GeneratorModel.build(self.schema, 3, SMALL_GENERATOR, np.random.default_rng(6))
        evaluator = EvaluatorModel.build(self.schema, 3, SMALL_EVALUATOR, np.random.default_rng(7))
        rule = MaxPerCategoryRule([0] * 5, max_count=2)
        generation = GenerationConfig(2.0, 3, 3, rule)
        batch = training.assemble_batch(generator, samples, training.RewardFn.naive(), generation,
                                        np.random.default_rng(0))
        self.assertEqual((batch.entries, batch.exhausted), ([], 4))

        before = parameter_checksum(generator.parameters())
        _, metrics = training.train_generator(api.MODE_CTR, samples, evaluator, SMALL_GENERATOR, model=generator,
                                              holdout=samples[:2], rule=rule)
        self.assertEqual(before, parameter_checksum(generator.parameters()))
        self.assertEqual(len(metrics), SMALL_GENERATOR.epochs)
        self.assertTrue(np.isnan(metrics[-1].mean_reward))
        self.assertTrue(np.isnan(metrics[-1].average_ctr))

    def test_ctr_mode_needs_evaluator(self):
        with self.assertRaises(ConfigurationError):
            training.train_generator(api.MODE_CTR, self.samples, None, SMALL_GENERATOR, schema=self.schema)

    def test_ctr_mode_freezes_evaluator(self):
        before = parameter_checksum(self.evaluator.parameters())
        _, metrics = training.train_generator(api.MODE_CTR, self.samples, self.evaluator, SMALL_GENERATOR,
                                              schema=self.schema)
        self.assertEqual(before, parameter_checksum(self.evaluator.parameters()))
        self.assertEqual([row.epoch for row in metrics], [1, 2])
        self.assertTrue(all(0 < row.average_ctr < 1 for row in metrics))

    def test_same_seed_same_curves(self):
        runs = [training.train_generator(api.MODE_CTR, self.samples, self.evaluator, SMALL_GENERATOR,
                                         schema=self.schema)[1] for _ in range(2)]
        self.assertEqual([list(dict(row).values()) for row in runs[0]], [list(dict(row).values()) for row in runs[1]])

    def test_naive_mode_overfits(self):
        rng = np.random.default_rng(4)
        samples = [random_sample(rng, 6, 2, self.schema) for _ in range(100)]
        config = dataclasses.replace(SMALL_GENERATOR, point_sizes=(32, 32), classifier_sizes=(32,), epochs=150,
                                     batch_size=10, learning_rate=0.05)
        _, metrics = training.train_generator(api.MODE_NAIVE, samples, config=config, schema=self.schema,
                                              holdout=samples)
        self.assertGreater(metrics[-1].selection_accuracy, 0.9)

    @unittest.skipUnless(SLOW, SLOW_REASON)
    def test_ctr_beats_naive(self):
        from combinatorial_recommender.experiments import compare_generator_modes
        frame = compare_generator_modes(seeds=(1, 2, 3, 4, 5), requests=1500,
                                        evaluator_config=EvaluatorConfig(epochs=5),
                                        generator_config=GeneratorConfig(epochs=5))
        self.assertTrue((frame["relative_gain"] >= 0.10).all(), frame)


if __name__ == "__main__":
    unittest.main()

# Standard library imports
import itertools
import unittest

# Third party imports
import numpy as np

# Local application imports
from combinatorial_recommender import generator
from combinatorial_recommender.config import GeneratorConfig
from combinatorial_recommender.datamodel import rank_label
from combinatorial_recommender.errors import ConfigurationError, SamplingDomainError, UsageError
from combinatorial_recommender.sampler import MaxPerCategoryRule
from combinatorial_recommender.tests.helpers import (
    EXAMPLE_POLICY,
    numeric_gradient,
    random_candidate_set,
    relative_error,
    tiny_schema,
)

SMALL = GeneratorConfig(point_sizes=(4, 3), classifier_sizes=(5,))


def _reference_softmax2d(logits, ids, lambda_rank):
    list_len, n = logits.shape[0] - 1, logits.shape[1]
    total = 0.0
    for i in range(list_len):
        row = logits[i]
        total += np.log(sum(np.exp(v) for v in row)) - row[ids[i]]
    ranks = rank_label(ids, n, list_len)
    for j in range(n):
        column = logits[:, j]
        total += lambda_rank * (np.log(sum(np.exp(v) for v in column)) - column[ranks[j] - 1])
    return total


def _random_policy(rng, list_len, n):
    return generator.column_softmax(rng.normal(size=(list_len + 1, n)))


class test_generator(unittest.TestCase):
    def setUp(self):
        self.schema = tiny_schema()
        self.model = generator.GeneratorModel.build(self.schema, 3, SMALL, np.random.default_rng(0))

    def test_policy_matrix_columns(self):
        candidate_set = random_candidate_set(np.random.default_rng(1), 6, self.schema)
        policy = generator.policy_matrix(self.model, candidate_set)
        self.assertEqual(policy.entries.shape, (4, 6))
        np.testing.assert_allclose(policy.entries.sum(axis=0), 1.0, atol=1e-12)

    def test_policy_matrix_needs_enough_candidates(self):
        candidate_set = random_candidate_set(np.random.default_rng(1), 2, self.schema)
        with self.assertRaises(UsageError):
            generator.policy_matrix(self.model, candidate_set)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        candidate_set = random_candidate_set(rng, 7, self.schema)
        order = rng.permutation(7)
        original = generator.policy_matrix(self.model, candidate_set).entries
        permuted = generator.policy_matrix(self.model, candidate_set.permuted(order)).entries
        np.testing.assert_allclose(permuted, original[:, order], rtol=0, atol=1e-12)

    def test_zero_classifier_gives_uniform_columns(self):
        for layer in self.model.classifier_layers[-1:]:
            layer.weights[:] = 0.0
            layer.bias[:] = 0.0
        candidate_set = random_candidate_set(np.random.default_rng(3), 5, self.schema)
        np.testing.assert_allclose(generator.policy_matrix(self.model, candidate_set).entries, 0.25)

    def test_softmax2d_examples(self):
        ids = [0, 1, 2, 3]
        self.assertAlmostEqual(generator.softmax2d_loss(np.zeros((5, 6)), ids, 1.0),
                               4 * np.log(6) + 6 * np.log(5), places=10)
        logits = np.full((5, 6), -20.0)
        ranks = rank_label(ids, 6, 4) - 1
        logits[np.arange(4), ids] = 20.0
        logits[ranks, np.arange(6)] = 20.0
        self.assertLess(generator.softmax2d_loss(logits, ids, 1.0), 1e-6)
        with self.assertRaises(ConfigurationError):
            generator.softmax2d_loss(logits, ids, -0.1)

    def test_softmax2d_matches_reference(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            logits = rng.normal(size=(4, 7))
            ids = [int(i) for i in rng.permutation(7)[:3]]
            lambda_rank = float(rng.uniform(0, 2))
            self.assertAlmostEqual(generator.softmax2d_loss(logits, ids, lambda_rank),
                                   _reference_softmax2d(logits, ids, lambda_rank), delta=1e-10)
            id_only = generator.softmax2d_loss(logits, ids, 0.0)
            self.assertAlmostEqual(id_only, _reference_softmax2d(logits, ids, 0.0), delta=1e-10)
            self.assertLessEqual(id_only, generator.softmax2d_loss(logits, ids, lambda_rank))

    def test_softmax2d_gradient(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            logits = rng.normal(size=(4, 6))
            ids = [int(i) for i in rng.permutation(6)[:3]]
            _, grad = generator.softmax2d_loss_and_grad(logits, ids, 0.7)
            numeric = numeric_gradient(lambda: generator.softmax2d_loss(logits, ids, 0.7), logits)
            self.assertLess(relative_error(grad, numeric), 1e-4)

    def test_model_gradient(self):
        rng = np.random.default_rng(4)
        model = generator.GeneratorModel.build(self.schema, 2, SMALL, rng)
        sets = [random_candidate_set(rng, 5, self.schema) for _ in range(2)]
        targets = [(0, 3), (4, 1)]

        def loss():
            logits, _ = model.forward(sets)
            return sum(generator.softmax2d_loss(logits[b], targets[b], 1.0) for b in range(2))

        logits, cache = model.forward(sets)
        upstream = np.stack([generator.softmax2d_loss_and_grad(logits[b], targets[b], 1.0)[1] for b in range(2)])
        grads = model.backward(cache, upstream)
        params = model.parameters()
        for name in ("classifier.1.w", "point.0.w", "emb.user.user_cat_00"):
            self.assertLess(relative_error(grads[name], numeric_gradient(loss, params[name])), 1e-4, name)

    def test_list_log_prob_examples(self):
        self.assertEqual(generator.list_log_prob(np.array([[1.0], [0.0]]), (0,), 1.0), 0.0)
        policy = np.array([[0.9, 0.1], [0.1, 0.9]])
        expected = 0.9 - np.log(np.exp(0.9) + np.exp(0.1))
        self.assertAlmostEqual(generator.list_log_prob(policy, (0,), 1.0), expected, places=12)
        self.assertAlmostEqual(np.exp(expected), 0.6900, places=4)

    def test_list_log_prob_sums_to_one(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            policy = _random_policy(rng, 2, 4)
            total = sum(np.exp(generator.list_log_prob(policy, slate, 2.0))
                        for slate in itertools.permutations(range(4), 2))
            self.assertAlmostEqual(total, 1.0, delta=1e-9)

    def test_list_log_prob_with_rule(self):
        rule = MaxPerCategoryRule([0, 0, 0, 1], max_count=2)
        policy = _random_policy(np.random.default_rng(6), 3, 4)
        legal = [s for s in itertools.permutations(range(4), 3) if sorted(np.bincount([rule.categories[i] for i in s]))[-1] <= 2]
        total = sum(np.exp(generator.list_log_prob(policy, slate, 1.5, rule)) for slate in legal)
        self.assertAlmostEqual(total, 1.0, delta=1e-9)
        with self.assertRaises(SamplingDomainError):
            generator.list_log_prob(policy, (0, 1, 2), 1.5, rule)

    def test_list_log_prob_gradient(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            policy = _random_policy(rng, 3, 5)
            slate = tuple(int(i) for i in rng.permutation(5)[:3])
            _, grad = generator.list_log_prob_and_grad(policy, slate, 2.5)
            numeric = numeric_gradient(lambda: generator.list_log_prob(policy, slate, 2.5), policy)
            self.assertLess(relative_error(grad, numeric), 1e-4)

    def test_accuracies_on_example(self):
        self.assertEqual(generator.generator_accuracies(EXAMPLE_POLICY, [0, 1, 2, 3]), (1.0, 1.0))

    def test_accuracies_tie_rule(self):
        uniform = np.full((4, 5), 0.25)
        self.assertEqual(generator.generator_accuracies(uniform, [0, 1, 2]), (1 / 3, 0.2))

    def test_accuracies_match_scan(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            policy = _random_policy(rng, 3, 6)
            ids = [int(i) for i in rng.permutation(6)[:3]]
            ranks = rank_label(ids, 6, 3) - 1
            rows = sum(1 for i in range(3) if max(range(6), key=lambda j: (policy[i, j], -j)) == ids[i]) / 3
            columns = sum(1 for j in range(6) if max(range(4), key=lambda i: (policy[i, j], -i)) == ranks[j]) / 6
            self.assertEqual(generator.generator_accuracies(policy, ids), (rows, columns))


if __name__ == "__main__":
    unittest.main()

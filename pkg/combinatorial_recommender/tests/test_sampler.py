# Standard library imports
import collections
import itertools
import unittest

# Third party imports
import numpy as np

# Local application imports
from combinatorial_recommender import sampler
from combinatorial_recommender.datamodel import CandidateSet, Item
from combinatorial_recommender.errors import ConfigurationError, GenerationExhaustedError, NumericError
from combinatorial_recommender.generator import column_softmax, list_log_prob


def _candidates(pctr):
    return CandidateSet([Item(i, [1], [0.0], p) for i, p in enumerate(pctr)])


def _assert_valid(test, slates, n, list_len, rule, max_rounds):
    test.assertLessEqual(len(slates), max_rounds)
    test.assertEqual(len(set(slates)), len(slates))
    for slate in slates:
        test.assertEqual(len(slate), list_len)
        test.assertEqual(len(set(slate)), list_len)
        test.assertTrue(all(0 <= i < n for i in slate))
        for position in range(list_len):
            test.assertTrue(rule.is_legal(slate[:position], slate[position]))


class test_sampler(unittest.TestCase):
    def test_temperature_table(self):
        policy = np.array([[0.9, 0.1], [0.5, 0.5], [0.0, 0.0]])
        table = sampler.temperature_table(policy, 1.0)
        self.assertEqual(table.shape, (2, 2))
        np.testing.assert_allclose(table[0], [0.6900, 0.3100], atol=1e-4)
        np.testing.assert_allclose(sampler.temperature_table(policy, 0.0), 0.5)
        self.assertGreater(sampler.temperature_table(policy, 50.0)[0, 0], 0.999)
        with self.assertRaises(ConfigurationError):
            sampler.temperature_table(policy, -1.0)
        with self.assertRaises(NumericError):
            sampler.temperature_table(np.array([[np.nan, 0.0], [0.0, 1.0]]), 1.0)

    def test_temperature_monotone_in_argmax(self):
        rng = np.random.default_rng(0)
        policy = column_softmax(rng.normal(size=(4, 6)))
        best = policy[:3].argmax(axis=1)
        previous = None
        for t in (0.0, 0.5, 1.0, 2.0, 5.0, 10.0):
            table = sampler.temperature_table(policy, t)
            np.testing.assert_allclose(table.sum(axis=1), 1.0, atol=1e-9)
            current = table[np.arange(3), best]
            if previous is not None:
                self.assertTrue(np.all(current >= previous - 1e-15))
            previous = current

    def test_one_hot_policy_gives_argmax_slate(self):
        policy = np.zeros((4, 5))
        policy[0, 3] = policy[1, 0] = policy[2, 4] = 1.0
        policy[3, [1, 2]] = 0.5
        config = sampler.GenerationConfig(temperature=60.0, max_rounds=1, list_len=3)
        self.assertEqual(sampler.mcmc_generate(policy, config, np.random.default_rng(0)), [(3, 0, 4)])

    def test_n_equals_l_gives_permutations(self):
        policy = column_softmax(np.random.default_rng(1).normal(size=(4, 3)))
        config = sampler.GenerationConfig(temperature=1.0, max_rounds=20, list_len=3)
        for slate in sampler.mcmc_generate(policy, config, np.random.default_rng(2)):
            self.assertEqual(sorted(slate), [0, 1, 2])

    def test_sampling_law(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            policy = column_softmax(rng.normal(size=(3, 3)))
            config = sampler.GenerationConfig(temperature=1.0, max_rounds=10000, list_len=2)
            slates = sampler.mcmc_generate(policy, config, rng, unique=False)
            counts = collections.Counter(slates)
            distance = 0.0
            for slate in itertools.permutations(range(3), 2):
                expected = np.exp(list_log_prob(policy, slate, 1.0))
                distance += abs(counts[slate] / len(slates) - expected)
            self.assertLess(distance / 2, 0.02)

    def test_generation_invariants(self):
        rng = np.random.default_rng(3)
        exhausted = 0
        for trial in range(10000):
            n = int(rng.integers(4, 9))
            list_len = int(rng.integers(1, 4))
            categories = rng.integers(0, 3, size=n)
            rule = sampler.MaxPerCategoryRule(categories, 2) if trial % 2 else sampler.AlwaysLegal()
            policy = column_softmax(rng.normal(size=(list_len + 1, n)))
            config = sampler.GenerationConfig(float(rng.uniform(0, 5)), int(rng.integers(1, 6)), list_len, rule)
            # with at most two per category and L <= 3, only a single-category set with L = 3 has no legal slate
            dead_end = bool(trial % 2) and list_len == 3 and len(set(categories.tolist())) == 1
            try:
                slates = sampler.mcmc_generate(policy, config, rng)
            except GenerationExhaustedError:
                self.assertTrue(dead_end, (categories, list_len))
                exhausted += 1
                continue
            self.assertFalse(dead_end, (categories, list_len))
            _assert_valid(self, slates, n, list_len, rule, config.max_rounds)
        self.assertLessEqual(exhausted, 100)

    def test_dead_end_exhausts(self):
        rule = sampler.MaxPerCategoryRule([0, 0, 0, 0], max_count=2)
        config = sampler.GenerationConfig(temperature=1.0, max_rounds=3, list_len=3, rule=rule)
        with self.assertRaises(GenerationExhaustedError):
            sampler.mcmc_generate(np.full((4, 4), 0.25), config, np.random.default_rng(0))

    def test_reproducible(self):
        policy = column_softmax(np.random.default_rng(4).normal(size=(3, 6)))
        config = sampler.GenerationConfig(temperature=2.0, max_rounds=8, list_len=2)
        first = sampler.mcmc_generate(policy, config, np.random.default_rng(9))
        second = sampler.mcmc_generate(policy, config, np.random.default_rng(9))
        self.assertEqual(first, second)

    def test_heuristic_ranking_slate_first(self):
        candidates = _candidates([0.4, 0.3, 0.2, 0.1, 0.05])
        self.assertEqual(sampler.heuristic_generate(candidates, 1, np.random.default_rng(0), 4), [(0, 1, 2, 3)])
        slates = sampler.heuristic_generate(candidates, 20, np.random.default_rng(0), 4)
        self.assertEqual(slates[0], (0, 1, 2, 3))
        _assert_valid(self, slates, 5, 4, sampler.AlwaysLegal(), 20)

    def test_pctr_proportional_first_position(self):
        pctr = np.array([0.4, 0.3, 0.2, 0.1])
        rng = np.random.default_rng(5)
        counts = np.zeros(4)
        for _ in range(10000):
            counts[sampler.sample_by_pctr(pctr, 2, rng)[0]] += 1
        self.assertLess(np.abs(counts / counts.sum() - pctr / pctr.sum()).sum() / 2, 0.03)

    def test_max_per_category_rule(self):
        rule = sampler.MaxPerCategoryRule([0, 0, 0, 1], max_count=2)
        self.assertTrue(rule.is_legal((0,), 1))
        self.assertFalse(rule.is_legal((0, 1), 2))
        np.testing.assert_array_equal(rule.legal_mask((0, 1), 4), [False, False, False, True])

    def test_row_entropy(self):
        self.assertAlmostEqual(sampler.row_entropy(np.full((2, 4), 0.25)), np.log(4))
        self.assertEqual(sampler.row_entropy(np.array([[1.0, 0.0]])), 0.0)


if __name__ == "__main__":
    unittest.main()

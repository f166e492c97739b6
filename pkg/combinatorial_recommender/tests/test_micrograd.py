# Standard library imports
import unittest

# Third party imports
import numpy as np

# Local application imports
from combinatorial_recommender import micrograd
from combinatorial_recommender.errors import ConfigurationError, TrainingError
from combinatorial_recommender.tests.helpers import numeric_gradient, relative_error


class test_micrograd(unittest.TestCase):
    def test_forward_shapes(self):
        rng = np.random.default_rng(0)
        layers = micrograd.build_layers(5, (4, 3), rng, output_size=2, output_activation=micrograd.SIGMOID)
        activations = micrograd.forward(layers, rng.normal(size=(7, 5)))
        self.assertEqual([a.shape for a in activations], [(7, 5), (7, 4), (7, 3), (7, 2)])
        self.assertTrue(np.all((activations[-1] > 0) & (activations[-1] < 1)))

    def test_forward_rejects_wrong_width(self):
        rng = np.random.default_rng(0)
        layers = micrograd.build_layers(5, (4,), rng)
        with self.assertRaises(ConfigurationError):
            micrograd.forward(layers, np.zeros((2, 6)))

    def test_backward_matches_finite_differences(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            layers = micrograd.build_layers(3, (4,), rng, output_size=2, output_activation=micrograd.SIGMOID)
            inputs = rng.normal(size=(5, 3))
            weights = rng.normal(size=(5, 2))

            def loss():
                return float((micrograd.forward(layers, inputs)[-1] * weights).sum())

            activations = micrograd.forward(layers, inputs)
            grads, input_grad = micrograd.backward(layers, activations, weights)
            for layer, (weight_grad, bias_grad) in zip(layers, grads):
                self.assertLess(relative_error(weight_grad, numeric_gradient(loss, layer.weights)), 1e-4)
                self.assertLess(relative_error(bias_grad, numeric_gradient(loss, layer.bias)), 1e-4)
            self.assertLess(relative_error(input_grad, numeric_gradient(loss, inputs)), 1e-4)

    def test_adagrad_update(self):
        params = {"w": np.array([1.0, -2.0])}
        state = micrograd.AdaGradState.for_parameters(params, learning_rate=0.1, epsilon=1e-8)
        micrograd.adagrad_step(params, {"w": np.array([0.5, 0.0])}, state)
        np.testing.assert_allclose(state.accumulators["w"], [0.25, 0.0])
        np.testing.assert_allclose(params["w"], [1.0 - 0.1 * 0.5 / np.sqrt(0.25 + 1e-8), -2.0])
        self.assertEqual(state.steps, 1)

    def test_adagrad_rejects_non_finite_gradient(self):
        params = {"a": np.ones(2), "b": np.ones(2)}
        state = micrograd.AdaGradState.for_parameters(params)
        with self.assertRaises(TrainingError) as context:
            micrograd.adagrad_step(params, {"a": np.ones(2), "b": np.array([np.nan, 0.0])}, state)
        self.assertEqual(context.exception.parameter, "b")
        np.testing.assert_array_equal(params["a"], np.ones(2))
        self.assertEqual(state.steps, 0)

    def test_embedding_gradient_accumulates_repeats(self):
        table = micrograd.EmbeddingTable(np.zeros((4, 2)))
        grad = table.gradient([1, 3, 1], np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
        np.testing.assert_array_equal(grad, [[0, 0], [6, 8], [0, 0], [3, 4]])
        with self.assertRaises(ConfigurationError):
            table.lookup([4])

    def test_parameter_checksum(self):
        params = {"a": np.arange(3.0), "b": np.ones((2, 2))}
        digest = micrograd.parameter_checksum(params)
        self.assertEqual(digest, micrograd.parameter_checksum({k: v.copy() for k, v in params.items()}))
        params["b"][0, 0] += 1e-12
        self.assertNotEqual(digest, micrograd.parameter_checksum(params))


if __name__ == "__main__":
    unittest.main()

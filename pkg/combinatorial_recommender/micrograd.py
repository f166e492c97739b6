"""
Dense network substrate with a fixed forward/backward API and AdaGrad.

Matrices are 2-D ``numpy`` float64 arrays, one row per example. ``forward``
keeps every activation so ``backward`` can run without a graph.
"""
# Standard library imports
import hashlib
import logging

# Third party imports
import numpy as np

# Local application imports
from combinatorial_recommender.config import DEFAULT_EPSILON, DEFAULT_LEARNING_RATE
from combinatorial_recommender.errors import ConfigurationError, TrainingError

logger = logging.getLogger(__name__)

RELU = "relu"
SIGMOID = "sigmoid"
IDENTITY = "identity"
ACTIVATIONS = (RELU, SIGMOID, IDENTITY)


def as_matrix(values, name="matrix"):
    """
    Validates and converts to a finite float64 matrix.

    Args:
        values (array_like): rows x cols values.
        name (str, optional): Used in error messages.

    Returns:
        numpy.ndarray: The float64 matrix.
    """
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim != 2:
        raise ConfigurationError("{} must be 2-D, got shape {}".format(name, matrix.shape))
    if not np.all(np.isfinite(matrix)):
        raise ConfigurationError("{} has non-finite entries".format(name))
    return matrix


def glorot_bound(fan_in, fan_out):
    return np.sqrt(6.0 / (fan_in + fan_out))


def sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _activate(z, activation):
    if activation == RELU:
        return np.maximum(z, 0.0)
    if activation == SIGMOID:
        return sigmoid(z)
    return z


def _activation_derivative(output, activation):
    """Derivative expressed through the layer output."""
    if activation == RELU:
        return (output > 0.0).astype(np.float64)
    if activation == SIGMOID:
        return output * (1.0 - output)
    return np.ones_like(output)


class DenseLayer(object):
    """
    An affine map followed by an element-wise activation.

    Args:
        weights (array_like): fan_in x fan_out weights.
        bias (array_like): fan_out biases.
        activation (str, optional): One of ``ACTIVATIONS``. Defaults to identity.
    """
    def __init__(self, weights, bias, activation=IDENTITY):
        self.weights = np.array(as_matrix(weights, "weights"))
        self.bias = np.array(bias, dtype=np.float64)
        if self.bias.ndim != 1 or self.bias.shape[0] != self.weights.shape[1]:
            raise ConfigurationError(
                "bias length {} does not match weights.cols {}".format(self.bias.shape, self.weights.shape[1]))
        if activation not in ACTIVATIONS:
            raise ConfigurationError("Unknown activation {!r}".format(activation))
        self.activation = activation

    @classmethod
    def init(cls, fan_in, fan_out, activation, rng):
        """
        Glorot-uniform weights and zero bias.

        Args:
            fan_in (int): Input width.
            fan_out (int): Output width.
            activation (str): The activation.
            rng (numpy.random.Generator): The init stream.

        Returns:
            DenseLayer: The layer.
        """
        bound = glorot_bound(fan_in, fan_out)
        weights = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        return cls(weights, np.zeros(fan_out), activation)

    @property
    def fan_in(self):
        return self.weights.shape[0]

    @property
    def fan_out(self):
        return self.weights.shape[1]

    def parameters(self, prefix):
        return {prefix + ".w": self.weights, prefix + ".b": self.bias}


def build_layers(fan_in, hidden_sizes, rng, output_size=None, output_activation=IDENTITY):
    """
    Stacks relu hidden layers, optionally closed by an output layer.

    Args:
        fan_in (int): Input width.
        hidden_sizes (Sequence[int]): Widths of the relu layers.
        rng (numpy.random.Generator): The init stream.
        output_size (int, optional): Width of a final layer.
        output_activation (str, optional): Activation of the final layer.

    Returns:
        List[DenseLayer]: The layers.
    """
    layers = []
    width = fan_in
    for size in hidden_sizes:
        layers.append(DenseLayer.init(width, size, RELU, rng))
        width = size
    if output_size is not None:
        layers.append(DenseLayer.init(width, output_size, output_activation, rng))
    return layers


def layers_parameters(prefix, layers):
    params = {}
    for i, layer in enumerate(layers):
        params.update(layer.parameters("{}.{}".format(prefix, i)))
    return params


def layers_gradients(prefix, grads):
    named = {}
    for i, (weight_grad, bias_grad) in enumerate(grads):
        named["{}.{}.w".format(prefix, i)] = weight_grad
        named["{}.{}.b".format(prefix, i)] = bias_grad
    return named


def output_width(fan_in, layers):
    return layers[-1].fan_out if layers else fan_in


def forward(layers, inputs):
    """
    Runs the layers and keeps every activation.

    Args:
        layers (Sequence[DenseLayer]): The network.
        inputs (array_like): rows x fan_in input matrix.

    Returns:
        List[numpy.ndarray]: ``[inputs, a_1, ..., a_n]``.
    """
    activation = np.asarray(inputs, dtype=np.float64)
    if activation.ndim != 2:
        raise ConfigurationError("input must be 2-D, got shape {}".format(activation.shape))
    activations = [activation]
    for i, layer in enumerate(layers):
        if activation.shape[1] != layer.fan_in:
            raise ConfigurationError(
                "layer {} expects {} columns, got {}".format(i, layer.fan_in, activation.shape[1]))
        activation = _activate(activation @ layer.weights + layer.bias, layer.activation)
        activations.append(activation)
    return activations


def backward(layers, activations, upstream_grad):
    """
    Back-propagates a gradient with respect to the last activation.

    Args:
        layers (Sequence[DenseLayer]): The network used by ``forward``.
        activations (Sequence[numpy.ndarray]): The output of ``forward``.
        upstream_grad (array_like): Gradient w.r.t. the last activation.

    Returns:
        Tuple[List[Tuple[numpy.ndarray, numpy.ndarray]], numpy.ndarray]:
            ((weight grad, bias grad) per layer, gradient w.r.t. the input).
    """
    if len(activations) != len(layers) + 1:
        raise ConfigurationError(
            "{} activations do not belong to a {}-layer network".format(len(activations), len(layers)))
    grad = np.asarray(upstream_grad, dtype=np.float64)
    if grad.shape != activations[-1].shape:
        raise ConfigurationError(
            "upstream gradient shape {} != output shape {}".format(grad.shape, activations[-1].shape))
    grads = [None] * len(layers)
    for i in reversed(range(len(layers))):
        layer = layers[i]
        delta = grad * _activation_derivative(activations[i + 1], layer.activation)
        grads[i] = (activations[i].T @ delta, delta.sum(axis=0))
        grad = delta @ layer.weights.T
    return grads, grad


class EmbeddingTable(object):
    """
    A vocab_size x dim lookup table.

    Args:
        values (array_like): The table.
    """
    def __init__(self, values):
        self.values = np.array(as_matrix(values, "embedding"))

    @classmethod
    def init(cls, vocab_size, dim, rng):
        if vocab_size < 1 or dim < 1:
            raise ConfigurationError("vocab_size and dim must be >= 1")
        bound = glorot_bound(vocab_size, dim)
        return cls(rng.uniform(-bound, bound, size=(vocab_size, dim)))

    @property
    def vocab_size(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    def _check(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.vocab_size):
            raise ConfigurationError(
                "embedding index out of range [0, {})".format(self.vocab_size))
        return indices

    def lookup(self, indices):
        return self.values[self._check(indices)]

    def gradient(self, indices, upstream):
        """
        Scatter-adds row gradients back onto the table.

        Args:
            indices (array_like): The looked-up rows.
            upstream (array_like): len(indices) x dim gradients.

        Returns:
            numpy.ndarray: Gradient with the table's shape.
        """
        grad = np.zeros_like(self.values)
        np.add.at(grad, self._check(indices), upstream)
        return grad


class AdaGradState(object):
    """
    Per-parameter squared-gradient accumulators.

    Args:
        accumulators (Dict[str, numpy.ndarray]): One array per parameter.
        learning_rate (float, optional): Defaults to 0.01.
        epsilon (float, optional): Defaults to 1e-8.
    """
    def __init__(self, accumulators, learning_rate=DEFAULT_LEARNING_RATE, epsilon=DEFAULT_EPSILON):
        if learning_rate <= 0 or epsilon <= 0:
            raise ConfigurationError("learning_rate and epsilon must be positive")
        self.accumulators = accumulators
        self.learning_rate = float(learning_rate)
        self.epsilon = float(epsilon)
        self.steps = 0

    @classmethod
    def for_parameters(cls, params, learning_rate=DEFAULT_LEARNING_RATE, epsilon=DEFAULT_EPSILON):
        accumulators = {name: np.zeros_like(value) for name, value in params.items()}
        return cls(accumulators, learning_rate, epsilon)


def adagrad_step(params, grads, state):
    """
    One AdaGrad update, applied in place.

    ``accumulator += grad**2`` then ``param -= lr * grad / sqrt(accumulator + eps)``.
    Nothing is modified when any gradient is rejected.

    Args:
        params (Dict[str, numpy.ndarray]): The parameters.
        grads (Dict[str, numpy.ndarray]): Gradients with the same names and shapes.
        state (AdaGradState): The optimizer state.

    Returns:
        Tuple[Dict[str, numpy.ndarray], AdaGradState]: The updated params and state.
    """
    if set(params) != set(grads) or set(params) != set(state.accumulators):
        raise ConfigurationError("parameter, gradient and accumulator names differ")
    for name, value in params.items():
        grad = grads[name]
        if np.shape(grad) != value.shape or state.accumulators[name].shape != value.shape:
            raise ConfigurationError("shape mismatch for parameter {}".format(name))
        if not np.all(np.isfinite(grad)):
            raise TrainingError("Non-finite gradient", parameter=name)
    for name, value in params.items():
        grad = grads[name]
        accumulator = state.accumulators[name]
        accumulator += grad * grad
        value -= state.learning_rate * grad / np.sqrt(accumulator + state.epsilon)
    state.steps += 1
    return params, state


def parameter_checksum(params):
    """
    Hashes names, shapes and raw bytes of every parameter.

    Args:
        params (Dict[str, numpy.ndarray]): The parameters.

    Returns:
        str: sha256 hex digest.
    """
    digest = hashlib.sha256()
    for name in sorted(params):
        value = np.ascontiguousarray(params[name], dtype=np.float64)
        digest.update(name.encode("utf-8"))
        digest.update(str(value.shape).encode("utf-8"))
        digest.update(value.tobytes())
    return digest.hexdigest()

"""
Set-to-Policy List Generator.

Every candidate goes through a shared point DNN; the item vectors are
max-pooled into one set vector, each item vector is concatenated with it,
and a rank classifier emits L+1 logits per item (positions 1..L and "not in").
A softmax down each column gives the policy matrix.
"""
# Standard library imports
import logging

# Third party imports
import numpy as np

# Local application imports
from combinatorial_recommender import api
from combinatorial_recommender.datamodel import PolicyMatrix, rank_label, slate_positions
from combinatorial_recommender.errors import ConfigurationError, SamplingDomainError, UsageError
from combinatorial_recommender.features import FeatureEncoder, gather_rows
from combinatorial_recommender.micrograd import (
    IDENTITY,
    backward,
    build_layers,
    forward,
    layers_gradients,
    layers_parameters,
)
from combinatorial_recommender.sampler import AlwaysLegal, policy_entries

logger = logging.getLogger(__name__)


class GeneratorModel(object):
    """
    Args:
        encoder (FeatureEncoder): Shared embeddings.
        point_layers (List[DenseLayer]): Per-item representation.
        classifier_layers (List[DenseLayer]): Rank classifier over [item vector, set vector].
        list_len (int): L.
    """
    kind = api.TARGET_GENERATOR

    def __init__(self, encoder, point_layers, classifier_layers, list_len):
        self.encoder = encoder
        self.point_layers = point_layers
        self.classifier_layers = classifier_layers
        self.list_len = int(list_len)
        self.optimizer = None
        width = point_layers[-1].fan_out
        if classifier_layers[0].fan_in != 2 * width or classifier_layers[-1].fan_out != self.list_len + 1:
            raise ConfigurationError("rank classifier does not match L={} and item width {}".format(list_len, width))

    @classmethod
    def build(cls, schema, list_len, config, rng):
        encoder = FeatureEncoder.build(schema, rng)
        point_layers = build_layers(encoder.width, config.point_sizes, rng)
        classifier_layers = build_layers(2 * config.point_sizes[-1], config.classifier_sizes, rng,
                                         output_size=list_len + 1, output_activation=IDENTITY)
        return cls(encoder, point_layers, classifier_layers, list_len)

    @property
    def schema(self):
        return self.encoder.schema

    def parameters(self):
        params = self.encoder.parameters()
        params.update(layers_parameters("point", self.point_layers))
        params.update(layers_parameters("classifier", self.classifier_layers))
        return params

    def forward(self, candidate_sets):
        """
        Args:
            candidate_sets (Sequence[CandidateSet]): B sets of the same size N >= L.

        Returns:
            Tuple[numpy.ndarray, tuple]: B x (L+1) x N logits and the backward cache.
        """
        sizes = {len(candidate_set) for candidate_set in candidate_sets}
        if len(sizes) != 1:
            raise UsageError("a generator batch needs one candidate count, got {}".format(sorted(sizes)))
        n = sizes.pop()
        if n < self.list_len:
            raise UsageError("N={} is smaller than L={}".format(n, self.list_len))
        batch = len(candidate_sets)
        rows = gather_rows(candidate_sets, [range(n)] * batch)
        inputs, encoder_cache = self.encoder.encode(rows)
        point_activations = forward(self.point_layers, inputs)
        items = point_activations[-1].reshape(batch, n, -1)
        winners = items.argmax(axis=1)
        pooled = items.max(axis=1)
        fused = np.concatenate([items, np.broadcast_to(pooled[:, None, :], items.shape)], axis=2)
        classifier_activations = forward(self.classifier_layers, fused.reshape(batch * n, -1))
        logits = classifier_activations[-1].reshape(batch, n, -1).transpose(0, 2, 1)
        return logits, (encoder_cache, point_activations, classifier_activations, winners, batch, n)

    def backward(self, cache, upstream):
        """
        Args:
            cache (tuple): From ``forward``.
            upstream (numpy.ndarray): B x (L+1) x N gradient w.r.t. the logits.

        Returns:
            Dict[str, numpy.ndarray]: Gradients named like ``parameters()``.
        """
        encoder_cache, point_activations, classifier_activations, winners, batch, n = cache
        upstream = np.asarray(upstream, dtype=np.float64).transpose(0, 2, 1).reshape(batch * n, -1)
        classifier_grads, fused_grad = backward(self.classifier_layers, classifier_activations, upstream)
        width = point_activations[-1].shape[1]
        fused_grad = fused_grad.reshape(batch, n, 2 * width)
        item_grad = fused_grad[:, :, :width].copy()
        pooled_grad = fused_grad[:, :, width:].sum(axis=1)
        # max-pool routes each unit's gradient to the first item holding the max
        np.add.at(item_grad, (np.arange(batch)[:, None], winners, np.arange(width)[None, :]), pooled_grad)
        point_grads, input_grad = backward(self.point_layers, point_activations, item_grad.reshape(batch * n, width))
        grads = self.encoder.backward(encoder_cache, input_grad)
        grads.update(layers_gradients("point", point_grads))
        grads.update(layers_gradients("classifier", classifier_grads))
        return grads


def column_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-2, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=-2, keepdims=True)


def column_softmax_backward(probs, upstream):
    """Gradient w.r.t. the logits given the gradient w.r.t. the column softmax."""
    return probs * (upstream - (probs * upstream).sum(axis=-2, keepdims=True))


def _row_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=-1, keepdims=True)


def _logsumexp(values, axis):
    top = values.max(axis=axis, keepdims=True)
    return np.squeeze(top, axis=axis) + np.log(np.exp(values - top).sum(axis=axis))


def policy_matrix(model, candidate_set):
    """
    Args:
        model (GeneratorModel): The generator.
        candidate_set (CandidateSet): N >= L candidates.

    Returns:
        PolicyMatrix: The (L+1) x N policy, each column a distribution over ranks.
    """
    logits, _ = model.forward([candidate_set])
    return PolicyMatrix(column_softmax(logits[0]))


def policy_matrices(model, candidate_sets):
    """Batched ``policy_matrix`` as a B x (L+1) x N array."""
    logits, _ = model.forward(candidate_sets)
    return column_softmax(logits)


def softmax2d_loss_and_grad(logits, ids, lambda_rank):
    """
    Softmax2D loss with its gradient.

    The id part is the cross-entropy of each row 1..L against ``ids[i]``; the
    rank part is the cross-entropy of each column against the item's 1-based
    rank, L+1 meaning "not in". The total is ``id + lambda * rank``.

    Args:
        logits (array_like): (L+1) x N logits.
        ids (Sequence[int]): The target slate, 0-based candidate indices.
        lambda_rank (float): Weight of the rank part, >= 0.

    Returns:
        Tuple[float, numpy.ndarray]: The loss and its gradient w.r.t. the logits.
    """
    if lambda_rank < 0:
        raise ConfigurationError("lambda must be >= 0, got {}".format(lambda_rank))
    logits = np.asarray(logits, dtype=np.float64)
    list_len = logits.shape[0] - 1
    n = logits.shape[1]
    ids = np.asarray(slate_positions(ids), dtype=np.int64)
    ranks = rank_label(ids, n, list_len) - 1

    rows = logits[:list_len]
    row_loss = _logsumexp(rows, axis=1) - rows[np.arange(list_len), ids]
    column_loss = _logsumexp(logits, axis=0) - logits[ranks, np.arange(n)]
    loss = float(row_loss.sum() + lambda_rank * column_loss.sum())

    grad = np.zeros_like(logits)
    row_grad = _row_softmax(rows)
    row_grad[np.arange(list_len), ids] -= 1.0
    grad[:list_len] += row_grad
    column_grad = column_softmax(logits)
    column_grad[ranks, np.arange(n)] -= 1.0
    grad += lambda_rank * column_grad
    return loss, grad


def softmax2d_loss(logits, ids, lambda_rank):
    """Scalar Softmax2D loss, see ``softmax2d_loss_and_grad``."""
    return softmax2d_loss_and_grad(logits, ids, lambda_rank)[0]


def list_log_prob_and_grad(policy, slate, temperature, rule=None):
    """
    Log-likelihood of a slate under sequential sampling, with its gradient w.r.t. M.

    Position i picks ``slate[i]`` with probability ``exp(t*M[i, s_i])`` over the
    sum of ``exp(t*M[i, m])`` for the items still available and legal.

    Args:
        policy (Union[PolicyMatrix, array_like]): The (L+1) x N policy.
        slate (Sequence[int]): Candidate indices.
        temperature (float): t.
        rule (LegalityRule, optional): The rule sampling used.

    Returns:
        Tuple[float, numpy.ndarray]: log-probability <= 0 and an (L+1) x N gradient.
    """
    entries = policy_entries(policy)
    n = entries.shape[1]
    positions = slate_positions(slate)
    if len(positions) > entries.shape[0] - 1:
        raise UsageError("slate is longer than the policy's {} positions".format(entries.shape[0] - 1))
    if any(i < 0 or i >= n for i in positions) or len(set(positions)) != len(positions):
        raise UsageError("slate {} is not valid for {} candidates".format(positions, n))
    rule = rule or AlwaysLegal()
    available = np.ones(n, dtype=bool)
    log_prob = 0.0
    grad = np.zeros_like(entries)
    for position, pick in enumerate(positions):
        allowed = available & rule.legal_mask(positions[:position], n)
        if not allowed[pick]:
            raise SamplingDomainError("slate {} has zero probability at position {}".format(positions, position))
        scores = temperature * entries[position]
        top = scores[allowed].max()
        weights = np.where(allowed, np.exp(scores - top), 0.0)
        total = weights.sum()
        log_prob += scores[pick] - top - np.log(total)
        grad[position] -= temperature * weights / total
        grad[position, pick] += temperature
        available[pick] = False
    return float(min(log_prob, 0.0)), grad


def list_log_prob(policy, slate, temperature, rule=None):
    """Log-likelihood of a slate under sequential sampling, see ``list_log_prob_and_grad``."""
    return list_log_prob_and_grad(policy, slate, temperature, rule)[0]


def generator_accuracies(policy, ids):
    """
    Args:
        policy (Union[PolicyMatrix, array_like]): The (L+1) x N policy.
        ids (Sequence[int]): Reference slate, 0-based candidate indices.

    Returns:
        Tuple[float, float]: Fraction of rows 1..L whose argmax is ``ids[i]`` and
        fraction of columns whose argmax is the item's rank. Ties go to the lowest index.
    """
    entries = policy_entries(policy)
    list_len = entries.shape[0] - 1
    ids = np.asarray(slate_positions(ids), dtype=np.int64)
    ranks = rank_label(ids, entries.shape[1], list_len) - 1
    selection = float(np.mean(entries[:list_len].argmax(axis=1) == ids))
    rank = float(np.mean(entries.argmax(axis=0) == ranks))
    return selection, rank

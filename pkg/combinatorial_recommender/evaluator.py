"""
List Evaluator: context-aware per-position CTR for a whole slate.

Each slate item goes through a shared point DNN, the L item vectors are
concatenated in slate order and a list head emits one sigmoid CTR per
position, so every prediction sees the surrounding items.
"""
# Standard library imports
import logging

# Third party imports
import numpy as np

# Local application imports
from combinatorial_recommender import api
from combinatorial_recommender.config import EvaluatorConfig, rng_stream
from combinatorial_recommender.datamodel import check_positions, record_t, slate_positions
from combinatorial_recommender.errors import (
    ConfigurationError,
    DataError,
    NumericError,
    TrainingError,
    UndefinedMetricError,
    UsageError,
)
from combinatorial_recommender.features import FeatureEncoder, gather_rows
from combinatorial_recommender.micrograd import (
    SIGMOID,
    AdaGradState,
    adagrad_step,
    backward,
    build_layers,
    forward,
    layers_gradients,
    layers_parameters,
)

logger = logging.getLogger(__name__)

PREDICT_CHUNK = 256


class EvaluationResult(record_t):
    """
    Args:
        per_item_ctr (numpy.ndarray): L predicted CTRs in slate order.
    """
    def __init__(self, per_item_ctr):
        super(EvaluationResult, self).__init__()
        self.per_item_ctr = np.asarray(per_item_ctr, dtype=np.float64)
        self.list_score = float(self.per_item_ctr.sum())


class EpochMetrics(record_t):
    def __init__(self, epoch, loss, auc):
        super(EpochMetrics, self).__init__()
        self.epoch = epoch
        self.loss = loss
        self.auc = auc


class EvaluatorModel(object):
    """
    Args:
        encoder (FeatureEncoder): Shared embeddings.
        point_layers (List[DenseLayer]): Per-item representation.
        head_layers (List[DenseLayer]): List head over the concatenated item vectors, L sigmoid outputs.
        list_len (int): L.
    """
    kind = api.TARGET_EVALUATOR

    def __init__(self, encoder, point_layers, head_layers, list_len):
        self.encoder = encoder
        self.point_layers = point_layers
        self.head_layers = head_layers
        self.list_len = int(list_len)
        self.optimizer = None
        width = point_layers[-1].fan_out
        if head_layers[0].fan_in != width * self.list_len or head_layers[-1].fan_out != self.list_len:
            raise ConfigurationError("list head does not match L={} and item width {}".format(list_len, width))
        if head_layers[-1].activation != SIGMOID:
            raise ConfigurationError("list head must end with a sigmoid layer")

    @classmethod
    def build(cls, schema, list_len, config, rng, zero_head=False):
        """
        Args:
            schema (FeatureSchema): The feature schema.
            list_len (int): L.
            config (EvaluatorConfig): Layer widths.
            rng (numpy.random.Generator): The init stream.
            zero_head (bool, optional): Zero the output layer so every CTR starts at 0.5.

        Returns:
            EvaluatorModel: The model.
        """
        encoder = FeatureEncoder.build(schema, rng)
        point_layers = build_layers(encoder.width, config.point_sizes, rng)
        head_layers = build_layers(config.point_sizes[-1] * list_len, config.head_sizes, rng,
                                   output_size=list_len, output_activation=SIGMOID)
        if zero_head:
            head_layers[-1].weights[:] = 0.0
            head_layers[-1].bias[:] = 0.0
        return cls(encoder, point_layers, head_layers, list_len)

    @property
    def schema(self):
        return self.encoder.schema

    def parameters(self):
        params = self.encoder.parameters()
        params.update(layers_parameters("point", self.point_layers))
        params.update(layers_parameters("head", self.head_layers))
        return params

    def forward(self, candidate_sets, slates):
        """
        Args:
            candidate_sets (Sequence[CandidateSet]): One set per slate.
            slates (Sequence): Slates (or index tuples) of length L.

        Returns:
            Tuple[numpy.ndarray, tuple]: B x L CTRs and the backward cache.
        """
        index_lists = [check_positions(slate, len(candidate_set), self.list_len)
                       for candidate_set, slate in zip(candidate_sets, slates)]
        rows = gather_rows(candidate_sets, index_lists)
        inputs, encoder_cache = self.encoder.encode(rows)
        point_activations = forward(self.point_layers, inputs)
        list_vectors = point_activations[-1].reshape(len(index_lists), -1)
        head_activations = forward(self.head_layers, list_vectors)
        return head_activations[-1], (encoder_cache, point_activations, head_activations)

    def backward(self, cache, upstream):
        encoder_cache, point_activations, head_activations = cache
        head_grads, list_grad = backward(self.head_layers, head_activations, upstream)
        item_grad = list_grad.reshape(point_activations[-1].shape)
        point_grads, input_grad = backward(self.point_layers, point_activations, item_grad)
        grads = self.encoder.backward(encoder_cache, input_grad)
        grads.update(layers_gradients("point", point_grads))
        grads.update(layers_gradients("head", head_grads))
        return grads

    def predict(self, candidate_sets, slates):
        outputs = []
        for start in range(0, len(slates), PREDICT_CHUNK):
            ctr, _ = self.forward(candidate_sets[start:start + PREDICT_CHUNK], slates[start:start + PREDICT_CHUNK])
            outputs.append(ctr)
        return np.concatenate(outputs, axis=0) if outputs else np.zeros((0, self.list_len))

    def loss_and_grads(self, samples, clamp):
        ctr, cache = self.forward([s.candidate_set for s in samples], [s.selected for s in samples])
        exposure = np.array([s.selected.exposure for s in samples], dtype=np.float64)
        click = np.array([s.selected.click for s in samples], dtype=np.float64)
        loss = evaluator_loss(ctr, exposure, click, clamp) / len(samples)
        upstream = evaluator_loss_grad(ctr, exposure, click, clamp) / len(samples)
        return loss, self.backward(cache, upstream)

    def dataset_loss(self, samples, clamp):
        total = 0.0
        for start in range(0, len(samples), PREDICT_CHUNK):
            chunk = samples[start:start + PREDICT_CHUNK]
            ctr, _ = self.forward([s.candidate_set for s in chunk], [s.selected for s in chunk])
            total += evaluator_loss(ctr, np.array([s.selected.exposure for s in chunk], dtype=np.float64),
                                    np.array([s.selected.click for s in chunk], dtype=np.float64), clamp)
        return total / max(len(samples), 1)

    def exposed_scores(self, samples):
        ctr = self.predict([s.candidate_set for s in samples], [s.selected for s in samples])
        exposure = np.array([s.selected.exposure for s in samples], dtype=bool).reshape(ctr.shape)
        click = np.array([s.selected.click for s in samples], dtype=np.int64).reshape(ctr.shape)
        return ctr[exposure], click[exposure]


class PointwiseModel(object):
    """
    Point-wise CTR baseline: the same point DNN and one sigmoid output per item,
    trained on exposed items without list context.
    """
    kind = api.TARGET_POINTWISE

    def __init__(self, encoder, point_layers, head_layers):
        self.encoder = encoder
        self.point_layers = point_layers
        self.head_layers = head_layers
        self.optimizer = None

    @classmethod
    def build(cls, schema, config, rng):
        encoder = FeatureEncoder.build(schema, rng)
        point_layers = build_layers(encoder.width, config.point_sizes, rng)
        head_layers = build_layers(config.point_sizes[-1], (), rng, output_size=1, output_activation=SIGMOID)
        return cls(encoder, point_layers, head_layers)

    @property
    def schema(self):
        return self.encoder.schema

    def parameters(self):
        params = self.encoder.parameters()
        params.update(layers_parameters("point", self.point_layers))
        params.update(layers_parameters("head", self.head_layers))
        return params

    @staticmethod
    def _exposed(samples):
        candidate_sets, index_lists, clicks = [], [], []
        for sample in samples:
            slate = sample.selected
            shown = [i for i, exposed in enumerate(slate.exposure) if exposed]
            candidate_sets.append(sample.candidate_set)
            index_lists.append([slate.positions[i] for i in shown])
            clicks.extend(slate.click[i] for i in shown)
        return candidate_sets, index_lists, np.array(clicks, dtype=np.float64)

    def forward(self, candidate_sets, index_lists):
        rows = gather_rows(candidate_sets, index_lists)
        inputs, encoder_cache = self.encoder.encode(rows)
        point_activations = forward(self.point_layers, inputs)
        head_activations = forward(self.head_layers, point_activations[-1])
        return head_activations[-1][:, 0], (encoder_cache, point_activations, head_activations)

    def backward(self, cache, upstream):
        encoder_cache, point_activations, head_activations = cache
        head_grads, item_grad = backward(self.head_layers, head_activations, upstream[:, None])
        point_grads, input_grad = backward(self.point_layers, point_activations, item_grad)
        grads = self.encoder.backward(encoder_cache, input_grad)
        grads.update(layers_gradients("point", point_grads))
        grads.update(layers_gradients("head", head_grads))
        return grads

    def loss_and_grads(self, samples, clamp):
        candidate_sets, index_lists, clicks = self._exposed(samples)
        if not clicks.size:
            return 0.0, {name: np.zeros_like(value) for name, value in self.parameters().items()}
        ctr, cache = self.forward(candidate_sets, index_lists)
        exposure = np.ones_like(clicks)
        loss = evaluator_loss(ctr, exposure, clicks, clamp) / len(samples)
        upstream = evaluator_loss_grad(ctr, exposure, clicks, clamp) / len(samples)
        return loss, self.backward(cache, upstream)

    def dataset_loss(self, samples, clamp):
        total = 0.0
        for start in range(0, len(samples), PREDICT_CHUNK):
            candidate_sets, index_lists, clicks = self._exposed(samples[start:start + PREDICT_CHUNK])
            if clicks.size:
                ctr, _ = self.forward(candidate_sets, index_lists)
                total += evaluator_loss(ctr, np.ones_like(clicks), clicks, clamp)
        return total / max(len(samples), 1)

    def exposed_scores(self, samples):
        scores, labels = [], []
        for start in range(0, len(samples), PREDICT_CHUNK):
            candidate_sets, index_lists, clicks = self._exposed(samples[start:start + PREDICT_CHUNK])
            if clicks.size:
                ctr, _ = self.forward(candidate_sets, index_lists)
                scores.append(ctr)
                labels.append(clicks.astype(np.int64))
        if not scores:
            return np.zeros(0), np.zeros(0, dtype=np.int64)
        return np.concatenate(scores), np.concatenate(labels)


def _check_loss_inputs(per_item_ctr, exposure, click):
    ctr = np.asarray(per_item_ctr, dtype=np.float64)
    exposure = np.asarray(exposure, dtype=np.float64)
    click = np.asarray(click, dtype=np.float64)
    if ctr.shape != exposure.shape or ctr.shape != click.shape:
        raise UsageError("ctr, exposure and click shapes differ: {} {} {}".format(
            ctr.shape, exposure.shape, click.shape))
    if np.any(click > exposure):
        raise DataError("click without exposure")
    if not np.all(np.isfinite(ctr)) or ctr.min(initial=0.5) < 0.0 or ctr.max(initial=0.5) > 1.0:
        raise NumericError("predicted CTR outside [0, 1]")
    return ctr, exposure, click


def evaluator_loss(per_item_ctr, exposure, click, clamp=EvaluatorConfig.clamp):
    """
    Exposure-masked negative log-likelihood.

    ``-sum_i exposure_i * [click_i * log p_i + (1 - click_i) * log(1 - p_i)]``,
    with ``p`` clamped to ``[clamp, 1 - clamp]``.

    Args:
        per_item_ctr (array_like): Predicted CTRs.
        exposure (array_like): 0/1 exposure labels, same shape.
        click (array_like): 0/1 click labels, same shape.
        clamp (float, optional): Clamp margin.

    Returns:
        float: The nonnegative loss.
    """
    ctr, exposure, click = _check_loss_inputs(per_item_ctr, exposure, click)
    ctr = np.clip(ctr, clamp, 1.0 - clamp)
    terms = click * np.log(ctr) + (1.0 - click) * np.log(1.0 - ctr)
    return float(-(exposure * terms).sum())


def evaluator_loss_grad(per_item_ctr, exposure, click, clamp=EvaluatorConfig.clamp):
    """Gradient of ``evaluator_loss`` with respect to the predicted CTRs."""
    ctr, exposure, click = _check_loss_inputs(per_item_ctr, exposure, click)
    clipped = np.clip(ctr, clamp, 1.0 - clamp)
    grad = -exposure * (click / clipped - (1.0 - click) / (1.0 - clipped))
    grad[(ctr < clamp) | (ctr > 1.0 - clamp)] = 0.0
    return grad


def auc(scores, labels):
    """
    Probability that a random positive outscores a random negative, ties counted 1/2.

    Args:
        scores (array_like): Real scores.
        labels (array_like): 0/1 labels.

    Returns:
        float: AUC in [0, 1].
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise UsageError("scores and labels differ in length")
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite score")
    if np.any((labels != 0) & (labels != 1)):
        raise UsageError("labels must be 0 or 1")
    positives = labels == 1
    n_pos = int(positives.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both a positive and a negative label")
    # Mid-ranks: tied scores share the average of their rank range.
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts).astype(np.float64)
    mid_ranks = (ends - counts + 1.0 + ends) / 2.0
    rank_sum = mid_ranks[inverse.ravel()][positives].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def holdout_auc(model, samples):
    """AUC on the exposed items of ``samples``; NaN when undefined."""
    if not samples:
        return float("nan")
    scores, labels = model.exposed_scores(samples)
    try:
        return auc(scores, labels)
    except UndefinedMetricError as exc:
        logger.warning("Holdout AUC undefined: {}".format(exc))
        return float("nan")


def score_lists(model, candidate_set, slates):
    """
    Predicts every slate over one candidate set.

    Returns:
        numpy.ndarray: len(slates) x L CTRs.
    """
    slates = list(slates)
    return model.predict([candidate_set] * len(slates), slates)


def predict_list_ctr(model, candidate_set, slate):
    """
    Args:
        model (EvaluatorModel): The evaluator.
        candidate_set (CandidateSet): The request's candidates.
        slate (Union[Slate, Sequence[int]]): The ordered slate.

    Returns:
        EvaluationResult: Per-position CTRs and their sum.
    """
    ctr, _ = model.forward([candidate_set], [slate_positions(slate)])
    return EvaluationResult(ctr[0])


def select_best(lists, model, candidate_set, utility=None):
    """
    Index of the slate with the highest expected utility, lowest index on ties.

    Args:
        lists (Sequence): Candidate slates.
        model (EvaluatorModel): The evaluator.
        candidate_set (CandidateSet): The request's candidates.
        utility (Callable[[numpy.ndarray], float], optional): Maps per-item CTRs to a
            score. Defaults to their sum.

    Returns:
        int: The winning index.
    """
    lists = list(lists)
    if not lists:
        raise UsageError("select_best needs at least one slate")
    ctr = score_lists(model, candidate_set, [slate_positions(slate) for slate in lists])
    scores = ctr.sum(axis=1) if utility is None else np.array([utility(row) for row in ctr])
    return int(np.argmax(scores))


def split_holdout(samples, fraction):
    """Keeps file order: the last ``fraction`` of the samples is held out."""
    samples = list(samples)
    held = int(round(len(samples) * fraction))
    held = min(held, len(samples) - 1)
    return samples[:len(samples) - held], samples[len(samples) - held:]


def fit(model, train, holdout, config):
    """
    AdaGrad epochs over ``train``; the optimizer state lives on the model so
    later calls continue from it.

    Returns:
        List[EpochMetrics]: Post-epoch mean training loss and holdout AUC.
    """
    if not train:
        raise UsageError("training set is empty")
    params = model.parameters()
    state = model.optimizer
    if state is None or state.learning_rate != config.learning_rate or state.epsilon != config.epsilon:
        state = AdaGradState.for_parameters(params, config.learning_rate, config.epsilon)
        model.optimizer = state
    rng = rng_stream(config.seed, "split")
    metrics = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        for batch_number, start in enumerate(range(0, len(train), config.batch_size)):
            batch = [train[i] for i in order[start:start + config.batch_size]]
            loss, grads = model.loss_and_grads(batch, config.clamp)
            if not np.isfinite(loss):
                raise TrainingError("Non-finite {} loss at epoch {} batch {}".format(model.kind, epoch, batch_number))
            adagrad_step(params, grads, state)
            logger.debug("{} epoch {} batch {} loss {:.6f}".format(model.kind, epoch, batch_number, loss))
        row = EpochMetrics(epoch, model.dataset_loss(train, config.clamp), holdout_auc(model, holdout))
        logger.info("{} epoch {}: loss {:.6f} auc {:.4f}".format(model.kind, epoch, row.loss, row.auc))
        metrics.append(row)
    return metrics


def _prepare(samples, config, holdout):
    samples = list(samples)
    if not samples:
        raise UsageError("training set is empty")
    if holdout is None:
        train, holdout = split_holdout(samples, config.holdout_fraction)
    else:
        train, holdout = samples, list(holdout)
    lengths = {sample.list_len for sample in train + holdout}
    if len(lengths) != 1:
        raise DataError("samples mix slate lengths {}".format(sorted(lengths)))
    return train, holdout, lengths.pop()


def train_evaluator(samples, config=None, schema=None, model=None, holdout=None):
    """
    Trains (or continues training) the List Evaluator.

    Args:
        samples (Iterable[LoggedSample]): Training samples.
        config (EvaluatorConfig, optional): Hyperparameters.
        schema (FeatureSchema, optional): Needed when ``model`` is None.
        model (EvaluatorModel, optional): Warm start.
        holdout (Sequence[LoggedSample], optional): Overrides the tail split.

    Returns:
        Tuple[EvaluatorModel, List[EpochMetrics]]: The model and per-epoch metrics.
    """
    config = config or EvaluatorConfig()
    train, holdout, list_len = _prepare(samples, config, holdout)
    if model is None:
        if schema is None:
            raise ConfigurationError("a schema is needed to build a new evaluator")
        model = EvaluatorModel.build(schema, list_len, config, rng_stream(config.seed, "init"))
    elif model.list_len != list_len:
        raise ConfigurationError("evaluator L={} but samples have L={}".format(model.list_len, list_len))
    return model, fit(model, train, holdout, config)


def train_pointwise(samples, config=None, schema=None, model=None, holdout=None):
    """Trains the point-wise baseline; same contract as ``train_evaluator``."""
    config = config or EvaluatorConfig()
    train, holdout, _ = _prepare(samples, config, holdout)
    if model is None:
        if schema is None:
            raise ConfigurationError("a schema is needed to build a new point-wise model")
        model = PointwiseModel.build(schema, config, rng_stream(config.seed, "init"))
    return model, fit(model, train, holdout, config)

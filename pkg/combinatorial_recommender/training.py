"""
Generator training.

Naive mode fits the Softmax2D objective to the logged slates. CTR mode runs
REINFORCE with a mean baseline: slates sampled from the current policy, plus
the logged slate and the evaluator's greedy top-CTR slate, are scored by a
frozen evaluator and their log-likelihoods pushed up or down by their
advantage.
"""
# Standard library imports
import logging

# Third party imports
import numpy as np

# Local application imports
from combinatorial_recommender import api
from combinatorial_recommender.config import GeneratorConfig, rng_stream
from combinatorial_recommender.datamodel import record_t, slate_positions
from combinatorial_recommender.errors import (
    ConfigurationError,
    DataError,
    GenerationExhaustedError,
    SamplingDomainError,
    TrainingError,
    UsageError,
)
from combinatorial_recommender.evaluator import score_lists, split_holdout
from combinatorial_recommender.generator import (
    GeneratorModel,
    column_softmax,
    column_softmax_backward,
    generator_accuracies,
    list_log_prob_and_grad,
    softmax2d_loss_and_grad,
)
from combinatorial_recommender.micrograd import AdaGradState, adagrad_step
from combinatorial_recommender.sampler import (
    GenerationConfig,
    mcmc_generate,
    ranking_slate,
    row_entropy,
    temperature_table,
)

logger = logging.getLogger(__name__)


def reward_naive(slate, logged):
    """1 if ``slate`` is the logged slate (same items, same order), else 0."""
    return int(slate_positions(slate) == logged.selected.positions)


def reward_ctr(slate, evaluator, candidate_set):
    """Mean of the evaluator's per-item CTRs for ``slate``."""
    return float(score_lists(evaluator, candidate_set, [slate_positions(slate)])[0].mean())


class RewardFn(object):
    """
    Scores the slates proposed for one logged sample.

    Args:
        kind (str): ``naive``, ``ctr`` or a custom name.
        score (Callable[[LoggedSample, List[tuple]], numpy.ndarray]): Rewards, one per slate.
    """
    def __init__(self, kind, score):
        self.kind = kind
        self.score = score

    def __call__(self, sample, slates):
        rewards = np.asarray(self.score(sample, slates), dtype=np.float64)
        if rewards.shape != (len(slates),) or not np.all(np.isfinite(rewards)):
            raise TrainingError("{} reward returned invalid values {}".format(self.kind, rewards))
        return rewards

    @classmethod
    def naive(cls):
        return cls(api.MODE_NAIVE, lambda sample, slates: [reward_naive(s, sample) for s in slates])

    @classmethod
    def ctr(cls, evaluator):
        return cls(api.MODE_CTR,
                   lambda sample, slates: score_lists(evaluator, sample.candidate_set, slates).mean(axis=1))


class BatchEntry(record_t):
    """
    Args:
        sample (LoggedSample): The logged sample.
        slates (List[Tuple[int, ...]]): Proposed slates.
        rewards (numpy.ndarray): One reward per slate.
        log_probs (numpy.ndarray): One log-likelihood per slate under the sampling policy.
    """
    def __init__(self, sample, slates, rewards, log_probs):
        super(BatchEntry, self).__init__()
        if not (len(slates) == len(rewards) == len(log_probs)):
            raise UsageError("slates, rewards and log-probs are not aligned")
        self._sample = sample
        self.slates = list(slates)
        self.rewards = np.asarray(rewards, dtype=np.float64)
        self.log_probs = np.asarray(log_probs, dtype=np.float64)

    @property
    def sample(self):
        return self._sample


class TrainBatch(record_t):
    def __init__(self, entries, temperature, rule=None, exhausted=0):
        super(TrainBatch, self).__init__()
        self.entries = list(entries)
        self.temperature = float(temperature)
        # samples left out because sampling found no legal slate
        self.exhausted = exhausted
        self._rule = rule

    @property
    def rule(self):
        return self._rule

    @property
    def rewards(self):
        return np.concatenate([entry.rewards for entry in self.entries]) if self.entries else np.zeros(0)


class StepStats(record_t):
    def __init__(self, mean_reward, entropy, surrogate):
        super(StepStats, self).__init__()
        self.mean_reward = mean_reward
        self.entropy = entropy
        self.surrogate = surrogate


def greedy_top_ctr_slate(evaluator, candidate_set, list_len=None):
    """
    The evaluator's greedy slate.

    Position by position, every remaining candidate is tried in the open slot
    with the rest of the slate padded in pctr order, and the candidate with the
    best evaluator list score is kept.
    """
    list_len = list_len or evaluator.list_len
    n = len(candidate_set)
    by_pctr = list(ranking_slate(candidate_set.arrays()["pctr"], n))
    chosen = []
    for _ in range(list_len):
        remaining = [i for i in by_pctr if i not in chosen]
        trials = []
        for candidate in remaining:
            padding = [i for i in remaining if i != candidate][:list_len - len(chosen) - 1]
            trials.append(tuple(chosen + [candidate] + padding))
        scores = score_lists(evaluator, candidate_set, trials).sum(axis=1)
        chosen.append(remaining[int(np.argmax(scores))])
    return tuple(chosen)


def _group_by_size(entries):
    groups = {}
    for entry in entries:
        groups.setdefault(len(entry.sample.candidate_set), []).append(entry)
    return list(groups.values())


def _zero_grads(model):
    return {name: np.zeros_like(value) for name, value in model.parameters().items()}


def _accumulate(total, grads):
    for name, value in grads.items():
        total[name] += value


def surrogate_loss(model, batch):
    """
    The policy-gradient surrogate ``-sum (reward - mean reward) * log p(slate)``.

    Log-likelihoods are re-evaluated under the model's current parameters.

    Args:
        model (GeneratorModel): The generator.
        batch (TrainBatch): Slates and rewards.

    Returns:
        Tuple[float, Dict[str, numpy.ndarray], StepStats]: The value, its parameter
        gradients and the batch statistics.
    """
    if not batch.entries:
        raise UsageError("policy-gradient batch is empty")
    all_rewards = batch.rewards
    if not all_rewards.size:
        raise UsageError("policy-gradient batch has no slates")
    baseline = all_rewards.mean()
    value, entropies = 0.0, []
    grads = _zero_grads(model)
    for group in _group_by_size(batch.entries):
        logits, cache = model.forward([entry.sample.candidate_set for entry in group])
        probs = column_softmax(logits)
        upstream = np.zeros_like(probs)
        for b, entry in enumerate(group):
            entropies.append(row_entropy(temperature_table(probs[b], batch.temperature)))
            for slate, reward in zip(entry.slates, entry.rewards):
                log_prob, grad = list_log_prob_and_grad(probs[b], slate, batch.temperature, batch.rule)
                advantage = reward - baseline
                value -= advantage * log_prob
                upstream[b] -= advantage * grad
        _accumulate(grads, model.backward(cache, column_softmax_backward(probs, upstream)))
    stats = StepStats(float(baseline), float(np.mean(entropies)), float(value))
    return value, grads, stats


def policy_gradient_step(model, batch, state):
    """
    One AdaGrad step on the surrogate.

    Returns:
        Tuple[GeneratorModel, StepStats]: The updated model and the batch statistics.
    """
    value, grads, stats = surrogate_loss(model, batch)
    if not np.isfinite(value):
        raise TrainingError("Non-finite surrogate for slates {}".format(
            [entry.slates for entry in batch.entries]))
    try:
        adagrad_step(model.parameters(), grads, state)
    except TrainingError as exc:
        raise TrainingError("{}; slates {}".format(exc, [entry.slates for entry in batch.entries]))
    logger.debug("policy step: mean reward {:.6f} entropy {:.4f}".format(stats.mean_reward, stats.entropy))
    return model, stats


def assemble_batch(model, samples, reward_fn, generation, rng, extra_slates=None):
    """
    Samples slates from the current policy and scores them.

    Args:
        model (GeneratorModel): The generator.
        samples (Sequence[LoggedSample]): The batch samples.
        reward_fn (RewardFn): Scores the slates of one sample.
        generation (GenerationConfig): Sampling settings.
        rng (numpy.random.Generator): The sampling stream.
        extra_slates (Callable[[LoggedSample], List[tuple]], optional): Slates added to
            every sample's proposals.

    Returns:
        TrainBatch: The batch; samples whose policy has no legal slate are
        counted in ``exhausted`` instead of aborting the epoch.
    """
    entries, exhausted = [], 0
    for group in _group_by_size([BatchEntry(sample, [], [], []) for sample in samples]):
        logits, _ = model.forward([entry.sample.candidate_set for entry in group])
        probs = column_softmax(logits)
        for b, entry in enumerate(group):
            try:
                slates = mcmc_generate(probs[b], generation, rng)
            except GenerationExhaustedError as exc:
                logger.warning("Skipping sample with no legal slate: {}".format(exc))
                exhausted += 1
                continue
            for slate in (extra_slates(entry.sample) if extra_slates else []):
                if slate not in slates:
                    slates.append(slate)
            kept, log_probs = [], []
            for slate in slates:
                try:
                    log_probs.append(list_log_prob_and_grad(probs[b], slate, generation.temperature,
                                                            generation.rule)[0])
                except SamplingDomainError:
                    logger.debug("Dropping zero-probability slate {}".format(slate))
                    continue
                kept.append(slate)
            if kept:
                entries.append(BatchEntry(entry.sample, kept, reward_fn(entry.sample, kept), log_probs))
    return TrainBatch(entries, generation.temperature, generation.rule, exhausted)


class GeneratorEpoch(record_t):
    def __init__(self, epoch, mean_reward, average_ctr, selection_accuracy, rank_accuracy, softmax2d_loss):
        super(GeneratorEpoch, self).__init__()
        self.epoch = epoch
        self.mean_reward = mean_reward
        self.average_ctr = average_ctr
        self.selection_accuracy = selection_accuracy
        self.rank_accuracy = rank_accuracy
        self.softmax2d_loss = softmax2d_loss


def evaluate_generator(model, samples, evaluator, config, rng, rule=None):
    """
    Holdout metrics of the current policy.

    Returns:
        Tuple[float, float, float, float]: Average CTR of sampled slates (NaN without an
        evaluator), item selection accuracy, rank accuracy and mean Softmax2D loss
        against the logged slates. Samples with no legal slate under ``rule``
        are left out of the CTR average.
    """
    if not samples:
        nan = float("nan")
        return nan, nan, nan, nan
    generation = GenerationConfig(config.temperature, config.eval_rounds, model.list_len, rule)
    ctrs, selection, rank, losses = [], [], [], []
    for group in _group_by_size([BatchEntry(sample, [], [], []) for sample in samples]):
        logits, _ = model.forward([entry.sample.candidate_set for entry in group])
        probs = column_softmax(logits)
        for b, entry in enumerate(group):
            ids = entry.sample.selected.positions
            accuracies = generator_accuracies(probs[b], ids)
            selection.append(accuracies[0])
            rank.append(accuracies[1])
            losses.append(softmax2d_loss_and_grad(logits[b], ids, config.lambda_rank)[0])
            if evaluator is not None:
                try:
                    slates = mcmc_generate(probs[b], generation, rng)
                except GenerationExhaustedError as exc:
                    logger.warning("No legal holdout slate: {}".format(exc))
                    continue
                ctrs.append(score_lists(evaluator, entry.sample.candidate_set, slates).mean())
    average_ctr = float(np.mean(ctrs)) if ctrs else float("nan")
    return average_ctr, float(np.mean(selection)), float(np.mean(rank)), float(np.mean(losses))


def naive_step(model, samples, config, state):
    """One AdaGrad step of the Softmax2D objective on the logged slates; returns the mean loss."""
    grads = _zero_grads(model)
    total = 0.0
    for group in _group_by_size([BatchEntry(sample, [], [], []) for sample in samples]):
        logits, cache = model.forward([entry.sample.candidate_set for entry in group])
        upstream = np.zeros_like(logits)
        for b, entry in enumerate(group):
            loss, grad = softmax2d_loss_and_grad(logits[b], entry.sample.selected.positions, config.lambda_rank)
            total += loss
            upstream[b] = grad / len(samples)
        _accumulate(grads, model.backward(cache, upstream))
    loss = total / len(samples)
    if not np.isfinite(loss):
        raise TrainingError("Non-finite Softmax2D loss")
    adagrad_step(model.parameters(), grads, state)
    return loss


def train_generator(mode, samples, evaluator=None, config=None, schema=None, model=None, holdout=None, rule=None):
    """
    Trains (or continues training) the generator.

    Args:
        mode (str): ``naive`` or ``ctr``.
        samples (Iterable[LoggedSample]): Logged samples.
        evaluator (EvaluatorModel, optional): Frozen reward model, required in ctr mode.
        config (GeneratorConfig, optional): Hyperparameters.
        schema (FeatureSchema, optional): Needed when ``model`` is None.
        model (GeneratorModel, optional): Warm start.
        holdout (Sequence[LoggedSample], optional): Overrides the tail split.
        rule (LegalityRule, optional): Legality rule of the sampling policy.

    Returns:
        Tuple[GeneratorModel, List[GeneratorEpoch]]: The model and per-epoch metrics.
    """
    if mode not in (api.MODE_NAIVE, api.MODE_CTR):
        raise ConfigurationError("unknown generator mode {!r}".format(mode))
    if mode == api.MODE_CTR and evaluator is None:
        raise ConfigurationError("ctr mode needs an evaluator")
    config = config or GeneratorConfig()
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
    list_len = lengths.pop()
    if model is None:
        if schema is None:
            raise ConfigurationError("a schema is needed to build a new generator")
        model = GeneratorModel.build(schema, list_len, config, rng_stream(config.seed, "init"))
    elif model.list_len != list_len:
        raise ConfigurationError("generator L={} but samples have L={}".format(model.list_len, list_len))

    params = model.parameters()
    state = model.optimizer
    if state is None or state.learning_rate != config.learning_rate or state.epsilon != config.epsilon:
        state = AdaGradState.for_parameters(params, config.learning_rate, config.epsilon)
        model.optimizer = state

    order_rng = rng_stream(config.seed, "split")
    sampling_rng = rng_stream(config.seed, "sampling")
    eval_rng = rng_stream(config.seed, "eval")
    train_generation = GenerationConfig(config.temperature, config.train_rounds, list_len, rule)
    probe_generation = GenerationConfig(config.temperature, 1, list_len, rule)
    reward_fn = RewardFn.ctr(evaluator) if mode == api.MODE_CTR else RewardFn.naive()
    top_ctr = {}

    def accelerators(sample):
        extra = []
        if config.include_logged:
            extra.append(sample.selected.positions)
        if config.include_top_ctr:
            key = id(sample)
            if key not in top_ctr:
                top_ctr[key] = greedy_top_ctr_slate(evaluator, sample.candidate_set, list_len)
            extra.append(top_ctr[key])
        return extra

    metrics = []
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(len(train))
        rewards = []
        for batch_number, start in enumerate(range(0, len(train), config.batch_size)):
            batch_samples = [train[i] for i in order[start:start + config.batch_size]]
            if mode == api.MODE_NAIVE:
                probe = assemble_batch(model, batch_samples, reward_fn, probe_generation, sampling_rng)
                rewards.append(probe.rewards)
                loss = naive_step(model, batch_samples, config, state)
                logger.debug("naive epoch {} batch {} loss {:.6f}".format(epoch, batch_number, loss))
            else:
                batch = assemble_batch(model, batch_samples, reward_fn, train_generation, sampling_rng, accelerators)
                rewards.append(batch.rewards)
                if not batch.entries:
                    logger.warning("epoch {} batch {}: no legal slate in any sample, step skipped".format(
                        epoch, batch_number))
                    continue
                policy_gradient_step(model, batch, state)
        average_ctr, selection, rank, loss = evaluate_generator(model, holdout, evaluator, config, eval_rng, rule)
        rewards = np.concatenate(rewards) if rewards else np.zeros(0)
        mean_reward = float(rewards.mean()) if rewards.size else float("nan")
        row = GeneratorEpoch(epoch, mean_reward, average_ctr, selection, rank, loss)
        logger.info("{} generator epoch {}: reward {:.4f} avg ctr {:.4f} sel {:.3f} rank {:.3f}".format(
            mode, epoch, row.mean_reward, row.average_ctr, row.selection_accuracy, row.rank_accuracy))
        metrics.append(row)
    return model, metrics

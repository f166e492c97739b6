"""
Synthetic contextual-click world and the two-step bootstrap.

Step 1 serves heuristic candidate slates picked by a List Evaluator that is
retrained every day on the accumulated log. Step 2 adds the generator: its
MCMC proposals compete with the heuristic pool under the evaluator, and the
generator is retrained daily (Softmax2D warm-up, then CTR mode).
"""
# Standard library imports
import dataclasses
import logging

# Third party imports
import numpy as np

# Local application imports
from combinatorial_recommender import api
from combinatorial_recommender.config import BootstrapConfig, WorldConfig, rng_stream, traffic_fraction
from combinatorial_recommender.datamodel import (
    CATEGORICAL,
    NUMERIC,
    CandidateSet,
    FeatureSchema,
    FeatureSpec,
    Item,
    LoggedSample,
    Slate,
    record_t,
    slate_positions,
)
from combinatorial_recommender.errors import UsageError
from combinatorial_recommender.evaluator import (
    EvaluatorModel,
    holdout_auc,
    select_best,
    train_evaluator,
    train_pointwise,
)
from combinatorial_recommender.generator import generator_accuracies, policy_matrices
from combinatorial_recommender.micrograd import sigmoid
from combinatorial_recommender.sampler import GenerationConfig, heuristic_generate, mcmc_generate
from combinatorial_recommender.training import train_generator

logger = logging.getLogger(__name__)

QUALITY_BOUNDARIES = (-1.0, -0.5, 0.0, 0.5, 1.0)
PRICE_BOUNDARIES = (0.5, 1.0, 2.0, 4.0)
ACTIVITY_BOUNDARIES = (0.25, 0.5, 0.75)
EMBEDDING_DIM = 4


class SyntheticWorld(object):
    """
    A catalog, a user population and the ground-truth click model.

    Click probability of the item at position i for user u::

        sigmoid(base + w * quality + a * <pref_u, style_item>)
            * position_bias[i] * exp(-beta * earlier same-category items)

    Args:
        seed (int): The world seed.
        config (WorldConfig): Sizes and click-model parameters.
    """
    def __init__(self, seed, config, item_category, item_style, item_quality, item_price, style_vectors,
                 user_segment, user_activity, user_preference, item_pctr):
        self.seed = int(seed)
        self.config = config
        self.item_category = item_category
        self.item_style = item_style
        self.item_quality = item_quality
        self.item_price = item_price
        self.style_vectors = style_vectors
        self.user_segment = user_segment
        self.user_activity = user_activity
        self.user_preference = user_preference
        self.item_pctr = item_pctr
        self.schema = world_schema(config)

    @property
    def list_len(self):
        return self.config.list_len

    def affinity(self, user, catalog_ids):
        return self.style_vectors[self.item_style[catalog_ids]] @ self.user_preference[user]

    def click_probabilities(self, user, catalog_ids):
        """
        Ground-truth CTR of each slate position.

        Args:
            user (int): User index.
            catalog_ids (Sequence[int]): Catalog ids in slate order.

        Returns:
            numpy.ndarray: One probability per position, in (0, 1).
        """
        catalog_ids = np.asarray(catalog_ids, dtype=np.int64)
        config = self.config
        base = sigmoid(config.base_logit + config.quality_weight * self.item_quality[catalog_ids]
                       + config.affinity_scale * self.affinity(user, catalog_ids))
        categories = self.item_category[catalog_ids]
        repeats = np.array([np.count_nonzero(categories[:i] == categories[i]) for i in range(len(catalog_ids))])
        bias = np.asarray(config.position_bias[:len(catalog_ids)], dtype=np.float64)
        return base * bias * np.exp(-config.redundancy_penalty * repeats)

    def item(self, catalog_id):
        return Item(int(catalog_id),
                    [int(self.item_category[catalog_id]) + 1, int(self.item_style[catalog_id]) + 1],
                    [float(self.item_quality[catalog_id]), float(self.item_price[catalog_id])],
                    float(self.item_pctr[catalog_id]))

    def candidate_set(self, user, catalog_ids):
        return CandidateSet([self.item(i) for i in catalog_ids],
                            [int(self.user_segment[user]) + 1], [float(self.user_activity[user])])


def world_schema(config):
    """Feature schema of a synthetic world; index 0 of each vocabulary is out-of-vocab."""
    return FeatureSchema(
        [
            FeatureSpec("category", CATEGORICAL, EMBEDDING_DIM, vocab_size=config.num_categories + 1),
            FeatureSpec("style", CATEGORICAL, EMBEDDING_DIM, vocab_size=config.num_styles + 1),
            FeatureSpec("quality", NUMERIC, EMBEDDING_DIM, boundaries=QUALITY_BOUNDARIES),
            FeatureSpec("price", NUMERIC, EMBEDDING_DIM, boundaries=PRICE_BOUNDARIES),
        ],
        [
            FeatureSpec("segment", CATEGORICAL, EMBEDDING_DIM, vocab_size=config.num_segments + 1),
            FeatureSpec("activity", NUMERIC, EMBEDDING_DIM, boundaries=ACTIVITY_BOUNDARIES),
        ],
    )


def gen_world(seed, config=None):
    """
    Builds a world deterministically from ``seed``.

    Args:
        seed (int): The world seed.
        config (WorldConfig, optional): Sizes and click-model parameters.

    Returns:
        SyntheticWorld: The world.
    """
    config = config or WorldConfig()
    rng = rng_stream(seed, "data")
    if config.redundancy_penalty == 0 and len(set(config.position_bias)) == 1:
        logger.warning("World is non-contextual: no redundancy penalty and a flat position bias")
    item_category = rng.integers(config.num_categories, size=config.num_items)
    item_style = rng.integers(config.num_styles, size=config.num_items)
    item_quality = rng.normal(0.0, 1.0, size=config.num_items)
    item_price = rng.lognormal(0.0, 0.75, size=config.num_items)
    style_vectors = rng.normal(0.0, 1.0 / np.sqrt(config.latent_dim), size=(config.num_styles, config.latent_dim))
    segment_centers = rng.normal(0.0, 1.0, size=(config.num_segments, config.latent_dim))
    user_segment = rng.integers(config.num_segments, size=config.num_users)
    user_activity = rng.uniform(0.0, 1.0, size=config.num_users)
    user_preference = segment_centers[user_segment] + rng.normal(
        0.0, config.user_noise, size=(config.num_users, config.latent_dim))
    # context-free estimate: population-average affinity, top-position bias, logit noise
    mean_affinity = style_vectors[item_style] @ user_preference.mean(axis=0)
    logit = (config.base_logit + config.quality_weight * item_quality + config.affinity_scale * mean_affinity
             + rng.normal(0.0, config.pctr_noise, size=config.num_items))
    item_pctr = sigmoid(logit) * config.position_bias[0]
    return SyntheticWorld(seed, config, item_category, item_style, item_quality, item_price, style_vectors,
                          user_segment, user_activity, user_preference, item_pctr)


def sample_request(world, rng):
    """Draws a user and N distinct catalog items; returns ``(user, candidate_set)``."""
    user = int(rng.integers(world.config.num_users))
    catalog_ids = rng.choice(world.config.num_items, size=world.config.candidate_count, replace=False)
    return user, world.candidate_set(user, catalog_ids)


def _catalog_ids(candidate_set, slate):
    return [candidate_set.items[i].item_id for i in slate_positions(slate)]


def simulate_clicks(world, user, candidate_set, slate, rng):
    """
    Shows every position and draws clicks from the ground-truth model.

    Returns:
        Slate: The slate with exposure all 1 and Bernoulli clicks.
    """
    positions = slate_positions(slate)
    probabilities = world.click_probabilities(user, _catalog_ids(candidate_set, positions))
    clicks = (rng.random(len(positions)) < probabilities).astype(np.int64)
    return Slate(positions, [1] * len(positions), clicks.tolist())


def generate_log(world, count, seed, heuristic_count=8):
    """
    Decision log of a weak logging policy: a random slate from each request's heuristic pool.

    Args:
        world (SyntheticWorld): The world.
        count (int): Number of requests.
        seed (int): Run seed.
        heuristic_count (int, optional): Pool size.

    Returns:
        List[LoggedSample]: The samples.
    """
    requests = rng_stream(seed, "data")
    sampling = rng_stream(seed, "sampling")
    clicks = rng_stream(seed, "clicks")
    samples = []
    for _ in range(count):
        user, candidate_set = sample_request(world, requests)
        pool = heuristic_generate(candidate_set, heuristic_count, sampling, world.list_len)
        slate = pool[int(sampling.integers(len(pool)))]
        samples.append(LoggedSample(candidate_set, simulate_clicks(world, user, candidate_set, slate, clicks)))
    return samples


def winning_rate(winner_sources):
    """Fraction of winners tagged as model-generated."""
    winner_sources = list(winner_sources)
    if not winner_sources:
        raise UsageError("winning_rate needs at least one winner")
    return sum(1 for source in winner_sources if source == api.SOURCE_MODEL) / float(len(winner_sources))


class DayMetrics(record_t):
    def __init__(self, day, winning_rate, item_selection_accuracy, rank_accuracy, realized_ctr, evaluator_auc,
                 released_share=0.0):
        super(DayMetrics, self).__init__()
        self.day = day
        self.winning_rate = winning_rate
        self.item_selection_accuracy = item_selection_accuracy
        self.rank_accuracy = rank_accuracy
        self.realized_ctr = realized_ctr
        self.evaluator_auc = evaluator_auc
        # not a CSV column: share of requests served by the gray-released component
        self.released_share = released_share


class BootstrapArtifacts(object):
    """
    State handed from one bootstrap step to the next.

    Attributes:
        logs (List[LoggedSample]): Every served request.
        evaluator (EvaluatorModel): The current evaluator.
        pointwise (PointwiseModel): The point-wise baseline, when tracked.
        generator (GeneratorModel): The generator, after step 2.
        day_metrics (List[DayMetrics]): One row per day.
        pointwise_auc (List[float]): Baseline holdout AUC per step-1 day.
    """
    def __init__(self, logs, evaluator, pointwise=None, generator=None, day_metrics=None, pointwise_auc=None):
        self.logs = logs
        self.evaluator = evaluator
        self.pointwise = pointwise
        self.generator = generator
        self.day_metrics = day_metrics or []
        self.pointwise_auc = pointwise_auc or []


def _realized_ctr(samples):
    exposure = sum(sum(s.selected.exposure) for s in samples)
    clicks = sum(sum(s.selected.click) for s in samples)
    return clicks / float(exposure) if exposure else float("nan")


def run_step1(world, days, config=None):
    """
    Heuristic generation with a model-based evaluator, retrained day by day.

    On the gray-released share of traffic the evaluator picks the best slate
    of the heuristic pool; the rest is served the ranking slate. The evaluator
    starts from a zero output layer, so day 1 ties resolve to the ranking slate.

    Args:
        world (SyntheticWorld): The world; its seed drives every stream.
        days (int): Simulated days.
        config (BootstrapConfig, optional): Day-loop settings.

    Returns:
        BootstrapArtifacts: Logs, models and one DayMetrics per day.
    """
    config = config or BootstrapConfig()
    seed = world.seed
    requests = rng_stream(seed, "data")
    sampling = rng_stream(seed, "sampling")
    clicks = rng_stream(seed, "clicks")
    evaluator_config = dataclasses.replace(config.evaluator, epochs=config.evaluator_epochs_per_day, seed=seed)
    evaluator = EvaluatorModel.build(world.schema, world.list_len, evaluator_config, rng_stream(seed, "init"),
                                     zero_head=True)
    artifacts = BootstrapArtifacts([], evaluator)
    for day in range(1, days + 1):
        fraction = traffic_fraction(day, config.evaluator_ramp_day, config)
        served, released = [], 0
        for _ in range(config.requests_per_day):
            user, candidate_set = sample_request(world, requests)
            pool = heuristic_generate(candidate_set, config.heuristic_count, sampling, world.list_len)
            slate = pool[0]
            if sampling.random() < fraction:
                slate = pool[select_best(pool, artifacts.evaluator, candidate_set)]
                released += 1
            served.append(LoggedSample(candidate_set, simulate_clicks(world, user, candidate_set, slate, clicks)))
        auc = holdout_auc(artifacts.evaluator, served)
        if config.track_pointwise:
            artifacts.pointwise_auc.append(holdout_auc(artifacts.pointwise, served) if artifacts.pointwise
                                           else float("nan"))
        artifacts.logs.extend(served)
        artifacts.evaluator, _ = train_evaluator(artifacts.logs, evaluator_config, model=artifacts.evaluator,
                                                 holdout=[])
        if config.track_pointwise:
            artifacts.pointwise, _ = train_pointwise(artifacts.logs, evaluator_config, schema=world.schema,
                                                     model=artifacts.pointwise, holdout=[])
        row = DayMetrics(day, 0.0, 0.0, 0.0, _realized_ctr(served), auc, released / float(len(served)))
        logger.info("step 1 day {}: realized ctr {:.4f} evaluator auc {:.4f}".format(day, row.realized_ctr, auc))
        artifacts.day_metrics.append(row)
    return artifacts


def _serve_step2(world, artifacts, candidate_set, policy, config, sampling, use_model):
    pool = heuristic_generate(candidate_set, config.heuristic_count, sampling, world.list_len)
    if not use_model:
        return pool[select_best(pool, artifacts.evaluator, candidate_set)], api.SOURCE_HEURISTIC
    generation = GenerationConfig(config.temperature, config.max_rounds, world.list_len)
    proposals = mcmc_generate(policy, generation, sampling)
    # a slate proposed by both sides counts as the model's
    sources = [api.SOURCE_MODEL] * len(proposals)
    for slate in pool:
        if slate not in proposals:
            proposals.append(slate)
            sources.append(api.SOURCE_HEURISTIC)
    best = select_best(proposals, artifacts.evaluator, candidate_set)
    return proposals[best], sources[best]


def _released_winning_rate(day, sources):
    # only requests where model proposals competed count
    if not sources:
        logger.warning("step 2 day {}: no request was released to the generator".format(day))
        return float("nan")
    return winning_rate(sources)


def run_step2(world, days, config=None, step1_artifacts=None):
    """
    Adds the model generator to the serving loop.

    The generator is warmed up on the step-1 log with the Softmax2D objective,
    then retrained each day in ctr mode on that day's log under the current
    evaluator. On the gray-released share of traffic its proposals compete
    with the heuristic pool; accuracies compare the policy matrix with each
    request's served slate.

    Args:
        world (SyntheticWorld): The world.
        days (int): Simulated days.
        config (BootstrapConfig, optional): Day-loop settings.
        step1_artifacts (BootstrapArtifacts): Output of ``run_step1``.

    Returns:
        BootstrapArtifacts: The artifacts with the generator and step-2 DayMetrics.
    """
    config = config or BootstrapConfig()
    if step1_artifacts is None or not step1_artifacts.logs:
        raise UsageError("step 2 needs the step-1 log and evaluator")
    seed = world.seed
    # offset streams so step 2 does not replay step-1 randomness
    requests = rng_stream(seed + 1, "data")
    sampling = rng_stream(seed + 1, "sampling")
    clicks = rng_stream(seed + 1, "clicks")
    evaluator_config = dataclasses.replace(config.evaluator, epochs=config.evaluator_epochs_per_day, seed=seed)
    warmup_config = dataclasses.replace(config.generator, epochs=config.naive_warmup_epochs, seed=seed,
                                        temperature=config.temperature)
    generator = step1_artifacts.generator
    if config.naive_warmup_epochs:
        generator, _ = train_generator(api.MODE_NAIVE, step1_artifacts.logs, config=warmup_config,
                                       schema=world.schema, model=generator, holdout=[])
    elif generator is None:
        generator, _ = train_generator(api.MODE_NAIVE, step1_artifacts.logs[:1],
                                       config=dataclasses.replace(warmup_config, epochs=0),
                                       schema=world.schema, holdout=[])
    artifacts = BootstrapArtifacts(list(step1_artifacts.logs), step1_artifacts.evaluator,
                                   step1_artifacts.pointwise, generator)
    for day in range(1, days + 1):
        fraction = traffic_fraction(day, config.ramp_day, config)
        requests_today = [sample_request(world, requests) for _ in range(config.requests_per_day)]
        policies = np.concatenate([policy_matrices(artifacts.generator, [cs for _, cs in chunk])
                                   for chunk in _chunks(requests_today, 256)], axis=0)
        served, sources, selection, rank = [], [], [], []
        for (user, candidate_set), policy in zip(requests_today, policies):
            released = sampling.random() < fraction
            slate, source = _serve_step2(world, artifacts, candidate_set, policy, config, sampling, released)
            if released:
                sources.append(source)
            accuracies = generator_accuracies(policy, slate)
            selection.append(accuracies[0])
            rank.append(accuracies[1])
            served.append(LoggedSample(candidate_set, simulate_clicks(world, user, candidate_set, slate, clicks)))
        auc = holdout_auc(artifacts.evaluator, served)
        artifacts.logs.extend(served)
        artifacts.evaluator, _ = train_evaluator(served, evaluator_config, model=artifacts.evaluator, holdout=[])
        if config.generator_epochs_per_day:
            daily = dataclasses.replace(config.generator, epochs=config.generator_epochs_per_day, seed=seed + day,
                                        temperature=config.temperature)
            artifacts.generator, _ = train_generator(api.MODE_CTR, served, artifacts.evaluator, daily,
                                                     model=artifacts.generator, holdout=[])
        row = DayMetrics(day, _released_winning_rate(day, sources), float(np.mean(selection)),
                         float(np.mean(rank)), _realized_ctr(served), auc, len(sources) / float(len(served)))
        logger.info("step 2 day {}: winning rate {:.3f} sel {:.3f} rank {:.3f} ctr {:.4f}".format(
            day, row.winning_rate, row.item_selection_accuracy, row.rank_accuracy, row.realized_ctr))
        artifacts.day_metrics.append(row)
    return artifacts


def _chunks(values, size):
    return [values[start:start + size] for start in range(0, len(values), size)]

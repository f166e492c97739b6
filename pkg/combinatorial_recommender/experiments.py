"""
Seed-averaged comparisons on synthetic worlds: List Evaluator vs the
point-wise model (holdout AUC) and ctr vs naive generator training
(Average CTR under one frozen evaluator).
"""
# Standard library imports
import dataclasses
import logging

# Third party imports
import pandas as pd

# Local application imports
from combinatorial_recommender import api
from combinatorial_recommender.config import (
    DEFAULT_HEURISTIC_COUNT,
    EvaluatorConfig,
    GeneratorConfig,
    WorldConfig,
)
from combinatorial_recommender.errors import UsageError
from combinatorial_recommender.evaluator import split_holdout, train_evaluator, train_pointwise
from combinatorial_recommender.simulator import gen_world, generate_log
from combinatorial_recommender.training import train_generator

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (1, 2, 3, 4, 5)
DEFAULT_REQUESTS = 4000


def _summary(frame, name):
    means = frame.mean(numeric_only=True)
    logger.info("{} over {} seeds: {}".format(name, len(frame), means.round(6).to_dict()))
    return frame


def compare_evaluator_pointwise(seeds=DEFAULT_SEEDS, world_config=None, evaluator_config=None,
                                requests=DEFAULT_REQUESTS, heuristic_count=DEFAULT_HEURISTIC_COUNT):
    """
    Trains both CTR models on the same log and compares their final holdout AUC.

    Returns:
        pandas.DataFrame: Columns ``seed, pointwise_auc, evaluator_auc, diff``.
    """
    seeds = list(seeds)
    if not seeds:
        raise UsageError("at least one seed is needed")
    world_config = world_config or WorldConfig()
    evaluator_config = evaluator_config or EvaluatorConfig()
    rows = []
    for seed in seeds:
        world = gen_world(seed, world_config)
        train, holdout = split_holdout(generate_log(world, requests, seed, heuristic_count),
                                       evaluator_config.holdout_fraction)
        config = dataclasses.replace(evaluator_config, seed=seed)
        _, evaluator_metrics = train_evaluator(train, config, schema=world.schema, holdout=holdout)
        _, pointwise_metrics = train_pointwise(train, config, schema=world.schema, holdout=holdout)
        evaluator_auc = evaluator_metrics[-1].auc if evaluator_metrics else float("nan")
        pointwise_auc = pointwise_metrics[-1].auc if pointwise_metrics else float("nan")
        rows.append((seed, pointwise_auc, evaluator_auc, evaluator_auc - pointwise_auc))
        logger.info("seed {}: pointwise auc {:.4f} evaluator auc {:.4f}".format(seed, pointwise_auc, evaluator_auc))
    return _summary(pd.DataFrame(rows, columns=list(api.EVALUATOR_EXPERIMENT_COLUMNS)), "evaluator vs pointwise")


def compare_generator_modes(seeds=DEFAULT_SEEDS, world_config=None, evaluator_config=None, generator_config=None,
                            requests=DEFAULT_REQUESTS, heuristic_count=DEFAULT_HEURISTIC_COUNT):
    """
    Trains one evaluator per seed, freezes it, then trains a naive and a ctr
    generator from the same initialization and compares their final Average CTR.

    Returns:
        pandas.DataFrame: Columns ``seed, naive_average_ctr, ctr_average_ctr, relative_gain``.
    """
    seeds = list(seeds)
    if not seeds:
        raise UsageError("at least one seed is needed")
    world_config = world_config or WorldConfig()
    evaluator_config = evaluator_config or EvaluatorConfig()
    generator_config = generator_config or GeneratorConfig()
    rows = []
    for seed in seeds:
        world = gen_world(seed, world_config)
        samples = generate_log(world, requests, seed, heuristic_count)
        train, holdout = split_holdout(samples, generator_config.holdout_fraction)
        evaluator, _ = train_evaluator(train, dataclasses.replace(evaluator_config, seed=seed),
                                       schema=world.schema, holdout=holdout)
        config = dataclasses.replace(generator_config, seed=seed)
        results = {}
        for mode in (api.MODE_NAIVE, api.MODE_CTR):
            _, metrics = train_generator(mode, train, evaluator, config, schema=world.schema, holdout=holdout)
            results[mode] = metrics[-1].average_ctr if metrics else float("nan")
        naive, ctr = results[api.MODE_NAIVE], results[api.MODE_CTR]
        gain = (ctr - naive) / naive if naive else float("nan")
        rows.append((seed, naive, ctr, gain))
        logger.info("seed {}: naive {:.4f} ctr {:.4f} gain {:.2%}".format(seed, naive, ctr, gain))
    return _summary(pd.DataFrame(rows, columns=list(api.GENERATOR_EXPERIMENT_COLUMNS)), "naive vs ctr")

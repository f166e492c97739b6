# Standard library imports
import dataclasses
from typing import Tuple

# Third party imports
import numpy as np

# Local application imports
from combinatorial_recommender.errors import ConfigurationError

DEFAULT_LIST_LEN = 4
DEFAULT_CANDIDATE_COUNT = 40
DEFAULT_LEARNING_RATE = 0.01
DEFAULT_EPSILON = 1e-8
DEFAULT_CLAMP = 1e-7
DEFAULT_LAMBDA = 1.0
DEFAULT_TEMPERATURE = 5.0
DEFAULT_MAX_ROUNDS = 32
DEFAULT_HEURISTIC_COUNT = 8
DEFAULT_REQUESTS_PER_DAY = 2000
DEFAULT_RAMP_DAY = 20
DEFAULT_PRE_RAMP_FRACTION = 0.05
DEFAULT_POST_RAMP_FRACTION = 0.95
DEFAULT_MAX_PER_CATEGORY = 2

ENV_PREFIX = "CRREC_"

# Named random sub-streams. The ids are part of the reproducibility contract.
STREAMS = {
    "data": 0,
    "init": 1,
    "sampling": 2,
    "clicks": 3,
    "split": 4,
    "eval": 5,
}


def rng_stream(seed, name):
    """
    Creates the numpy generator for one named sub-stream of a run seed.

    Args:
        seed (int): The run seed.
        name (str): One of ``STREAMS``.

    Returns:
        numpy.random.Generator: The seeded generator.
    """
    if name not in STREAMS:
        raise ConfigurationError("Unknown random stream {!r}".format(name))
    if int(seed) < 0:
        raise ConfigurationError("Seed must be non-negative, got {}".format(seed))
    return np.random.default_rng([int(seed), STREAMS[name]])


def _check_sizes(name, sizes):
    if any(int(size) < 1 for size in sizes):
        raise ConfigurationError("{} must be positive widths, got {}".format(name, sizes))


def _check_fraction(name, value, allow_zero=True):
    low_ok = value >= 0.0 if allow_zero else value > 0.0
    if not (low_ok and value <= 1.0):
        raise ConfigurationError("{} must lie in [0, 1], got {}".format(name, value))


@dataclasses.dataclass
class EvaluatorConfig:
    point_sizes: Tuple[int, ...] = (64, 32)
    head_sizes: Tuple[int, ...] = (64,)
    learning_rate: float = DEFAULT_LEARNING_RATE
    epsilon: float = DEFAULT_EPSILON
    clamp: float = DEFAULT_CLAMP
    epochs: int = 10
    batch_size: int = 32
    holdout_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.point_sizes = tuple(int(size) for size in self.point_sizes)
        self.head_sizes = tuple(int(size) for size in self.head_sizes)
        _check_sizes("point_sizes", self.point_sizes)
        _check_sizes("head_sizes", self.head_sizes)
        if not self.point_sizes:
            raise ConfigurationError("point_sizes needs at least one layer")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ConfigurationError("learning_rate and epsilon must be positive")
        if not 0 < self.clamp < 0.5:
            raise ConfigurationError("clamp must lie in (0, 0.5), got {}".format(self.clamp))
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        _check_fraction("holdout_fraction", self.holdout_fraction)


@dataclasses.dataclass
class GeneratorConfig:
    point_sizes: Tuple[int, ...] = (64, 32)
    classifier_sizes: Tuple[int, ...] = (64,)
    learning_rate: float = DEFAULT_LEARNING_RATE
    epsilon: float = DEFAULT_EPSILON
    lambda_rank: float = DEFAULT_LAMBDA
    temperature: float = DEFAULT_TEMPERATURE
    train_rounds: int = 8
    eval_rounds: int = 8
    epochs: int = 10
    batch_size: int = 16
    holdout_fraction: float = 0.2
    include_logged: bool = True
    include_top_ctr: bool = True
    seed: int = 0

    def __post_init__(self):
        self.point_sizes = tuple(int(size) for size in self.point_sizes)
        self.classifier_sizes = tuple(int(size) for size in self.classifier_sizes)
        _check_sizes("point_sizes", self.point_sizes)
        _check_sizes("classifier_sizes", self.classifier_sizes)
        if not self.point_sizes:
            raise ConfigurationError("point_sizes needs at least one layer")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ConfigurationError("learning_rate and epsilon must be positive")
        if self.lambda_rank < 0:
            raise ConfigurationError("lambda must be >= 0, got {}".format(self.lambda_rank))
        if not np.isfinite(self.temperature) or self.temperature < 0:
            raise ConfigurationError("temperature must be finite and >= 0")
        if self.train_rounds < 1 or self.eval_rounds < 1:
            raise ConfigurationError("sample rounds must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        _check_fraction("holdout_fraction", self.holdout_fraction)


@dataclasses.dataclass
class WorldConfig:
    num_items: int = 500
    num_users: int = 1000
    num_categories: int = 10
    num_styles: int = 8
    num_segments: int = 6
    latent_dim: int = 4
    candidate_count: int = DEFAULT_CANDIDATE_COUNT
    list_len: int = DEFAULT_LIST_LEN
    position_bias: Tuple[float, ...] = (1.0, 0.8, 0.65, 0.5)
    redundancy_penalty: float = 0.8
    quality_weight: float = 1.0
    affinity_scale: float = 1.5
    base_logit: float = -1.0
    pctr_noise: float = 0.25
    user_noise: float = 0.1

    def __post_init__(self):
        self.position_bias = tuple(float(bias) for bias in self.position_bias)
        if self.list_len < 1:
            raise ConfigurationError("list_len must be >= 1")
        if self.candidate_count < self.list_len:
            raise ConfigurationError(
                "candidate_count {} is smaller than list_len {}".format(self.candidate_count, self.list_len))
        if self.num_items < self.candidate_count:
            raise ConfigurationError("num_items must be >= candidate_count")
        if min(self.num_users, self.num_categories, self.num_styles, self.num_segments, self.latent_dim) < 1:
            raise ConfigurationError("world sizes must be positive")
        if len(self.position_bias) != self.list_len:
            raise ConfigurationError(
                "position_bias needs {} entries, got {}".format(self.list_len, len(self.position_bias)))
        if any(not 0.0 < bias <= 1.0 for bias in self.position_bias):
            raise ConfigurationError("position_bias entries must lie in (0, 1]")
        if any(later > earlier for earlier, later in zip(self.position_bias, self.position_bias[1:])):
            raise ConfigurationError("position_bias must not increase with position")
        if self.redundancy_penalty < 0:
            raise ConfigurationError("redundancy_penalty must be >= 0")
        if self.pctr_noise < 0 or self.user_noise < 0:
            raise ConfigurationError("noise levels must be >= 0")


@dataclasses.dataclass
class BootstrapConfig:
    requests_per_day: int = DEFAULT_REQUESTS_PER_DAY
    heuristic_count: int = DEFAULT_HEURISTIC_COUNT
    temperature: float = DEFAULT_TEMPERATURE
    max_rounds: int = DEFAULT_MAX_ROUNDS
    step1_days: int = 10
    evaluator_ramp_day: int = 2
    ramp_day: int = DEFAULT_RAMP_DAY
    pre_ramp_fraction: float = DEFAULT_PRE_RAMP_FRACTION
    post_ramp_fraction: float = DEFAULT_POST_RAMP_FRACTION
    evaluator_epochs_per_day: int = 1
    generator_epochs_per_day: int = 1
    naive_warmup_epochs: int = 3
    track_pointwise: bool = True
    evaluator: EvaluatorConfig = dataclasses.field(default_factory=EvaluatorConfig)
    generator: GeneratorConfig = dataclasses.field(default_factory=GeneratorConfig)

    def __post_init__(self):
        if self.requests_per_day < 1 or self.heuristic_count < 1 or self.max_rounds < 1:
            raise ConfigurationError("requests_per_day, heuristic_count and max_rounds must be >= 1")
        if not np.isfinite(self.temperature) or self.temperature < 0:
            raise ConfigurationError("temperature must be finite and >= 0")
        if self.step1_days < 0 or self.ramp_day < 1 or self.evaluator_ramp_day < 1:
            raise ConfigurationError("step1_days must be >= 0 and ramp days >= 1")
        _check_fraction("pre_ramp_fraction", self.pre_ramp_fraction)
        _check_fraction("post_ramp_fraction", self.post_ramp_fraction)
        if min(self.evaluator_epochs_per_day, self.generator_epochs_per_day, self.naive_warmup_epochs) < 0:
            raise ConfigurationError("epoch counts must be >= 0")


def traffic_fraction(day, ramp_day, config):
    """
    Share of a day's requests served by the component being gray released.

    Args:
        day (int): 1-based simulated day.
        ramp_day (int): First day served at the post-ramp fraction.
        config (BootstrapConfig): Holds the two fractions.

    Returns:
        float: The fraction.
    """
    return config.post_ramp_fraction if day >= ramp_day else config.pre_ramp_fraction

"""
Slate generation: the temperature table over a policy matrix, sequential
without-replacement sampling with legality checks, and the pctr-based
heuristic generator used before a model generator exists.
"""
# Standard library imports
import dataclasses
import logging

# Third party imports
import numpy as np

# Local application imports
from combinatorial_recommender.config import (
    DEFAULT_LIST_LEN,
    DEFAULT_MAX_PER_CATEGORY,
    DEFAULT_MAX_ROUNDS,
    DEFAULT_TEMPERATURE,
)
from combinatorial_recommender.datamodel import PolicyMatrix
from combinatorial_recommender.errors import (
    ConfigurationError,
    GenerationExhaustedError,
    NumericError,
    UsageError,
)

logger = logging.getLogger(__name__)


class LegalityRule(object):
    """
    A pure predicate over (partial slate, candidate index).

    Subclasses override ``is_legal``; ``legal_mask`` evaluates it over every candidate.
    """
    def is_legal(self, partial, candidate):
        raise NotImplementedError

    def legal_mask(self, partial, n):
        """
        Args:
            partial (Sequence[int]): Indices already placed.
            n (int): Candidate count.

        Returns:
            numpy.ndarray: n booleans, True where appending the candidate is legal.
        """
        return np.array([self.is_legal(partial, j) for j in range(n)], dtype=bool)


class AlwaysLegal(LegalityRule):
    def is_legal(self, partial, candidate):
        return True

    def legal_mask(self, partial, n):
        return np.ones(n, dtype=bool)


class MaxPerCategoryRule(LegalityRule):
    """
    At most ``max_count`` items of one category per slate.

    Args:
        categories (Sequence[int]): Category of each candidate, by candidate index.
        max_count (int, optional): Defaults to 2.
    """
    def __init__(self, categories, max_count=DEFAULT_MAX_PER_CATEGORY):
        if int(max_count) < 1:
            raise ConfigurationError("max_count must be >= 1, got {}".format(max_count))
        self.categories = np.asarray(categories, dtype=np.int64)
        self.max_count = int(max_count)

    @classmethod
    def from_candidate_set(cls, candidate_set, feature_index=0, max_count=DEFAULT_MAX_PER_CATEGORY):
        """Reads the categories from one categorical item feature of the set."""
        return cls(candidate_set.arrays()["categorical"][:, feature_index], max_count)

    def _counts(self, partial):
        placed = self.categories[np.asarray(partial, dtype=np.int64)]
        values, counts = np.unique(placed, return_counts=True)
        return dict(zip(values.tolist(), counts.tolist()))

    def is_legal(self, partial, candidate):
        return self._counts(partial).get(int(self.categories[candidate]), 0) < self.max_count

    def legal_mask(self, partial, n):
        if n != len(self.categories):
            raise UsageError("rule knows {} candidates, asked about {}".format(len(self.categories), n))
        mask = np.ones(n, dtype=bool)
        for category, count in self._counts(partial).items():
            if count >= self.max_count:
                mask[self.categories == category] = False
        return mask


@dataclasses.dataclass
class GenerationConfig:
    temperature: float = DEFAULT_TEMPERATURE
    max_rounds: int = DEFAULT_MAX_ROUNDS
    list_len: int = DEFAULT_LIST_LEN
    rule: LegalityRule = dataclasses.field(default_factory=AlwaysLegal)

    def __post_init__(self):
        if not np.isfinite(self.temperature) or self.temperature < 0:
            raise ConfigurationError("temperature must be finite and >= 0, got {}".format(self.temperature))
        if self.max_rounds < 1:
            raise ConfigurationError("max_rounds must be >= 1, got {}".format(self.max_rounds))
        if self.list_len < 1:
            raise ConfigurationError("list_len must be >= 1, got {}".format(self.list_len))
        if self.rule is None:
            self.rule = AlwaysLegal()


def policy_entries(policy):
    """The float64 matrix of a ``PolicyMatrix`` or of a raw (L+1) x N array."""
    entries = policy.entries if isinstance(policy, PolicyMatrix) else np.asarray(policy, dtype=np.float64)
    if entries.ndim != 2 or entries.shape[0] < 2:
        raise UsageError("policy matrix must be (L+1) x N, got shape {}".format(entries.shape))
    return entries


def temperature_table(policy, temperature):
    """
    Row distributions over items for positions 1..L.

    ``prob[i, j] = exp(t * M[i, j]) / sum_m exp(t * M[i, m])``, evaluated after
    subtracting each row's maximum.

    Args:
        policy (Union[PolicyMatrix, array_like]): The (L+1) x N policy matrix.
        temperature (float): t >= 0.

    Returns:
        numpy.ndarray: L x N row-stochastic matrix.
    """
    entries = policy_entries(policy)
    if not np.isfinite(temperature) or temperature < 0:
        raise ConfigurationError("temperature must be finite and >= 0, got {}".format(temperature))
    if not np.all(np.isfinite(entries)):
        raise NumericError("policy matrix has non-finite entries")
    scaled = temperature * entries[:-1]
    scaled = scaled - scaled.max(axis=1, keepdims=True)
    weights = np.exp(scaled)
    return weights / weights.sum(axis=1, keepdims=True)


def _draw(weights, rng):
    """Index drawn proportionally to nonnegative ``weights``; None if they are all zero."""
    cumulative = np.cumsum(weights)
    total = cumulative[-1]
    if not total > 0.0:
        return None
    index = int(np.searchsorted(cumulative, rng.random() * total, side="right"))
    return min(index, int(np.flatnonzero(weights)[-1]))


def _sample_round(prob, list_len, rule, rng):
    """One pass of sequential sampling; None when a row runs dry."""
    prob = prob.copy()
    chosen = []
    for position in range(list_len):
        while True:
            pick = _draw(prob[position], rng)
            if pick is None:
                return None
            if rule.is_legal(chosen, pick):
                break
            prob[position, pick] = 0.0
        chosen.append(pick)
        prob[:, pick] = 0.0
        rest = prob[position + 1:]
        sums = rest.sum(axis=1, keepdims=True)
        np.divide(rest, sums, out=rest, where=sums > 0.0)
    return tuple(chosen)


def mcmc_generate(policy, config, rng, unique=True):
    """
    Samples up to ``max_rounds`` slates from a policy matrix.

    Each round fills positions top-down from the temperature table. After a
    pick the item's column is zeroed and the remaining rows renormalized; an
    illegal pick is zeroed in its row and the row is sampled again. A round
    whose row runs dry is aborted.

    Args:
        policy (Union[PolicyMatrix, array_like]): The (L+1) x N policy matrix.
        config (GenerationConfig): Temperature, rounds, L and legality rule.
        rng (numpy.random.Generator): The sampling stream.
        unique (bool, optional): Drop repeated slates. Defaults to True.

    Returns:
        List[Tuple[int, ...]]: The slates as candidate-index tuples, in sampling order.
    """
    entries = policy_entries(policy)
    n = entries.shape[1]
    if config.list_len > entries.shape[0] - 1:
        raise UsageError("policy matrix has {} positions, L={}".format(entries.shape[0] - 1, config.list_len))
    if n < config.list_len:
        raise UsageError("N={} is smaller than L={}".format(n, config.list_len))
    prob = temperature_table(entries, config.temperature)[:config.list_len]
    slates, seen, aborted = [], set(), 0
    for _ in range(config.max_rounds):
        slate = _sample_round(prob, config.list_len, config.rule, rng)
        if slate is None:
            aborted += 1
            continue
        if unique:
            if slate in seen:
                continue
            seen.add(slate)
        slates.append(slate)
    if aborted:
        logger.warning("Aborted {} of {} sampling rounds on legality dead ends".format(aborted, config.max_rounds))
    if not slates:
        raise GenerationExhaustedError("all {} sampling rounds hit a legality dead end".format(config.max_rounds))
    return slates


def ranking_slate(pctr, list_len, rule=None):
    """
    The pctr-descending top-L slate, skipping items the rule rejects.

    Ties keep the lower candidate index first.
    """
    rule = rule or AlwaysLegal()
    chosen = []
    for index in np.argsort(-np.asarray(pctr, dtype=np.float64), kind="stable"):
        if len(chosen) == list_len:
            break
        if rule.is_legal(chosen, int(index)):
            chosen.append(int(index))
    if len(chosen) < list_len:
        raise GenerationExhaustedError("no legal ranking slate of length {}".format(list_len))
    return tuple(chosen)


def sample_by_pctr(pctr, list_len, rng, rule=None):
    """
    Draws a slate without replacement, each position proportional to the remaining pctr.

    Items with zero pctr are only drawn once every positive one is used or illegal.
    Returns None on a legality dead end.
    """
    rule = rule or AlwaysLegal()
    weights = np.asarray(pctr, dtype=np.float64).copy()
    available = np.ones(len(weights), dtype=bool)
    chosen = []
    while len(chosen) < list_len:
        legal = available & rule.legal_mask(chosen, len(weights))
        if not legal.any():
            return None
        current = np.where(legal, weights, 0.0)
        pick = _draw(current, rng)
        if pick is None:
            pick = _draw(legal.astype(np.float64), rng)
        chosen.append(pick)
        available[pick] = False
    return tuple(chosen)


def heuristic_generate(candidate_set, count, rng, list_len=DEFAULT_LIST_LEN, rule=None):
    """
    The step-1 candidate pool: the ranking slate first, then pctr-proportional draws.

    Args:
        candidate_set (CandidateSet): The request's candidates.
        count (int): Slates requested, at least 1.
        rng (numpy.random.Generator): The sampling stream.
        list_len (int, optional): L.
        rule (LegalityRule, optional): Defaults to always legal.

    Returns:
        List[Tuple[int, ...]]: Up to ``count`` distinct slates.
    """
    if count < 1:
        raise UsageError("count must be >= 1, got {}".format(count))
    if len(candidate_set) < list_len:
        raise UsageError("N={} is smaller than L={}".format(len(candidate_set), list_len))
    pctr = candidate_set.arrays()["pctr"]
    slates = [ranking_slate(pctr, list_len, rule)]
    seen = set(slates)
    for _ in range(count - 1):
        slate = sample_by_pctr(pctr, list_len, rng, rule)
        if slate is not None and slate not in seen:
            seen.add(slate)
            slates.append(slate)
    return slates


def row_entropy(prob):
    """Mean Shannon entropy (nats) of the rows of a row-stochastic matrix."""
    prob = np.asarray(prob, dtype=np.float64)
    logs = np.log(prob, out=np.zeros_like(prob), where=prob > 0.0)
    return float(-(prob * logs).sum(axis=1).mean())

# Standard library imports
import os

# Third party imports
import numpy as np

# Local application imports
from combinatorial_recommender.datamodel import CandidateSet, Item, LoggedSample, Slate, generic_schema

SLOW = bool(os.environ.get("CRREC_SLOW_TESTS"))
SLOW_REASON = "set CRREC_SLOW_TESTS=1 to run the long reproductions"

# Generator output example with L=4, N=6.
EXAMPLE_POLICY = np.array([
    [0.9, 0.1, 0.0, 0.0, 0.0, 0.0],
    [0.05, 0.8, 0.15, 0.0, 0.0, 0.0],
    [0.05, 0.1, 0.7, 0.15, 0.0, 0.0],
    [0.0, 0.0, 0.15, 0.85, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0, 1.0],
])


def tiny_schema():
    return generic_schema(1, 1, 1, 1, vocab_size=5, boundaries=(-0.5, 0.5), embedding_dim=2)


def random_candidate_set(rng, n, schema=None):
    schema = schema or tiny_schema()
    items = []
    for i in range(n):
        items.append(Item(
            i,
            [int(rng.integers(1, spec.vocab_size)) for spec in schema.item_categorical],
            [float(rng.normal()) for _ in schema.item_numeric],
            float(rng.uniform(0.01, 0.99)),
        ))
    return CandidateSet(
        items,
        [int(rng.integers(1, spec.vocab_size)) for spec in schema.user_categorical],
        [float(rng.normal()) for _ in schema.user_numeric],
    )


def random_sample(rng, n, list_len, schema=None, click_rate=0.3):
    candidate_set = random_candidate_set(rng, n, schema)
    positions = [int(i) for i in rng.permutation(n)[:list_len]]
    clicks = (rng.random(list_len) < click_rate).astype(int).tolist()
    return LoggedSample(candidate_set, Slate(positions, [1] * list_len, clicks))


def numeric_gradient(fn, array, eps=1e-6):
    """Central differences of scalar ``fn()`` w.r.t. ``array``, perturbed in place."""
    grad = np.zeros_like(array)
    for index in np.ndindex(*array.shape):
        original = array[index]
        array[index] = original + eps
        plus = fn()
        array[index] = original - eps
        minus = fn()
        array[index] = original
        grad[index] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return 0.0 if scale < 1e-12 else float(np.linalg.norm(analytic - numeric) / scale)

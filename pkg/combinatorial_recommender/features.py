# Standard library imports

# Third party imports
import numpy as np

# Local application imports
from combinatorial_recommender.errors import ConfigurationError
from combinatorial_recommender.micrograd import EmbeddingTable

ITEM = "item"
USER = "user"


def gather_rows(candidate_sets, index_lists):
    """
    Stacks the feature columns of selected items, user context repeated per row.

    Args:
        candidate_sets (Sequence[CandidateSet]): One set per block.
        index_lists (Sequence[Sequence[int]]): Candidate indices to take from each set.

    Returns:
        Dict[str, numpy.ndarray]: Row-aligned ``categorical``, ``numeric``, ``pctr``,
        ``user_categorical`` and ``user_numeric`` arrays.
    """
    blocks = {"categorical": [], "numeric": [], "pctr": [], "user_categorical": [], "user_numeric": []}
    for candidate_set, indices in zip(candidate_sets, index_lists):
        arrays = candidate_set.arrays()
        indices = np.asarray(indices, dtype=np.int64)
        rows = len(indices)
        blocks["categorical"].append(arrays["categorical"][indices])
        blocks["numeric"].append(arrays["numeric"][indices])
        blocks["pctr"].append(arrays["pctr"][indices])
        blocks["user_categorical"].append(np.tile(arrays["user_categorical"], (rows, 1)))
        blocks["user_numeric"].append(np.tile(arrays["user_numeric"], (rows, 1)))
    return {key: np.concatenate(value, axis=0) for key, value in blocks.items()}


class FeatureEncoder(object):
    """
    Turns item rows into dense input vectors with one shared embedding table per feature.

    Each row is the concatenation of the item's categorical and bucketized numeric
    embeddings, its raw numeric values, its pctr, and the same blocks for the user.

    Args:
        schema (FeatureSchema): The feature schema.
        tables (Dict[str, EmbeddingTable]): Tables keyed ``item.<name>`` / ``user.<name>``.
    """
    def __init__(self, schema, tables):
        self.schema = schema
        self.tables = tables
        for scope, spec in self._specs():
            table = tables.get(self._key(scope, spec))
            if table is None or table.vocab_size != spec.vocab or table.dim != spec.embedding_dim:
                raise ConfigurationError("embedding table for {} does not match the schema".format(spec.name))

    @classmethod
    def build(cls, schema, rng):
        tables = {}
        for scope, spec in cls._specs_of(schema):
            tables[cls._key(scope, spec)] = EmbeddingTable.init(spec.vocab, spec.embedding_dim, rng)
        return cls(schema, tables)

    @staticmethod
    def _key(scope, spec):
        return "{}.{}".format(scope, spec.name)

    @staticmethod
    def _specs_of(schema):
        return [(ITEM, spec) for spec in schema.item_features] + [(USER, spec) for spec in schema.user_features]

    def _specs(self):
        return self._specs_of(self.schema)

    @property
    def width(self):
        raw = sum(1 for spec in self.schema.item_numeric + self.schema.user_numeric if spec.use_raw)
        return sum(spec.embedding_dim for _, spec in self._specs()) + raw + 1

    def parameters(self):
        return {"emb." + key: table.values for key, table in self.tables.items()}

    def _columns(self, rows, scope):
        categorical = rows["categorical" if scope == ITEM else "user_categorical"]
        numeric = rows["numeric" if scope == ITEM else "user_numeric"]
        specs_cat = self.schema.item_categorical if scope == ITEM else self.schema.user_categorical
        specs_num = self.schema.item_numeric if scope == ITEM else self.schema.user_numeric
        if categorical.shape[1] != len(specs_cat) or numeric.shape[1] != len(specs_num):
            raise ConfigurationError("{} features do not match the schema".format(scope))
        return categorical, numeric, specs_cat, specs_num

    def encode(self, rows):
        """
        Args:
            rows (Dict[str, numpy.ndarray]): Output of ``gather_rows``.

        Returns:
            Tuple[numpy.ndarray, list]: rows x width inputs and the lookup cache for ``backward``.
        """
        blocks, cache = [], []
        column = 0

        def embed(key, indices):
            nonlocal column
            values = self.tables[key].lookup(indices)
            cache.append((key, indices, slice(column, column + values.shape[1])))
            column += values.shape[1]
            blocks.append(values)

        for scope in (ITEM, USER):
            categorical, numeric, specs_cat, specs_num = self._columns(rows, scope)
            for j, spec in enumerate(specs_cat):
                embed(self._key(scope, spec), categorical[:, j])
            for j, spec in enumerate(specs_num):
                buckets = np.searchsorted(np.asarray(spec.boundaries, dtype=np.float64), numeric[:, j], side="left")
                embed(self._key(scope, spec), buckets)
            raw = [j for j, spec in enumerate(specs_num) if spec.use_raw]
            if raw:
                blocks.append(numeric[:, raw])
                column += len(raw)
            if scope == ITEM:
                blocks.append(rows["pctr"][:, None])
                column += 1
        return np.concatenate(blocks, axis=1), cache

    def backward(self, cache, upstream):
        """
        Args:
            cache (list): From ``encode``.
            upstream (numpy.ndarray): Gradient w.r.t. the encoded rows.

        Returns:
            Dict[str, numpy.ndarray]: Gradients named like ``parameters()``.
        """
        grads = {"emb." + key: np.zeros_like(table.values) for key, table in self.tables.items()}
        for key, indices, columns in cache:
            grads["emb." + key] += self.tables[key].gradient(indices, upstream[:, columns])
        return grads

# Standard library imports
import json
import logging

# Third party imports
import numpy as np
import pandas as pd

# Local application imports
from combinatorial_recommender import api
from combinatorial_recommender.errors import DataError, UsageError

logger = logging.getLogger(__name__)

CATEGORICAL = "categorical"
NUMERIC = "numeric"
FEATURE_KINDS = (CATEGORICAL, NUMERIC)
OOV_INDEX = 0

COLUMN_SUM_TOLERANCE = 1e-6


class record_t(object):
    """
    Defines the requirements of a record.

    This class implements the ``__iter__`` method for easy
    conversion to a dict. Attributes starting with an underscore are caches
    and are not part of the record.
    """
    def __iter__(self):
        for field, value in self.__dict__.items():
            if field.startswith("_"):
                continue
            if isinstance(value, (list, tuple)):
                yield field, [dict(i) if isinstance(i, record_t) else i for i in value]
            elif isinstance(value, record_t):
                yield field, dict(value)
            elif isinstance(value, np.ndarray):
                yield field, value.tolist()
            else:
                yield field, value

    def __str__(self):
        return str(dict(self))


class FeatureSpec(record_t):
    """
    Describes one input feature.

    Args:
        name (str): Unique feature name.
        kind (str): ``categorical`` or ``numeric``.
        embedding_dim (int): Width of the feature's embedding.
        vocab_size (int, optional): Categorical vocabulary size, index 0 reserved for out-of-vocab.
        boundaries (Sequence[float], optional): Strictly increasing numeric bucket boundaries.
        use_raw (bool, optional): Feed the raw numeric value next to its bucket embedding.
    """
    def __init__(self, name, kind, embedding_dim, vocab_size=None, boundaries=(), use_raw=True, **kwargs):
        super(FeatureSpec, self).__init__()
        if kind not in FEATURE_KINDS:
            raise DataError("feature {!r}: unknown kind {!r}".format(name, kind))
        if int(embedding_dim) < 1:
            raise DataError("feature {!r}: embedding_dim must be >= 1".format(name))
        self.name = str(name)
        self.kind = kind
        self.embedding_dim = int(embedding_dim)
        if kind == CATEGORICAL:
            if vocab_size is None or int(vocab_size) < 1:
                raise DataError("feature {!r}: vocab_size must be >= 1".format(name))
            self.vocab_size = int(vocab_size)
            self.boundaries = ()
            self.use_raw = False
        else:
            boundaries = tuple(float(b) for b in boundaries)
            if not all(np.isfinite(boundaries)):
                raise DataError("feature {!r}: non-finite bucket boundary".format(name))
            if any(later <= earlier for earlier, later in zip(boundaries, boundaries[1:])):
                raise DataError("feature {!r}: bucket boundaries must be strictly increasing".format(name))
            self.vocab_size = None
            self.boundaries = boundaries
            self.use_raw = bool(use_raw)

    @property
    def vocab(self):
        """Rows of the feature's embedding table."""
        return self.vocab_size if self.kind == CATEGORICAL else len(self.boundaries) + 1


class FeatureSchema(record_t):
    """
    Item and user feature descriptors.

    Args:
        item_features (Sequence[FeatureSpec]): Per-item features.
        user_features (Sequence[FeatureSpec]): User context features.
        version (int, optional): Schema format version.
    """
    def __init__(self, item_features, user_features=(), version=api.SCHEMA_VERSION, **kwargs):
        super(FeatureSchema, self).__init__()
        if version != api.SCHEMA_VERSION:
            raise DataError("unsupported schema version {!r}".format(version))
        self.version = version
        self.item_features = tuple(f if isinstance(f, FeatureSpec) else FeatureSpec(**f) for f in item_features)
        self.user_features = tuple(f if isinstance(f, FeatureSpec) else FeatureSpec(**f) for f in user_features)
        names = [f.name for f in self.item_features + self.user_features]
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")

    def _of(self, features, kind):
        return tuple(f for f in features if f.kind == kind)

    @property
    def item_categorical(self):
        return self._of(self.item_features, CATEGORICAL)

    @property
    def item_numeric(self):
        return self._of(self.item_features, NUMERIC)

    @property
    def user_categorical(self):
        return self._of(self.user_features, CATEGORICAL)

    @property
    def user_numeric(self):
        return self._of(self.user_features, NUMERIC)

    def __eq__(self, other):
        return isinstance(other, FeatureSchema) and dict(self) == dict(other)

    def __ne__(self, other):
        return not self == other


def generic_schema(n_item_categorical, n_item_numeric, n_user_categorical=0, n_user_numeric=0,
                   vocab_size=100, boundaries=(-1.0, -0.5, 0.0, 0.5, 1.0), embedding_dim=4):
    """
    Builds a schema of anonymous features ``item_cat_00``, ``item_num_00``, ...

    Returns:
        FeatureSchema: The schema.
    """
    def block(prefix, count, kind):
        return [FeatureSpec("{}_{:02d}".format(prefix, i), kind, embedding_dim,
                            vocab_size=vocab_size if kind == CATEGORICAL else None,
                            boundaries=boundaries if kind == NUMERIC else ())
                for i in range(count)]

    return FeatureSchema(
        block("item_cat", n_item_categorical, CATEGORICAL) + block("item_num", n_item_numeric, NUMERIC),
        block("user_cat", n_user_categorical, CATEGORICAL) + block("user_num", n_user_numeric, NUMERIC),
    )


def load_schema(path):
    """
    Reads a schema file.

    Args:
        path (str): JSON schema file with a mandatory ``version``.

    Returns:
        FeatureSchema: The schema.
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except (OSError, ValueError) as exc:
        raise DataError("cannot read schema {}: {}".format(path, exc))
    if not isinstance(raw, dict) or "version" not in raw:
        raise DataError("schema {} has no version field".format(path))
    return FeatureSchema(**raw)


def dump_schema(schema, path):
    try:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(dict(schema), handle, indent=2, sort_keys=True)
            handle.write("\n")
    except OSError as exc:
        raise DataError("cannot write schema {}: {}".format(path, exc))


class Item(record_t):
    """
    One candidate item.

    Args:
        item_id (Union[int, str]): The identifier.
        categorical (Sequence[int]): Indices, one per categorical item feature.
        numeric (Sequence[float]): Values, one per numeric item feature.
        pctr (float): Point-wise predicted CTR in [0, 1].
    """
    def __init__(self, item_id, categorical, numeric, pctr, **kwargs):
        super(Item, self).__init__()
        self.item_id = item_id
        self.categorical = tuple(int(i) for i in categorical)
        self.numeric = tuple(float(v) for v in numeric)
        self.pctr = float(pctr)
        if not (np.isfinite(self.pctr) and 0.0 <= self.pctr <= 1.0):
            raise DataError("item {!r}: pctr {} outside [0, 1]".format(item_id, pctr))


class CandidateSet(record_t):
    """
    The N items of one request plus the user context.

    The set is permutation-invariant: the item order carries no meaning.

    Args:
        items (Sequence[Item]): The candidates.
        user_categorical (Sequence[int], optional): User categorical indices.
        user_numeric (Sequence[float], optional): User numeric values.
    """
    def __init__(self, items, user_categorical=(), user_numeric=(), **kwargs):
        super(CandidateSet, self).__init__()
        self.items = tuple(i if isinstance(i, Item) else Item(**i) for i in items)
        self.user_categorical = tuple(int(i) for i in user_categorical)
        self.user_numeric = tuple(float(v) for v in user_numeric)
        ids = [item.item_id for item in self.items]
        if len(set(ids)) != len(ids):
            raise DataError("candidate item ids are not distinct")
        self._arrays = None

    def __len__(self):
        return len(self.items)

    def arrays(self):
        """
        Column arrays of the set, computed once.

        Returns:
            Dict[str, numpy.ndarray]: ``categorical`` (N x c), ``numeric`` (N x n), ``pctr`` (N,),
            ``user_categorical`` and ``user_numeric``.
        """
        if self._arrays is None:
            n = len(self.items)
            n_cat = len(self.items[0].categorical) if n else 0
            n_num = len(self.items[0].numeric) if n else 0
            self._arrays = {
                "categorical": np.array([item.categorical for item in self.items], dtype=np.int64).reshape(n, n_cat),
                "numeric": np.array([item.numeric for item in self.items], dtype=np.float64).reshape(n, n_num),
                "pctr": np.array([item.pctr for item in self.items], dtype=np.float64),
                "user_categorical": np.array(self.user_categorical, dtype=np.int64),
                "user_numeric": np.array(self.user_numeric, dtype=np.float64),
            }
        return self._arrays

    def permuted(self, order):
        """Returns the same set with items listed in ``order``."""
        return CandidateSet([self.items[i] for i in order], self.user_categorical, self.user_numeric)


def slate_positions(slate):
    """Index tuple of a ``Slate`` or of any index sequence."""
    return tuple(int(i) for i in getattr(slate, "positions", slate))


def check_positions(positions, n, list_len=None):
    """
    Validates a slate's index tuple against a candidate count.

    Raises:
        UsageError: On a wrong length, duplicates or out-of-range indices.
    """
    positions = slate_positions(positions)
    if list_len is not None and len(positions) != list_len:
        raise UsageError("slate has {} positions, expected {}".format(len(positions), list_len))
    if len(set(positions)) != len(positions):
        raise UsageError("slate indices are not distinct: {}".format(positions))
    if any(i < 0 or i >= n for i in positions):
        raise UsageError("slate index out of range [0, {}): {}".format(n, positions))
    return positions


class Slate(record_t):
    """
    An ordered list of candidate indices with per-position labels.

    Args:
        positions (Sequence[int]): 0-based indices into the candidate set.
        exposure (Sequence[int], optional): 1 if shown. Defaults to all ones.
        click (Sequence[int], optional): 1 if clicked. Defaults to all zeros.
    """
    def __init__(self, positions, exposure=None, click=None, **kwargs):
        super(Slate, self).__init__()
        self.positions = tuple(int(i) for i in positions)
        length = len(self.positions)
        self.exposure = tuple(int(v) for v in (exposure if exposure is not None else (1,) * length))
        self.click = tuple(int(v) for v in (click if click is not None else (0,) * length))
        if len(set(self.positions)) != length:
            raise DataError("slate indices are not distinct: {}".format(self.positions))
        if len(self.exposure) != length or len(self.click) != length:
            raise DataError("slate labels do not match its length {}".format(length))
        if any(v not in (0, 1) for v in self.exposure + self.click):
            raise DataError("slate labels must be 0 or 1")
        if any(c > e for c, e in zip(self.click, self.exposure)):
            raise DataError("clicked but not exposed item in slate {}".format(self.positions))

    def __len__(self):
        return len(self.positions)


class LoggedSample(record_t):
    """
    One decision-log record.

    Args:
        candidate_set (CandidateSet): The request's candidates.
        selected (Slate): The exposed slate with its labels.
        rerank_index (Sequence[int], optional): Per-item slate position, -1 when absent.
            Derived from ``selected`` when omitted.
    """
    def __init__(self, candidate_set, selected, rerank_index=None, **kwargs):
        super(LoggedSample, self).__init__()
        n = len(candidate_set)
        check_positions(selected.positions, n)
        expected = [api.NOT_SELECTED] * n
        for position, index in enumerate(selected.positions):
            expected[index] = position
        if rerank_index is not None and list(rerank_index) != expected:
            raise DataError("rerank_index is inconsistent with the selected slate")
        self.candidate_set = candidate_set
        self.selected = selected
        self.rerank_index = tuple(expected)

    @property
    def list_len(self):
        return len(self.selected)


class PolicyMatrix(record_t):
    """
    The (L+1) x N generation policy; column j is item j's distribution over
    positions 1..L and "not in".

    Args:
        entries (array_like): The matrix.
    """
    def __init__(self, entries, **kwargs):
        super(PolicyMatrix, self).__init__()
        entries = np.array(entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] < 2:
            raise DataError("policy matrix must be (L+1) x N, got shape {}".format(entries.shape))
        if not np.all(np.isfinite(entries)) or entries.min() < 0.0 or entries.max() > 1.0:
            raise DataError("policy matrix entries must lie in [0, 1]")
        if np.any(np.abs(entries.sum(axis=0) - 1.0) > COLUMN_SUM_TOLERANCE):
            raise DataError("policy matrix columns must sum to 1")
        self.entries = entries

    @property
    def list_len(self):
        return self.entries.shape[0] - 1

    @property
    def n(self):
        return self.entries.shape[1]


def rank_label(ids, n, list_len):
    """
    Converts an ordered id list to per-item rank labels.

    ``Rank(x) = j`` when ``x == ids[j-1]`` and ``L+1`` otherwise (1-based ranks).

    Args:
        ids (Sequence[int]): L distinct 0-based candidate indices.
        n (int): Candidate count.
        list_len (int): L.

    Returns:
        numpy.ndarray: N integer ranks in 1..L+1.
    """
    ids = [int(i) for i in ids]
    if len(ids) != list_len:
        raise DataError("expected {} ids, got {}".format(list_len, len(ids)))
    if len(set(ids)) != len(ids):
        raise DataError("duplicate id in {}".format(ids))
    if any(i < 0 or i >= n for i in ids):
        raise DataError("id out of range [0, {}) in {}".format(n, ids))
    ranks = np.full(n, list_len + 1, dtype=np.int64)
    for position, index in enumerate(ids):
        ranks[index] = position + 1
    return ranks


def bucketize(value, boundaries):
    """
    Number of boundaries strictly below ``value``.

    Args:
        value (float): The raw value.
        boundaries (Sequence[float]): Strictly increasing boundaries.

    Returns:
        int: Bucket index in [0, len(boundaries)].
    """
    if not np.isfinite(value):
        raise DataError("cannot bucketize non-finite value {}".format(value))
    return int(np.searchsorted(np.asarray(boundaries, dtype=np.float64), value, side="left"))


def _as_int(value, what):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise DataError("{} must be an integer, got {!r}".format(what, value))
    return int(value)


def _as_float(value, what):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise DataError("{} must be a number, got {!r}".format(what, value))
    if not np.isfinite(value):
        raise DataError("{} is not finite".format(what))
    return value


def _categoricals(values, specs, owner, strict_vocab, counters):
    if not isinstance(values, list) or len(values) != len(specs):
        raise DataError("{}: expected {} categorical values".format(owner, len(specs)))
    indices = []
    for value, spec in zip(values, specs):
        index = _as_int(value, "{} {}".format(owner, spec.name))
        if index < 0:
            raise DataError("{} {}: negative index {}".format(owner, spec.name, index))
        if index >= spec.vocab_size:
            if strict_vocab:
                raise DataError("{} {}: index {} out of vocab {}".format(owner, spec.name, index, spec.vocab_size))
            counters["oov"] = counters.get("oov", 0) + 1
            index = OOV_INDEX
        indices.append(index)
    return indices


def _numerics(values, specs, owner):
    if not isinstance(values, list) or len(values) != len(specs):
        raise DataError("{}: expected {} numeric values".format(owner, len(specs)))
    return [_as_float(value, "{} {}".format(owner, spec.name)) for value, spec in zip(values, specs)]


def parse_sample(raw, schema, strict_vocab=False, list_len=None, counters=None):
    """
    Validates one decoded sample-file record.

    Args:
        raw (dict): The decoded JSON object.
        schema (FeatureSchema): The feature schema.
        strict_vocab (bool, optional): Reject out-of-vocab indices instead of mapping them to 0.
        list_len (int, optional): Required slate length.
        counters (dict, optional): Receives an ``oov`` count.

    Returns:
        LoggedSample: The sample.
    """
    counters = counters if counters is not None else {}
    if not isinstance(raw, dict) or api.KEY_CANDIDATES not in raw:
        raise DataError("record has no {!r} array".format(api.KEY_CANDIDATES))
    user = raw.get(api.KEY_USER, {}) or {}
    user_categorical = _categoricals(user.get(api.KEY_CATEGORICAL, []), schema.user_categorical,
                                     "user", strict_vocab, counters)
    user_numeric = _numerics(user.get(api.KEY_NUMERIC, []), schema.user_numeric, "user")

    items, clicks, exposures, ranks = [], [], [], []
    for position, candidate in enumerate(raw[api.KEY_CANDIDATES]):
        owner = "candidate {}".format(position)
        if not isinstance(candidate, dict):
            raise DataError("{} is not an object".format(owner))
        items.append(Item(
            candidate.get(api.KEY_ITEM_ID, position),
            _categoricals(candidate.get(api.KEY_CATEGORICAL, []), schema.item_categorical,
                          owner, strict_vocab, counters),
            _numerics(candidate.get(api.KEY_NUMERIC, []), schema.item_numeric, owner),
            _as_float(candidate.get(api.KEY_PCTR, 0.0), owner + " pctr"),
        ))
        rank = _as_int(candidate.get(api.KEY_RERANK_INDEX, api.NOT_SELECTED), owner + " rerank_index")
        click = _as_int(candidate.get(api.KEY_CLICK, 0), owner + " click")
        exposure = _as_int(candidate.get(api.KEY_EXPOSURE, 1 if rank >= 0 else 0), owner + " exposure")
        if click not in (0, 1) or exposure not in (0, 1):
            raise DataError("{}: labels must be 0 or 1".format(owner))
        if rank < api.NOT_SELECTED:
            raise DataError("{}: invalid rerank_index {}".format(owner, rank))
        if rank == api.NOT_SELECTED and (click or exposure):
            raise DataError("{}: clicked or exposed but not selected".format(owner))
        if click > exposure:
            raise DataError("{}: clicked but not exposed".format(owner))
        ranks.append(rank)
        clicks.append(click)
        exposures.append(exposure)

    selected = sorted((rank, index) for index, rank in enumerate(ranks) if rank >= 0)
    if [rank for rank, _ in selected] != list(range(len(selected))):
        raise DataError("rerank_index values must be 0..L-1 without gaps, got {}".format(
            [rank for rank, _ in selected]))
    if list_len is not None and len(selected) != list_len:
        raise DataError("expected {} selected items, got {}".format(list_len, len(selected)))
    if not selected:
        raise DataError("record has no selected items")
    candidate_set = CandidateSet(items, user_categorical, user_numeric)
    if len(candidate_set) < len(selected):
        raise DataError("fewer candidates than selected items")
    order = [index for _, index in selected]
    slate = Slate(order, [exposures[i] for i in order], [clicks[i] for i in order])
    return LoggedSample(candidate_set, slate, ranks)


def load_samples(path, schema, skip_malformed=False, strict_vocab=False, list_len=None, errors=None):
    """
    Streams the samples of a line-delimited JSON file.

    Args:
        path (str): The sample file.
        schema (FeatureSchema): The feature schema.
        skip_malformed (bool, optional): Log and skip bad records instead of raising.
        strict_vocab (bool, optional): Reject out-of-vocab categorical indices.
        list_len (int, optional): Required slate length.
        errors (list, optional): Receives ``(line_number, message)`` for each skipped record.

    Yields:
        LoggedSample: The validated samples, in file order.
    """
    counters = {}
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError("cannot open sample file {}: {}".format(path, exc))
    with handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                try:
                    raw = json.loads(line)
                except ValueError as exc:
                    raise DataError("invalid JSON: {}".format(exc))
                sample = parse_sample(raw, schema, strict_vocab, list_len, counters)
            except DataError as exc:
                if not skip_malformed:
                    raise DataError(str(exc), line_number)
                logger.warning("Skipping malformed record at line {}: {}".format(line_number, exc))
                if errors is not None:
                    errors.append((line_number, str(exc)))
                continue
            yield sample
    if counters.get("oov"):
        logger.warning("Mapped {} out-of-vocab indices in {} to {}".format(counters["oov"], path, OOV_INDEX))


def sample_to_dict(sample):
    """Sample-file JSON object of a ``LoggedSample``."""
    candidate_set = sample.candidate_set
    labels = {index: position for position, index in enumerate(sample.selected.positions)}
    candidates = []
    for index, item in enumerate(candidate_set.items):
        position = labels.get(index)
        candidates.append({
            api.KEY_ITEM_ID: item.item_id,
            api.KEY_CATEGORICAL: list(item.categorical),
            api.KEY_NUMERIC: list(item.numeric),
            api.KEY_PCTR: item.pctr,
            api.KEY_CLICK: sample.selected.click[position] if position is not None else 0,
            api.KEY_EXPOSURE: sample.selected.exposure[position] if position is not None else 0,
            api.KEY_RERANK_INDEX: position if position is not None else api.NOT_SELECTED,
        })
    return {
        api.KEY_USER: {
            api.KEY_CATEGORICAL: list(candidate_set.user_categorical),
            api.KEY_NUMERIC: list(candidate_set.user_numeric),
        },
        api.KEY_CANDIDATES: candidates,
    }


def write_samples(path, samples):
    """
    Writes samples as line-delimited JSON, in order.

    Returns:
        int: Number of records written.
    """
    count = 0
    try:
        with open(path, "w", encoding="utf-8") as handle:
            for sample in samples:
                handle.write(json.dumps(sample_to_dict(sample), separators=(",", ":")))
                handle.write("\n")
                count += 1
    except OSError as exc:
        raise DataError("cannot write samples to {}: {}".format(path, exc))
    return count


def _plain(value):
    return value.item() if isinstance(value, np.generic) else value


def convert_jdrec(table_path, schema, out_path, absent_value=api.NOT_SELECTED, rerank_base=0,
                  list_len=None, strict_vocab=False):
    """
    Converts a JDRec item-row table into a sample file.

    The table has one row per candidate with the columns ``sample_id``,
    ``item_id``, ``click``, ``rerank_index``, ``pctr`` and one column per
    schema feature; user features are repeated on every row of a sample.

    Args:
        table_path (str): CSV table.
        schema (FeatureSchema): The feature schema.
        out_path (str): Sample file to write.
        absent_value (int, optional): ``rerank_index`` of unselected items in the table.
        rerank_base (int, optional): Index of the first slate position in the table.
        list_len (int, optional): Required slate length.
        strict_vocab (bool, optional): Reject out-of-vocab indices.

    Returns:
        int: Number of samples written.
    """
    try:
        table = pd.read_csv(table_path)
    except (OSError, ValueError) as exc:
        raise DataError("cannot read table {}: {}".format(table_path, exc))
    required = [api.COL_SAMPLE_ID, api.KEY_ITEM_ID, api.KEY_CLICK, api.KEY_RERANK_INDEX, api.KEY_PCTR]
    required += [f.name for f in schema.item_features + schema.user_features]
    missing = [column for column in required if column not in table.columns]
    if missing:
        raise DataError("table {} lacks columns {}".format(table_path, missing))

    item_cat = [f.name for f in schema.item_categorical]
    item_num = [f.name for f in schema.item_numeric]
    user_cat = [f.name for f in schema.user_categorical]
    user_num = [f.name for f in schema.user_numeric]

    def samples():
        counters = {}
        for sample_id, group in table.groupby(api.COL_SAMPLE_ID, sort=False):
            first = group.iloc[0]
            candidates = []
            for row in group.itertuples(index=False):
                row = row._asdict()
                rank = int(row[api.KEY_RERANK_INDEX])
                candidates.append({
                    api.KEY_ITEM_ID: _plain(row[api.KEY_ITEM_ID]),
                    api.KEY_CATEGORICAL: [int(row[name]) for name in item_cat],
                    api.KEY_NUMERIC: [float(row[name]) for name in item_num],
                    api.KEY_PCTR: float(row[api.KEY_PCTR]),
                    api.KEY_CLICK: int(row[api.KEY_CLICK]),
                    api.KEY_RERANK_INDEX: api.NOT_SELECTED if rank == absent_value else rank - rerank_base,
                })
            raw = {
                api.KEY_USER: {
                    api.KEY_CATEGORICAL: [int(first[name]) for name in user_cat],
                    api.KEY_NUMERIC: [float(first[name]) for name in user_num],
                },
                api.KEY_CANDIDATES: candidates,
            }
            try:
                yield parse_sample(raw, schema, strict_vocab, list_len, counters)
            except DataError as exc:
                raise DataError("sample {}: {}".format(sample_id, exc))

    count = write_samples(out_path, samples())
    logger.info("Converted {} samples from {} to {}".format(count, table_path, out_path))
    return count

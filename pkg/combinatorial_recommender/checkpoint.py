# Standard library imports
import dataclasses
import logging

# Third party imports
import msgpack
import numpy as np

# Local application imports
from combinatorial_recommender import api
from combinatorial_recommender.datamodel import FeatureSchema
from combinatorial_recommender.errors import ConfigurationError, DataError
from combinatorial_recommender.evaluator import EvaluatorModel, PointwiseModel
from combinatorial_recommender.features import FeatureEncoder
from combinatorial_recommender.generator import GeneratorModel
from combinatorial_recommender.micrograd import AdaGradState, DenseLayer, EmbeddingTable

logger = logging.getLogger(__name__)

STACKS = {
    api.TARGET_EVALUATOR: ("point", "head"),
    api.TARGET_POINTWISE: ("point", "head"),
    api.TARGET_GENERATOR: ("point", "classifier"),
}


def serialize(payload):
    """
    Serializes a checkpoint payload using msgpack.

    Args:
        payload (dict): Plain data, arrays already converted by ``pack_array``.

    Returns:
        bytes: A string of bytes.
    """
    return msgpack.packb(payload, use_bin_type=True)


def deserialize(sbuf):
    """
    Deserialize a checkpoint using msgpack.Unpacker.

    Args:
        sbuf (bytes): The file contents.

    Returns:
        dict: The payload, or None when the buffer is empty.
    """
    unpacker = msgpack.Unpacker(raw=False)
    unpacker.feed(sbuf)

    msgs = [unpacked for unpacked in unpacker]
    return msgs[0] if len(msgs) else None


def pack_array(value):
    value = np.ascontiguousarray(value, dtype="<f8")
    return {"shape": list(value.shape), "dtype": "<f8", "data": value.tobytes()}


def unpack_array(packed):
    if packed.get("dtype") != "<f8":
        raise DataError("unsupported array dtype {!r}".format(packed.get("dtype")))
    return np.frombuffer(packed["data"], dtype="<f8").reshape(packed["shape"]).astype(np.float64)


def _stack(model, name):
    return getattr(model, "{}_layers".format(name))


def model_to_payload(model, config=None):
    """
    Args:
        model (Union[EvaluatorModel, PointwiseModel, GeneratorModel]): The model.
        config (dataclass, optional): Hyperparameters stored for reference.

    Returns:
        dict: The msgpack-ready checkpoint.
    """
    payload = {
        "format": api.CHECKPOINT_FORMAT,
        "version": api.CHECKPOINT_VERSION,
        "kind": model.kind,
        "list_len": getattr(model, "list_len", None),
        "schema": dict(model.schema),
        "config": dataclasses.asdict(config) if config is not None else None,
        "activations": {name: [layer.activation for layer in _stack(model, name)] for name in STACKS[model.kind]},
        "parameters": {name: pack_array(value) for name, value in sorted(model.parameters().items())},
        "optimizer": None,
    }
    if model.optimizer is not None:
        payload["optimizer"] = {
            "learning_rate": model.optimizer.learning_rate,
            "epsilon": model.optimizer.epsilon,
            "steps": model.optimizer.steps,
            "accumulators": {name: pack_array(value) for name, value in sorted(model.optimizer.accumulators.items())},
        }
    return payload


def _layers(parameters, prefix, activations):
    return [DenseLayer(parameters["{}.{}.w".format(prefix, i)], parameters["{}.{}.b".format(prefix, i)], activation)
            for i, activation in enumerate(activations)]


def model_from_payload(payload):
    if not isinstance(payload, dict) or payload.get("format") != api.CHECKPOINT_FORMAT:
        raise DataError("not a checkpoint")
    if payload.get("version") != api.CHECKPOINT_VERSION:
        raise DataError("unsupported checkpoint version {!r}".format(payload.get("version")))
    kind = payload.get("kind")
    if kind not in STACKS:
        raise DataError("unknown model kind {!r}".format(kind))
    try:
        schema = FeatureSchema(**payload["schema"])
        parameters = {name: unpack_array(packed) for name, packed in payload["parameters"].items()}
        tables = {name[len("emb."):]: EmbeddingTable(value) for name, value in parameters.items()
                  if name.startswith("emb.")}
        encoder = FeatureEncoder(schema, tables)
        first, second = (_layers(parameters, name, payload["activations"][name]) for name in STACKS[kind])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError("corrupt checkpoint: {}".format(exc))
    if kind == api.TARGET_EVALUATOR:
        model = EvaluatorModel(encoder, first, second, payload["list_len"])
    elif kind == api.TARGET_GENERATOR:
        model = GeneratorModel(encoder, first, second, payload["list_len"])
    else:
        model = PointwiseModel(encoder, first, second)
    if set(model.parameters()) != set(parameters):
        raise DataError("checkpoint parameters do not match a {} model".format(kind))
    optimizer = payload.get("optimizer")
    if optimizer:
        try:
            accumulators = {name: unpack_array(packed) for name, packed in optimizer["accumulators"].items()}
            state = AdaGradState(accumulators, float(optimizer["learning_rate"]), float(optimizer["epsilon"]))
            state.steps = int(optimizer["steps"])
        except (AttributeError, ConfigurationError, KeyError, TypeError, ValueError) as exc:
            raise DataError("corrupt optimizer state: {}".format(exc))
        if set(accumulators) != set(parameters):
            raise DataError("optimizer state does not match the {} parameters".format(kind))
        model.optimizer = state
    return model


def save_checkpoint(path, model, config=None):
    payload = serialize(model_to_payload(model, config))
    try:
        with open(path, "wb") as handle:
            handle.write(payload)
    except OSError as exc:
        raise DataError("cannot write checkpoint {}: {}".format(path, exc))
    logger.info("Saved {} checkpoint to {}".format(model.kind, path))


def load_checkpoint(path, kind=None):
    """
    Args:
        path (str): Checkpoint file.
        kind (str, optional): Expected model kind.

    Returns:
        Union[EvaluatorModel, PointwiseModel, GeneratorModel]: The model.
    """
    try:
        with open(path, "rb") as handle:
            payload = deserialize(handle.read())
    except OSError as exc:
        raise DataError("cannot read checkpoint {}: {}".format(path, exc))
    except (msgpack.exceptions.ExtraData, msgpack.exceptions.UnpackException, ValueError) as exc:
        raise DataError("corrupt checkpoint {}: {}".format(path, exc))
    model = model_from_payload(payload)
    if kind is not None and model.kind != kind:
        raise DataError("{} holds a {} model, expected {}".format(path, model.kind, kind))
    return model

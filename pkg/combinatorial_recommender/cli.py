"""
Command-line entry point.

Every flag can also come from an environment variable ``CRREC_<FLAG>`` or a
JSON ``--config`` file; an explicit flag wins over the environment, which
wins over the file.
"""
# Standard library imports
import argparse
import dataclasses
import json
import logging
import os
from typing import Optional, Tuple

# Third party imports
import pandas as pd

# Local application imports
from combinatorial_recommender import api
from combinatorial_recommender.checkpoint import load_checkpoint, save_checkpoint
from combinatorial_recommender.config import (
    DEFAULT_HEURISTIC_COUNT,
    DEFAULT_LAMBDA,
    DEFAULT_LEARNING_RATE,
    DEFAULT_LIST_LEN,
    DEFAULT_MAX_ROUNDS,
    DEFAULT_RAMP_DAY,
    DEFAULT_REQUESTS_PER_DAY,
    DEFAULT_TEMPERATURE,
    ENV_PREFIX,
    BootstrapConfig,
    EvaluatorConfig,
    GeneratorConfig,
    WorldConfig,
)
from combinatorial_recommender.datamodel import convert_jdrec, dump_schema, load_samples, load_schema, write_samples
from combinatorial_recommender.errors import (
    EXIT_OK,
    EXIT_WARNING,
    ConfigurationError,
    DataError,
    RecommenderError,
    UsageError,
)
from combinatorial_recommender.evaluator import train_evaluator, train_pointwise
from combinatorial_recommender.experiments import compare_evaluator_pointwise, compare_generator_modes
from combinatorial_recommender.simulator import gen_world, generate_log, run_step1, run_step2
from combinatorial_recommender.training import train_generator

logger = logging.getLogger(__name__)

SCHEMA_FILE = "schema.json"
SAMPLES_FILE = "samples.jsonl"
WORLD_FILE = "world.json"
DAY_METRICS_FILE = "day_metrics.csv"


@dataclasses.dataclass
class RunConfig:
    seed: Optional[int] = None
    schema: Optional[str] = None
    data: Optional[str] = None
    out: str = "."
    epochs: int = 10
    lr: float = DEFAULT_LEARNING_RATE
    lambda_rank: float = DEFAULT_LAMBDA
    temperature: float = DEFAULT_TEMPERATURE
    k: Optional[int] = None
    list_len: int = DEFAULT_LIST_LEN
    days: int = 30
    step: int = 2
    mode: str = api.MODE_CTR
    ramp_day: int = DEFAULT_RAMP_DAY
    users: int = 1000
    requests: int = DEFAULT_REQUESTS_PER_DAY
    evaluator: Optional[str] = None
    seeds: Tuple[int, ...] = (1, 2, 3, 4, 5)
    log_level: str = "INFO"

    def __post_init__(self):
        if self.seed is not None and int(self.seed) < 0:
            raise ConfigurationError("--seed must be >= 0")
        if self.epochs < 0 or self.days < 0 or self.users < 0:
            raise ConfigurationError("--epochs, --days and --users must be >= 0")
        if self.requests < 1 or (self.k is not None and self.k < 1) or self.list_len < 1 or self.ramp_day < 1:
            raise ConfigurationError("--requests, --k, --list-len and --ramp-day must be >= 1")
        if self.step not in (1, 2):
            raise ConfigurationError("--step must be 1 or 2, got {}".format(self.step))
        if self.mode not in (api.MODE_NAIVE, api.MODE_CTR):
            raise ConfigurationError("--mode must be naive or ctr, got {!r}".format(self.mode))
        self.seeds = tuple(int(seed) for seed in self.seeds)

    def require_seed(self):
        if self.seed is None:
            raise ConfigurationError("--seed is mandatory (or set {}SEED)".format(ENV_PREFIX))
        return int(self.seed)

    def require(self, name):
        value = getattr(self, name)
        if value is None:
            raise ConfigurationError("--{} is required".format(name.replace("_", "-")))
        return value

    def evaluator_config(self):
        return EvaluatorConfig(learning_rate=self.lr, epochs=self.epochs, seed=self.require_seed())

    def generator_config(self):
        config = GeneratorConfig(learning_rate=self.lr, epochs=self.epochs, lambda_rank=self.lambda_rank,
                                 temperature=self.temperature, seed=self.require_seed())
        return self.with_rounds(config)

    def with_rounds(self, config):
        # --k overrides the generator's sampling rounds only when given
        if self.k is None:
            return config
        return dataclasses.replace(config, train_rounds=self.k, eval_rounds=self.k)

    def world_config(self):
        return WorldConfig(list_len=self.list_len, position_bias=position_bias(self.list_len))

    def bootstrap_config(self):
        return BootstrapConfig(requests_per_day=self.requests, temperature=self.temperature,
                               max_rounds=self.k or DEFAULT_MAX_ROUNDS,
                               ramp_day=self.ramp_day, evaluator=self.evaluator_config(),
                               generator=self.generator_config())


def position_bias(list_len):
    default = WorldConfig.position_bias
    return default if list_len == len(default) else tuple(0.85 ** i for i in range(list_len))


def _seeds(text):
    return tuple(int(part) for part in str(text).split(",") if part.strip())


def _common(parser):
    parser.add_argument("--seed", type=int, help="Run seed; every random stream derives from it.")
    parser.add_argument("--out", type=str, help="Output directory (file for convert).")
    parser.add_argument("--config", type=str, help="JSON file of run settings.")
    parser.add_argument("--log-level", type=str, choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _training(parser):
    parser.add_argument("--schema", type=str, help="Feature schema JSON.")
    parser.add_argument("--data", type=str, help="Sample file (JSON lines).")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float, help="AdaGrad learning rate.")
    parser.add_argument("--lambda", dest="lambda_rank", type=float, help="Softmax2D rank-loss weight.")
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--k", type=int, help="Sampling rounds per request.")
    parser.add_argument("--list-len", type=int)


def build_parser():
    """
    Returns:
        Tuple[argparse.ArgumentParser, List[argparse.ArgumentParser]]: The parser and its sub-parsers.
    """
    parser = argparse.ArgumentParser(prog="combinatorial-recommender",
                                     description="Slate generation and evaluation for combinatorial recommendation.")
    commands = parser.add_subparsers(dest=api.COMMAND)
    commands.required = True

    gen_data = commands.add_parser(api.CMD_GEN_DATA, help="Write a synthetic world and its decision log.")
    _common(gen_data)
    gen_data.add_argument("--users", type=int, help="Logged requests to simulate.")
    gen_data.add_argument("--list-len", type=int)

    convert = commands.add_parser(api.CMD_CONVERT, help="Convert a JDRec item-row CSV into a sample file.")
    _common(convert)
    convert.add_argument("--schema", type=str)
    convert.add_argument("--data", type=str, help="JDRec CSV table.")
    convert.add_argument("--list-len", type=int)

    train = commands.add_parser(api.CMD_TRAIN, help="Train a model and write a checkpoint plus metrics CSV.")
    train.add_argument("target", choices=[api.TARGET_EVALUATOR, api.TARGET_GENERATOR, api.TARGET_POINTWISE])
    _common(train)
    _training(train)
    train.add_argument("--mode", type=str, choices=[api.MODE_NAIVE, api.MODE_CTR])
    train.add_argument("--evaluator", type=str, help="Evaluator checkpoint (generator training).")

    simulate = commands.add_parser(api.CMD_SIMULATE, help="Run the bootstrap simulation; writes day metrics.")
    _common(simulate)
    _training(simulate)
    simulate.add_argument("--days", type=int)
    simulate.add_argument("--step", type=int, choices=[1, 2])
    simulate.add_argument("--ramp-day", type=int)
    simulate.add_argument("--requests", type=int, help="Requests per simulated day.")

    experiment = commands.add_parser(api.CMD_EXPERIMENT, help="Seed-averaged model comparisons.")
    experiment.add_argument("target", choices=[api.TARGET_EVALUATOR, api.TARGET_GENERATOR])
    _common(experiment)
    _training(experiment)
    experiment.add_argument("--seeds", type=_seeds, help="Comma separated seeds.")
    experiment.add_argument("--requests", type=int, help="Logged requests per seed.")
    return parser, [gen_data, convert, train, simulate, experiment]


ENV_NAMES = {"lambda_rank": "LAMBDA"}


def _env_defaults(fields):
    defaults = {}
    for name in fields:
        value = os.environ.get(ENV_PREFIX + ENV_NAMES.get(name, name.upper()))
        if value is not None:
            defaults[name] = value
    return defaults


def parse_run_config(argv=None):
    """
    Resolves flags, environment and config file into a ``RunConfig``.

    Returns:
        Tuple[str, Optional[str], RunConfig]: The command, its target and the settings.
    """
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    fields = [field.name for field in dataclasses.fields(RunConfig)]
    settings = {}
    config_path = args.config or os.environ.get(ENV_PREFIX + "CONFIG")
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as handle:
                loaded = json.load(handle)
        except (OSError, ValueError) as exc:
            raise ConfigurationError("cannot read config {}: {}".format(config_path, exc))
        unknown = set(loaded) - set(fields)
        if unknown:
            raise ConfigurationError("unknown config keys {}".format(sorted(unknown)))
        settings.update(loaded)
    for name, raw in _env_defaults(fields).items():
        settings[name] = _seeds(raw) if name == "seeds" else raw
    for name in fields:
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    types = {"seed": int, "epochs": int, "lr": float, "lambda_rank": float, "temperature": float, "k": int,
             "list_len": int, "days": int, "step": int, "ramp_day": int, "users": int, "requests": int}
    try:
        for name, cast in types.items():
            if settings.get(name) is not None:
                settings[name] = cast(settings[name])
    except (TypeError, ValueError) as exc:
        raise ConfigurationError("invalid setting: {}".format(exc))
    return getattr(args, api.COMMAND), getattr(args, "target", None), RunConfig(**settings)


def _write_frame(frame, path):
    try:
        frame.to_csv(path, index=False)
    except OSError as exc:
        raise DataError("cannot write {}: {}".format(path, exc))


def write_csv(path, rows, columns):
    """Writes records (or dict rows) in a fixed column order."""
    frame = pd.DataFrame([dict(row) for row in rows], columns=list(columns))
    _write_frame(frame, path)
    logger.info("Wrote {} rows to {}".format(len(frame), path))


def _out_dir(run):
    try:
        os.makedirs(run.out, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError("cannot create output directory {}: {}".format(run.out, exc))
    return run.out


def cmd_gen_data(run, target=None):
    seed = run.require_seed()
    out = _out_dir(run)
    world_config = run.world_config()
    world = gen_world(seed, world_config)
    samples = generate_log(world, run.users, seed, DEFAULT_HEURISTIC_COUNT)
    dump_schema(world.schema, os.path.join(out, SCHEMA_FILE))
    world_path = os.path.join(out, WORLD_FILE)
    try:
        with open(world_path, "w", encoding="utf-8") as handle:
            json.dump({"seed": seed, "world": dataclasses.asdict(world_config)}, handle, indent=2, sort_keys=True)
            handle.write("\n")
    except OSError as exc:
        raise DataError("cannot write {}: {}".format(world_path, exc))
    count = write_samples(os.path.join(out, SAMPLES_FILE), samples)
    if not count:
        logger.warning("Wrote an empty dataset to {}".format(out))
        return EXIT_WARNING
    logger.info("Wrote {} samples to {}".format(count, out))
    return EXIT_OK


def cmd_convert(run, target=None):
    schema = load_schema(run.require("schema"))
    out = run.out if run.out and run.out != "." else SAMPLES_FILE
    count = convert_jdrec(run.require("data"), schema, out, list_len=run.list_len)
    return EXIT_OK if count else EXIT_WARNING


def _load_training_data(run):
    schema = load_schema(run.require("schema"))
    samples = list(load_samples(run.require("data"), schema))
    if not samples:
        raise UsageError("dataset {} is empty".format(run.data))
    return schema, samples


def cmd_train(run, target):
    out = _out_dir(run)
    schema, samples = _load_training_data(run)
    if target == api.TARGET_GENERATOR:
        config = run.generator_config()
        evaluator = load_checkpoint(run.evaluator, api.TARGET_EVALUATOR) if run.evaluator else None
        model, metrics = train_generator(run.mode, samples, evaluator, config, schema=schema)
        columns = api.GENERATOR_METRIC_COLUMNS
    else:
        config = run.evaluator_config()
        trainer = train_evaluator if target == api.TARGET_EVALUATOR else train_pointwise
        model, metrics = trainer(samples, config, schema=schema)
        columns = api.EVALUATOR_METRIC_COLUMNS
    save_checkpoint(os.path.join(out, "{}.ckpt".format(target)), model, config)
    write_csv(os.path.join(out, "{}_metrics.csv".format(target)), metrics, columns)
    return EXIT_OK


def cmd_simulate(run, target=None):
    seed = run.require_seed()
    out = _out_dir(run)
    config = run.bootstrap_config()
    world = gen_world(seed, run.world_config())
    if run.step == 1:
        rows = run_step1(world, run.days, config).day_metrics
    else:
        step1 = run_step1(world, config.step1_days, config)
        rows = run_step2(world, run.days, config, step1).day_metrics
    write_csv(os.path.join(out, DAY_METRICS_FILE), rows, api.DAY_METRIC_COLUMNS)
    return EXIT_OK


def cmd_experiment(run, target):
    out = _out_dir(run)
    world_config = run.world_config()
    evaluator_config = EvaluatorConfig(learning_rate=run.lr, epochs=run.epochs)
    if target == api.TARGET_EVALUATOR:
        frame = compare_evaluator_pointwise(run.seeds, world_config, evaluator_config, run.requests)
    else:
        generator_config = GeneratorConfig(learning_rate=run.lr, epochs=run.epochs, lambda_rank=run.lambda_rank,
                                           temperature=run.temperature)
        generator_config = run.with_rounds(generator_config)
        frame = compare_generator_modes(run.seeds, world_config, evaluator_config, generator_config, run.requests)
    path = os.path.join(out, "{}_experiment.csv".format(target))
    _write_frame(frame, path)
    logger.info("Wrote {}".format(path))
    return EXIT_OK


COMMAND_HANDLERS = {
    api.CMD_GEN_DATA: cmd_gen_data,
    api.CMD_CONVERT: cmd_convert,
    api.CMD_TRAIN: cmd_train,
    api.CMD_SIMULATE: cmd_simulate,
    api.CMD_EXPERIMENT: cmd_experiment,
}


def main(argv=None):
    """
    Runs one command.

    Returns:
        int: 0 on success, 1 on a warning outcome, the error's exit code otherwise.
    """
    try:
        command, target, run = parse_run_config(argv)
    except RecommenderError as exc:
        logging.basicConfig(level=logging.INFO)
        logger.error(str(exc))
        return exc.exit_code
    logging.basicConfig(level=getattr(logging, run.log_level.upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMAND_HANDLERS[command](run, target)
    except RecommenderError as exc:
        logger.error("{} failed: {}".format(command, exc))
        return exc.exit_code
    except OSError as exc:
        logger.error("{} failed on I/O: {}".format(command, exc))
        return DataError.exit_code

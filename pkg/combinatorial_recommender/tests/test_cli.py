# Standard library imports
import os
import tempfile
import unittest
from unittest import mock

# Third party imports
import pandas as pd

# Local application imports
from combinatorial_recommender import api
from combinatorial_recommender import cli
from combinatorial_recommender.config import DEFAULT_MAX_ROUNDS, GeneratorConfig
from combinatorial_recommender.errors import EXIT_OK, EXIT_WARNING, ConfigurationError, DataError


def _read(path):
    with open(path, "rb") as handle:
        return handle.read()


class test_cli(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.data = os.path.join(self.tmp.name, "data")

    def tearDown(self):
        self.tmp.cleanup()

    def _path(self, *parts):
        return os.path.join(self.tmp.name, *parts)

    def _gen_data(self, out, users=20):
        return cli.main([api.CMD_GEN_DATA, "--seed", "3", "--users", str(users), "--out", out,
                         "--log-level", "WARNING"])

    def _train(self, target, out, *extra):
        return cli.main([api.CMD_TRAIN, target, "--seed", "3", "--epochs", "1", "--out", out,
                         "--schema", os.path.join(self.data, cli.SCHEMA_FILE),
                         "--data", os.path.join(self.data, cli.SAMPLES_FILE), "--log-level", "WARNING"] + list(extra))

    def test_gen_data_is_deterministic(self):
        self.assertEqual(self._gen_data(self.data), EXIT_OK)
        self.assertEqual(self._gen_data(self._path("again")), EXIT_OK)
        for name in (cli.SCHEMA_FILE, cli.WORLD_FILE, cli.SAMPLES_FILE):
            self.assertEqual(_read(os.path.join(self.data, name)), _read(self._path("again", name)), name)
        with open(os.path.join(self.data, cli.SAMPLES_FILE)) as handle:
            self.assertEqual(sum(1 for _ in handle), 20)

    def test_gen_data_without_users_warns(self):
        self.assertEqual(self._gen_data(self.data, users=0), EXIT_WARNING)

    def test_seed_is_mandatory(self):
        code = cli.main([api.CMD_GEN_DATA, "--users", "3", "--out", self.data])
        self.assertEqual(code, ConfigurationError.exit_code)

    def test_missing_dataset(self):
        self._gen_data(self.data)
        os.remove(os.path.join(self.data, cli.SAMPLES_FILE))
        self.assertNotEqual(self._train(api.TARGET_EVALUATOR, self._path("models")), EXIT_OK)

    def test_train_writes_checkpoint_and_metrics(self):
        self._gen_data(self.data)
        models = self._path("models")
        self.assertEqual(self._train(api.TARGET_EVALUATOR, models), EXIT_OK)
        self.assertTrue(os.path.isfile(os.path.join(models, "evaluator.ckpt")))
        metrics_path = os.path.join(models, "evaluator_metrics.csv")
        frame = pd.read_csv(metrics_path)
        self.assertEqual(tuple(frame.columns), api.EVALUATOR_METRIC_COLUMNS)
        self.assertEqual(frame["epoch"].tolist(), [1])
        first = _read(metrics_path)
        self.assertEqual(self._train(api.TARGET_EVALUATOR, models), EXIT_OK)
        self.assertEqual(first, _read(metrics_path))

    def test_train_generator_ctr(self):
        self._gen_data(self.data)
        models = self._path("models")
        self._train(api.TARGET_EVALUATOR, models)
        code = self._train(api.TARGET_GENERATOR, models, "--mode", api.MODE_CTR,
                           "--evaluator", os.path.join(models, "evaluator.ckpt"))
        self.assertEqual(code, EXIT_OK)
        frame = pd.read_csv(os.path.join(models, "generator_metrics.csv"))
        self.assertEqual(tuple(frame.columns), api.GENERATOR_METRIC_COLUMNS)

    def test_ctr_generator_needs_evaluator(self):
        self._gen_data(self.data)
        code = self._train(api.TARGET_GENERATOR, self._path("models"), "--mode", api.MODE_CTR)
        self.assertEqual(code, ConfigurationError.exit_code)

    def test_simulate_zero_days(self):
        out = self._path("sim")
        code = cli.main([api.CMD_SIMULATE, "--seed", "1", "--step", "1", "--days", "0", "--out", out])
        self.assertEqual(code, EXIT_OK)
        with open(os.path.join(out, cli.DAY_METRICS_FILE)) as handle:
            self.assertEqual(handle.read().splitlines(), [",".join(api.DAY_METRIC_COLUMNS)])

    def _simulate(self, out, step, requests="10"):
        return cli.main([api.CMD_SIMULATE, "--seed", "5", "--step", str(step), "--days", "1", "--requests", requests,
                         "--epochs", "1", "--out", out, "--log-level", "ERROR"])

    def test_simulate_is_deterministic(self):
        first, second = self._path("sim_a"), self._path("sim_b")
        self.assertEqual(self._simulate(first, 1), EXIT_OK)
        self.assertEqual(self._simulate(second, 1), EXIT_OK)
        self.assertEqual(_read(os.path.join(first, cli.DAY_METRICS_FILE)),
                         _read(os.path.join(second, cli.DAY_METRICS_FILE)))

    def test_simulate_steps_share_columns(self):
        for step in (1, 2):
            out = self._path("step{}".format(step))
            self.assertEqual(self._simulate(out, step, requests="4"), EXIT_OK)
            frame = pd.read_csv(os.path.join(out, cli.DAY_METRICS_FILE))
            self.assertEqual(tuple(frame.columns), api.DAY_METRIC_COLUMNS)
            self.assertEqual(frame["day"].tolist(), [1])

    def test_unwritable_output_is_a_data_error(self):
        os.makedirs(os.path.join(self.data, cli.SAMPLES_FILE))
        self.assertEqual(self._gen_data(self.data), DataError.exit_code)

    def test_k_sets_generator_rounds(self):
        argv = [api.CMD_TRAIN, api.TARGET_GENERATOR, "--seed", "1"]
        run = cli.parse_run_config(argv + ["--k", "3"])[2]
        config = run.generator_config()
        self.assertEqual((config.train_rounds, config.eval_rounds), (3, 3))
        self.assertEqual(run.bootstrap_config().max_rounds, 3)
        default = cli.parse_run_config(argv)[2]
        self.assertEqual(default.generator_config().train_rounds, GeneratorConfig.train_rounds)
        self.assertEqual(default.bootstrap_config().max_rounds, DEFAULT_MAX_ROUNDS)
        with self.assertRaises(ConfigurationError):
            cli.parse_run_config(argv + ["--k", "0"])

    def test_settings_precedence(self):
        config_path = self._path("run.json")
        with open(config_path, "w") as handle:
            handle.write('{"lambda_rank": 0.25, "temperature": 3.0, "epochs": 4}')
        argv = [api.CMD_TRAIN, api.TARGET_GENERATOR, "--config", config_path, "--epochs", "7"]
        with mock.patch.dict(os.environ, {"CRREC_LAMBDA": "0.5", "CRREC_SEED": "9"}):
            command, target, run = cli.parse_run_config(argv)
        self.assertEqual((command, target), (api.CMD_TRAIN, api.TARGET_GENERATOR))
        self.assertEqual((run.lambda_rank, run.temperature, run.epochs, run.seed), (0.5, 3.0, 7, 9))

    def test_unknown_config_key(self):
        config_path = self._path("run.json")
        with open(config_path, "w") as handle:
            handle.write('{"learning_rate": 0.1}')
        with self.assertRaises(ConfigurationError):
            cli.parse_run_config([api.CMD_SIMULATE, "--config", config_path])

    def test_position_bias(self):
        self.assertEqual(cli.position_bias(4), (1.0, 0.8, 0.65, 0.5))
        self.assertEqual(len(cli.position_bias(6)), 6)


if __name__ == "__main__":
    unittest.main()

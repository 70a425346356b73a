import os
import sys
import tempfile
import unittest
from argparse import Namespace

# Add the project root to sys.path so we can import condensegan_app
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from condensegan_app.app import apply_overrides
from condensegan_app.config import (
    config_digest,
    config_from_mapping,
    default_run_config,
    load_config,
    parse_manual_keep,
    validate_config,
)
from condensegan_app.costmodel import FactorSource
from condensegan_app.errors import ConfigurationError
from condensegan_app.penalize import Regime, Strategy


class TestLoadConfig(unittest.TestCase):

    def write(self, text):
        handle = tempfile.NamedTemporaryFile("w", suffix=".yaml", delete=False)
        handle.write(text)
        handle.close()
        self.addCleanup(os.unlink, handle.name)
        return handle.name

    def test_defaults(self):
        config = load_config(None)
        self.assertEqual(config.model.base_channels, 16)
        self.assertIs(config.train.penal, config.penal)
        validate_config(config)

    def test_yaml_sections(self):
        path = self.write(
            "seed: 7\n"
            "model: {base_channels: 8, depth: 3}\n"
            "penal: {strategy: exponential, regime: low, layer_factor_source: uniform, alpha: 0.5}\n"
            "hinge: {manual_keep: {2: 3}}\n"
        )
        config = load_config(path)
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.train.seed, 7)
        self.assertEqual(config.distill.seed, 7)
        self.assertEqual(config.model.depth, 3)
        self.assertEqual(config.penal.strategy, Strategy.EXPONENTIAL)
        self.assertEqual(config.train.penal.regime, Regime.LOW)
        self.assertEqual(config.penal.layer_factor_source, FactorSource.UNIFORM)
        self.assertEqual(config.penal.alpha, 0.5)
        self.assertEqual(config.hinge.manual_keep, {2: 3})

    def test_empty_file_is_defaults(self):
        self.assertEqual(config_digest(load_config(self.write(""))), config_digest(default_run_config()))

    def test_missing_file_names_path(self):
        with self.assertRaises(ConfigurationError) as ctx:
            load_config("/nonexistent/run.yaml")
        self.assertIn("/nonexistent/run.yaml", ctx.exception.message)

    def test_unknown_key(self):
        with self.assertRaises(ConfigurationError) as ctx:
            config_from_mapping({"train": {"foo": 1}})
        self.assertEqual(ctx.exception.details["key"], "train.foo")
        with self.assertRaises(ConfigurationError):
            config_from_mapping({"train": {"seed": 3}})
        with self.assertRaises(ConfigurationError):
            config_from_mapping({"bogus": {}})

    def test_type_errors(self):
        with self.assertRaises(ConfigurationError):
            config_from_mapping({"model": {"depth": "four"}})
        with self.assertRaises(ConfigurationError):
            config_from_mapping({"penal": {"strategy": "quadratic"}})
        with self.assertRaises(ConfigurationError):
            load_config(self.write("- just\n- a list\n"))

    def test_exponent_floats_read_as_strings(self):
        config = load_config(self.write("train: {learning_rate: 1e-4}\npenal: {alpha: 2e-3}\n"))
        self.assertEqual(config.train.learning_rate, 1e-4)
        self.assertIsInstance(config.train.learning_rate, float)
        self.assertEqual(config.penal.alpha, 2e-3)
        validate_config(config)
        for bad in ("fast", True, "nan", "1e400"):
            with self.subTest(value=bad), self.assertRaises(ConfigurationError) as ctx:
                config_from_mapping({"train": {"learning_rate": bad}})
            self.assertEqual(ctx.exception.details["key"], "train.learning_rate")


class TestValidation(unittest.TestCase):

    def test_rejections(self):
        cases = [
            {"model": {"input_size": 60}},
            {"data": {"n_train": 0}},
            {"hinge": {"min_drop_ratio": 1.0}},
            {"profile": {"repeats": 2}},
            {"profile": {"warmup": 0}},
            {"penal": {"target_ratio": 0.0}},
            {"distill": {"weight_gt_l1": 0.0, "weight_teacher_l1": 0.0, "weight_gan": 0.0}},
        ]
        for data in cases:
            with self.subTest(data=data), self.assertRaises(ConfigurationError):
                validate_config(config_from_mapping(data))

    def test_input_too_small_for_discriminator(self):
        for model in ({"input_size": 16, "depth": 2}, {"input_size": 32, "depth": 3}):
            with self.subTest(model=model), self.assertRaises(ConfigurationError) as ctx:
                validate_config(config_from_mapping({"model": model}))
            self.assertEqual(ctx.exception.details["key"], "model.input_size")
            self.assertIn("PatchGAN", ctx.exception.message)
        validate_config(config_from_mapping({"model": {"input_size": 64, "depth": 3}}))

    def test_parse_manual_keep(self):
        self.assertEqual(parse_manual_keep(["layer3=50", "5=8"]), {3: 50, 5: 8})
        with self.assertRaises(ConfigurationError):
            parse_manual_keep(["layer3:50"])

    def test_digest_ignores_workdir(self):
        first, second = default_run_config(), default_run_config()
        second.paths.workdir = "elsewhere"
        self.assertEqual(config_digest(first), config_digest(second))
        second.seed = 1
        self.assertNotEqual(config_digest(first), config_digest(second.sync()))


class TestOverrides(unittest.TestCase):

    def test_flags_win(self):
        args = Namespace(
            seed=4,
            workdir="/tmp/run",
            command="train",
            epochs=3,
            penal_strategy="uniform",
            regime="low",
            factor_source="latency",
            no_penal=True,
        )
        config = apply_overrides(default_run_config(), args)
        self.assertEqual(config.train.seed, 4)
        self.assertEqual(str(config.workdir), "/tmp/run")
        self.assertEqual(config.train.epochs, 3)
        self.assertEqual(config.penal.strategy, Strategy.UNIFORM)
        self.assertEqual(config.penal.layer_factor_source, FactorSource.LATENCY)
        self.assertFalse(config.train.penal.enabled)

    def test_prune_manual_keep(self):
        args = Namespace(seed=None, workdir=None, command="prune", min_drop_ratio=20.0,
                         manual_keep=["layer1=2"])
        config = apply_overrides(default_run_config(), args)
        self.assertEqual(config.hinge.min_drop_ratio, 20.0)
        self.assertEqual(config.hinge.manual_keep, {1: 2})


if __name__ == '__main__':
    unittest.main()

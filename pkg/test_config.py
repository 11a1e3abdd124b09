#!/usr/bin/env python3

import math
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from lgcp.errors import ConfigError
from lgcp_pipeline.config import ENV_CONFIG, ENV_SEED, RunConfig, parse_config_text


class ParseConfigTests(unittest.TestCase):
    def test_sections_comments_and_lists(self) -> None:
        values = parse_config_text(
            "# demo\n"
            "grid.nx = 64   # cells\n"
            "cov.family = matern\n"
            "predict.exceed = 1.5, 2,3\n"
            "model.covariates = a.asc, b.asc\n"
            "mcmc.fix_theta = yes\n"
        )
        self.assertEqual(values["grid.nx"], 64)
        self.assertEqual(values["cov.family"], "matern")
        self.assertEqual(values["predict.exceed"], (1.5, 2.0, 3.0))
        self.assertEqual(values["model.covariates"], ("a.asc", "b.asc"))
        self.assertIs(values["mcmc.fix_theta"], True)

    def test_unknown_key_names_line(self) -> None:
        with self.assertRaises(ConfigError) as caught:
            parse_config_text("grid.nx = 8\n\ngrid.nz = 4\n")
        self.assertEqual(caught.exception.key, "grid.nz")
        self.assertEqual(caught.exception.line, 3)
        self.assertEqual(caught.exception.exit_code, 2)

    def test_bad_value_duplicate_and_missing_equals(self) -> None:
        with self.assertRaisesRegex(ConfigError, "line 1"):
            parse_config_text("grid.nx = eight\n")
        with self.assertRaises(ConfigError) as caught:
            parse_config_text("grid.nx = 8\ngrid.nx = 9\n")
        self.assertEqual(caught.exception.line, 2)
        with self.assertRaises(ConfigError):
            parse_config_text("grid.nx 8\n")


class RunConfigTests(unittest.TestCase):
    def test_defaults(self) -> None:
        config = RunConfig()
        self.assertEqual(config.kind, "unitype")
        self.assertEqual(config.seed, 1)
        self.assertEqual(config.output_dir, Path("lgcp_out"))
        sampler = config.sampler()
        self.assertEqual((sampler.burnin, sampler.n_iterations, sampler.thin), (1000, 9000, 9))
        self.assertAlmostEqual(sampler.c, 0.4)
        self.assertAlmostEqual(sampler.priors.log_phi_mean, math.log(10.0))
        self.assertAlmostEqual(sampler.priors.log_sigma_var, 0.15)
        self.assertEqual(config.grid().extended_shape, (64, 64))

    def test_validation(self) -> None:
        with self.assertRaises(ConfigError):
            RunConfig({"model.kind": "hawkes"})
        with self.assertRaises(ConfigError):
            RunConfig({"model.kind": "multitype", "model.types": 1})
        with self.assertRaises(ConfigError):
            RunConfig({"cov.temporal_rho": 1.0})
        with self.assertRaises(ConfigError):
            RunConfig({"predict.format": "tif"})
        with self.assertRaises(ConfigError) as caught:
            RunConfig({"predict.segregation_c": 0.0})
        self.assertEqual(caught.exception.key, "predict.segregation_c")
        with self.assertRaises(ConfigError):
            RunConfig({"grid.xmax": 0.0}).grid()
        with self.assertRaises(ConfigError):
            RunConfig({"mcmc.iters": 10, "mcmc.thin": 3}).sampler()
        with self.assertRaises(ConfigError):
            RunConfig({"cov.phi": -1.0}).covariance()

    def test_file_then_overrides(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.conf"
            path.write_text("grid.nx = 16\nmcmc.seed = 5\nio.input = pts.csv\n")
            config = RunConfig.load(path, {"mcmc.seed": "9", "model.offset": "pop.asc"})
            self.assertEqual(config["grid.nx"], 16)
            self.assertEqual(config.seed, 9)
            self.assertEqual(config.source, str(path))
            self.assertEqual(config.input_paths(), [Path("pts.csv"), Path("pop.asc")])
            snapshot = config.snapshot()
            self.assertEqual(snapshot["predict.segregation_q"], [0.6, 0.7, 0.8, 0.9])
            with self.assertRaises(ConfigError):
                RunConfig.load(Path(tmp) / "missing.conf")
        with self.assertRaises(ConfigError):
            RunConfig.load(None, {"mcmc.sead": "1"})

    def test_environment(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "env.conf"
            path.write_text("grid.ny = 12\n")
            with patch.dict(os.environ, {ENV_CONFIG: str(path), ENV_SEED: "77"}):
                config = RunConfig.from_env({"io.output": tmp})
            self.assertEqual(config["grid.ny"], 12)
            self.assertEqual(config.seed, 77)
            self.assertEqual(config.output_dir, Path(tmp))

    def test_unknown_key_lookup(self) -> None:
        with self.assertRaises(ConfigError):
            RunConfig()["grid.nz"]


if __name__ == "__main__":
    unittest.main()

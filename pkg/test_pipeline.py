#!/usr/bin/env python3

import json
import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from lgcp.errors import ConfigError, DataFormatError, InsufficientSamplesError
from lgcp.grid import build_grid
from lgcp.io import as_raster, write_ascii_grid
from lgcp_pipeline import (
    FileRunStore,
    InMemoryRunStore,
    RunConfig,
    RunOrchestrator,
    StageContext,
    StageResult,
    build_run_graph,
    stages_for,
)
from lgcp_pipeline.store import sha256_file

BASE = {
    "grid.nx": "8",
    "grid.ny": "8",
    "cov.sigma2": "0.5",
    "cov.phi": "0.2",
    "model.beta0": str(math.log(200.0)),
    "mcmc.burnin": "20",
    "mcmc.iters": "100",
    "mcmc.thin": "1",
    "mcmc.fix_theta": "true",
    "mcmc.seed": "7",
}


def _config(output: Path, **overrides: str) -> RunConfig:
    values = dict(BASE)
    values["io.output"] = str(output)
    values.update({key.replace("__", "."): value for key, value in overrides.items()})
    return RunConfig.load(None, values)


def _run(command: str, config: RunConfig) -> dict:
    return RunOrchestrator(store=FileRunStore(config.output_dir), use_langgraph=False).run(command, config)


class _RecordingStage:
    def __init__(self, name: str, log: list[str]) -> None:
        self.name = name
        self.log = log

    def run(self, ctx: StageContext) -> StageResult:
        self.log.append(self.name)
        ctx.state[self.name] = True
        return StageResult(stage=self.name, payload={"seen": sorted(ctx.state)})


class RunGraphTests(unittest.TestCase):
    def test_stages_run_in_order_with_and_without_langgraph(self) -> None:
        for use_langgraph in (False, True):
            log: list[str] = []
            results: list[StageResult] = []
            stages = [_RecordingStage(name, log) for name in ("first", "second", "third")]
            graph = build_run_graph(stages, on_result=results.append, use_langgraph=use_langgraph)
            ctx = StageContext(config=RunConfig(), output_dir=Path("."))
            final = graph.invoke({"ctx": ctx, "completed": [], "last_result": None})
            self.assertEqual(log, ["first", "second", "third"])
            self.assertEqual(final["completed"], ["first", "second", "third"])
            self.assertEqual(results[-1].payload["seen"], ["first", "second", "third"])
            self.assertTrue(all(r.elapsed_s >= 0 for r in results))

    def test_command_stage_lists(self) -> None:
        self.assertEqual([s.name for s in stages_for("fit")], ["load", "kfit", "fit"])
        self.assertEqual([s.name for s in stages_for("predict")], ["load_chain", "predict"])
        with self.assertRaises(ConfigError):
            stages_for("serve")


class SimulateCommandTests(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def test_same_seed_gives_identical_files(self) -> None:
        first = _run("simulate", _config(self.dir / "a"))
        _run("simulate", _config(self.dir / "b"))
        _run("simulate", _config(self.dir / "c", mcmc__seed="8"))
        self.assertEqual(first["status"], "completed")
        self.assertIn("pattern.csv", first["outputs"])
        for name in ("pattern.csv", "true_field.asc", "true_intensity.asc"):
            self.assertEqual((self.dir / "a" / name).read_bytes(), (self.dir / "b" / name).read_bytes())
        self.assertNotEqual((self.dir / "a" / "pattern.csv").read_bytes(), (self.dir / "c" / "pattern.csv").read_bytes())

    def test_manifest_records_checksums_and_events(self) -> None:
        out = self.dir / "run"
        summary = _run("simulate", _config(out))
        manifest = json.loads((out / "manifest.json").read_text())
        self.assertEqual(manifest["run_id"], summary["run_id"])
        self.assertEqual(manifest["status"], "completed")
        self.assertEqual(manifest["seed"], 7)
        self.assertEqual(manifest["config"]["grid.nx"], 8)
        self.assertEqual(manifest["outputs"]["pattern.csv"], sha256_file(out / "pattern.csv"))
        self.assertIn("simulate", manifest["timings"])
        events = [json.loads(line) for line in (out / "events.jsonl").read_text().splitlines()]
        self.assertEqual([e["stage"] for e in events], ["simulate"])
        self.assertEqual(events[0]["payload"]["n_points"], summary["stages"]["simulate"]["n_points"])

    def test_zero_population_writes_header_only(self) -> None:
        grid = build_grid((0, 0, 1, 1), nx=8, ny=8)
        offset = write_ascii_grid(self.dir / "pop.asc", as_raster(grid, np.zeros(grid.shape)))
        out = self.dir / "empty"
        summary = _run("simulate", _config(out, model__offset=str(offset)))
        self.assertEqual((out / "pattern.csv").read_text(), "x,y\n")
        self.assertEqual(summary["stages"]["simulate"]["expected_points"], 0.0)

    def test_dry_run_store_keeps_events_in_memory(self) -> None:
        store = InMemoryRunStore()
        config = _config(self.dir / "dry")
        summary = RunOrchestrator(store=store, use_langgraph=False).run("simulate", config)
        self.assertEqual(store.runs[summary["run_id"]].status, "completed")
        self.assertEqual(len(store.events), 1)
        self.assertFalse((self.dir / "dry" / "manifest.json").exists())


class InferenceCommandTests(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def test_unitype_fit_predict_diagnose(self) -> None:
        sim_dir = self.dir / "sim"
        _run("simulate", _config(sim_dir))
        out = self.dir / "fit"
        config = _config(out, io__input=str(sim_dir / "pattern.csv"), predict__exceed="1.0,2.0")
        fit = _run("fit", config)
        self.assertIn(fit["status"], {"completed", "completed_with_warnings"})
        self.assertEqual(fit["stages"]["kfit"]["reason"][:15], "mcmc.fix_theta ")
        self.assertEqual(fit["stages"]["fit"]["n_draws"], 100)
        header = (out / "chain.csv").read_text().splitlines()[0]
        self.assertEqual(header, "iter,logpost,beta,sigma,phi")

        predict = _run("predict", config)
        self.assertEqual(predict["current_stage"], "predict")
        for name in ("exp_s_p0.5.asc", "exp_s_gt1.asc", "exp_s_gt2.asc"):
            self.assertTrue((out / name).is_file(), name)

        diagnose = _run("diagnose", config)
        self.assertEqual(diagnose["stages"]["diagnose"]["n_draws"], 100)
        report = json.loads((out / "diagnostics.json").read_text())
        self.assertIn("suggested_thin", report)
        manifest = json.loads((out / "manifest.json").read_text())
        self.assertEqual(manifest["command"], "diagnose")
        self.assertIn(str(sim_dir / "pattern.csv"), json.dumps(manifest["config"]))

    def test_kfit_writes_curves(self) -> None:
        sim_dir = self.dir / "sim"
        _run("simulate", _config(sim_dir, model__beta0=str(math.log(400.0))))
        out = self.dir / "kfit"
        summary = _run("kfit", _config(out, io__input=str(sim_dir / "pattern.csv")))
        self.assertEqual((out / "kfit.csv").read_text().splitlines()[0], "u,k_hat,k_model")
        payload = json.loads((out / "kfit.json").read_text())
        self.assertGreater(payload["sigma"], 0.0)
        self.assertEqual(len(payload["starts"]), 25)
        manifest = json.loads((out / "manifest.json").read_text())
        self.assertIn(str(sim_dir / "pattern.csv"), manifest["inputs"])
        self.assertEqual(summary["stages"]["kfit"]["n_points"], summary["stages"]["load"]["n_points"])

    def test_aggregated_fit_and_risk_outputs(self) -> None:
        grid = build_grid((0, 0, 1, 1), nx=8, ny=8)
        regions = np.repeat(np.arange(1, 5), 16).reshape(8, 8).astype(float)
        region_map = write_ascii_grid(self.dir / "regions.asc", as_raster(grid, regions))
        out = self.dir / "agg"
        config = _config(out, model__kind="aggregated", model__regions=str(region_map))
        _run("simulate", config)
        config = _config(
            out,
            model__kind="aggregated",
            model__regions=str(region_map),
            model__region_counts=str(out / "region_counts.csv"),
        )
        fit = _run("fit", config)
        self.assertEqual(fit["stages"]["kfit"]["reason"], "no point pattern (aggregated counts)")
        self.assertGreater(fit["stages"]["fit"]["audit_checks"], 100)
        _run("predict", config)
        for name in ("effects.csv", "relative_risk_mean.asc", "relative_risk_gt1.1.asc"):
            self.assertTrue((out / name).is_file(), name)

    def test_multitype_segregation_outputs(self) -> None:
        out = self.dir / "multi"
        config = _config(out, model__kind="multitype", model__beta="5.0,4.5")
        _run("simulate", config)
        self.assertEqual((out / "pattern.csv").read_text().splitlines()[0], "x,y,mark")
        config = _config(out, model__kind="multitype", io__input=str(out / "pattern.csv"))
        fit = _run("fit", config)
        self.assertEqual(set(fit["stages"]["fit"]["beta_mean"]), {"type1", "type2"})
        _run("predict", config)
        for name in ("p_type1.asc", "p_type2.asc", "exp_s_p0.5_type2.asc", "segregation.csv"):
            self.assertTrue((out / name).is_file(), name)
        rows = (out / "segregation.csv").read_text().splitlines()
        self.assertEqual(rows[0], "type,c,q,n_cells")
        self.assertEqual(len(rows), 1 + 2 * 4)

    def test_spacetime_predicts_final_step(self) -> None:
        out = self.dir / "st"
        config = _config(out, model__kind="spacetime", model__time_steps="3", cov__temporal_rho="0.5")
        _run("simulate", config)
        self.assertTrue((out / "true_field_t2.asc").is_file())
        config = _config(
            out,
            model__kind="spacetime",
            model__time_steps="3",
            cov__temporal_rho="0.5",
            io__input=str(out / "pattern.csv"),
        )
        fit = _run("fit", config)
        self.assertEqual(len(fit["stages"]["load"]["step_counts"]), 3)
        baseline = np.asarray(fit["stages"]["load"]["temporal_baseline"])
        self.assertEqual(baseline.shape, (3,))
        self.assertAlmostEqual(float(baseline.mean()), 1.0, places=9)
        counts = np.asarray(fit["stages"]["load"]["step_counts"], dtype=float)
        # the trend score equation matches the first and last fitted totals to the counts
        self.assertAlmostEqual((baseline[2] - baseline[0]) * counts.mean(), counts[2] - counts[0], delta=1e-4)
        _run("predict", config)
        self.assertTrue((out / "exp_s_p0.5_t2.asc").is_file())

    def test_mcmle_writes_estimate(self) -> None:
        sim_dir = self.dir / "sim"
        _run("simulate", _config(sim_dir))
        out = self.dir / "mcmle"
        config = _config(
            out,
            io__input=str(sim_dir / "pattern.csv"),
            mcmle__sims="5",
            mcmle__max_thin="2",
            mcmle__theta0=f"{math.log(200.0)},0.7,0.2",
            mcmle__fixed="sigma,phi",
        )
        summary = _run("mcmle", config)
        self.assertEqual(summary["stages"]["kfit"]["reason"], "mcmle.theta0 given")
        payload = json.loads((out / "mcmle.json").read_text())
        self.assertEqual(payload["beta_names"], ["intercept"])
        self.assertEqual(len(payload["rounds"]), 1)
        self.assertAlmostEqual(payload["estimate"]["sigma"], 0.7)


class FailureTests(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def test_malformed_row_fails_run_with_line(self) -> None:
        bad = self.dir / "bad.csv"
        bad.write_text("x,y\n0.1,0.1\n0.2\n")
        out = self.dir / "out"
        with self.assertRaises(DataFormatError):
            _run("fit", _config(out, io__input=str(bad)))
        manifest = json.loads((out / "manifest.json").read_text())
        self.assertEqual(manifest["status"], "failed")
        self.assertEqual(manifest["current_stage"], "load")
        self.assertEqual(manifest["error"]["line"], 3)
        self.assertEqual(manifest["error"]["type"], "DataFormatError")

    def test_kfit_without_pattern_is_a_config_error(self) -> None:
        with self.assertRaises(ConfigError):
            _run("kfit", _config(self.dir / "out"))

    def test_predict_needs_enough_draws(self) -> None:
        sim_dir = self.dir / "sim"
        _run("simulate", _config(sim_dir))
        out = self.dir / "short"
        config = _config(out, io__input=str(sim_dir / "pattern.csv"), mcmc__iters="20")
        _run("fit", config)
        with self.assertRaises(InsufficientSamplesError):
            _run("predict", config)
        manifest = json.loads((out / "manifest.json").read_text())
        self.assertEqual(manifest["current_stage"], "predict")


if __name__ == "__main__":
    unittest.main()

import contextlib
import io
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import pandas as pd

from gqarch.cli import _effective_config, _mc_design, main, parse_config_echo, read_config_file, resolve_config
from gqarch.exceptions import EXIT_DATA, EXIT_OK, EXIT_USAGE, ConfigError
from gqarch.simulator import load_series
from gqarch.tests.oracles import SLOW_TESTS

SIMULATE = ["simulate", "--gamma", "0.7", "--omega", "0.1", "--a", "-0.2", "--c", "0.2", "--d", "0.2"]


class ResolveConfigTests(unittest.TestCase):
    def test_unknown_key_is_rejected(self):
        with self.assertRaises(ConfigError) as ctx:
            resolve_config("feasibility", {"gamma": "0.7", "d": "0.4", "c": "0.2", "colour": "red"})
        self.assertEqual(ctx.exception.key, "colour")
        self.assertEqual(ctx.exception.exit_code, EXIT_USAGE)

    def test_missing_required_key(self):
        with self.assertRaises(ConfigError) as ctx:
            resolve_config("simulate", {"gamma": "0.7"})
        self.assertEqual(ctx.exception.key, "omega")

    def test_malformed_value(self):
        with self.assertRaises(ConfigError) as ctx:
            resolve_config("diagnose", {"in": "a.csv", "out": "b.csv", "max_lag": "ten"})
        self.assertEqual(ctx.exception.key, "max_lag")

    def test_typed_defaults(self):
        config = resolve_config("estimate", {"in": "s.csv"})
        self.assertEqual(config.input_path, "s.csv")
        self.assertIsNone(config.output_path)
        self.assertEqual(config.get("starts"), 5)
        self.assertIs(config.get("use_gradient"), True)
        self.assertEqual(config.get("box_gamma_hi"), 0.9)
        self.assertNotIn("beta", config.parameters)

    def test_echo_parses_back_into_the_same_config(self):
        config = resolve_config(
            "mc",
            {"design": "single", "n_list": "500,1000", "mode": "truncated", "beta": "0.7", "out": "mc.csv", "d": "0.35"},
        )
        text = "\n".join(f"# {key} = {value}" for key, value in config.echo().items()) + "\nomega0,d0\n"
        self.assertEqual(parse_config_echo(text), config)

    def test_quick_design_echoes_the_grid_it_runs(self):
        config = resolve_config("mc", {"design": "quick", "reps": "100", "n_list": "1000,5000", "d": "0.35", "out": "mc.csv"})
        echoed = _effective_config(config, _mc_design(config))
        self.assertEqual(echoed.get("reps"), 20)
        self.assertEqual(echoed.get("n_list"), (500,))
        self.assertEqual(echoed.get("d"), 0.2)
        self.assertEqual(echoed.get("omega"), 0.1)
        self.assertEqual(parse_config_echo("\n".join(f"# {k} = {v}" for k, v in echoed.echo().items())), echoed)

    def test_reference_design_drops_single_theta_keys_from_the_echo(self):
        config = resolve_config("mc", {"design": "reference", "n_list": "1000", "reps": "5", "out": "mc.csv"})
        echoed = _effective_config(config, _mc_design(config))
        self.assertEqual(echoed.get("reps"), 5)
        self.assertEqual(echoed.get("n_list"), (1000,))
        self.assertNotIn("gamma", echoed.parameters)

    def test_config_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.conf"
            path.write_text("# experiment\ncommand = simulate\nn = 500\n\nseed=9\n", encoding="utf-8")
            self.assertEqual(read_config_file(path, "simulate"), {"n": "500", "seed": "9"})
            with self.assertRaises(ConfigError):
                read_config_file(path, "estimate")


class MainTests(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)
        self._patches = [
            patch("gqarch.env_config._load_dotenv_once", return_value=None),
            patch.dict(os.environ, {"GQARCH_LOG_LEVEL": "error"}, clear=True),
        ]
        for item in self._patches:
            item.start()

    def tearDown(self):
        for item in reversed(self._patches):
            item.stop()
        self._tmp.cleanup()

    def _main(self, *argv: str) -> tuple[int, str]:
        buffer = io.StringIO()
        with contextlib.redirect_stdout(buffer), contextlib.redirect_stderr(io.StringIO()):
            code = main(list(argv))
        return code, buffer.getvalue()

    def _simulate(self, name: str = "s.csv", n: int = 1000, *extra: str) -> Path:
        out = self.root / name
        code, _ = self._main(*SIMULATE, "--n", str(n), "--seed", "42", "--out", str(out), *extra)
        self.assertEqual(code, EXIT_OK)
        return out

    def test_simulate_writes_a_reproducible_series(self):
        first = self._simulate("a.csv").read_text(encoding="utf-8")
        second = self._simulate("b.csv").read_text(encoding="utf-8")
        self.assertEqual(first.replace("b.csv", "a.csv"), second.replace("b.csv", "a.csv"))
        values = [line for line in first.splitlines() if not line.startswith("#") and line != "r"]
        self.assertEqual(len(values), 1000)
        echo = parse_config_echo(first)
        self.assertEqual(echo.command, "simulate")
        self.assertEqual(echo.seed, 42)
        self.assertEqual(echo.get("a"), -0.2)
        self.assertEqual(load_series(self.root / "a.csv").seed, 42)

    def test_flags_override_the_config_file(self):
        conf = self.root / "sim.conf"
        conf.write_text("n = 500\nseed = 1\n", encoding="utf-8")
        out = self.root / "s.csv"
        code, _ = self._main(*SIMULATE, "--config", str(conf), "--n", "300", "--out", str(out))
        self.assertEqual(code, EXIT_OK)
        series = load_series(out)
        self.assertEqual(series.n, 300)
        self.assertEqual(series.seed, 1)

    def test_unknown_config_file_key(self):
        conf = self.root / "sim.conf"
        conf.write_text("n = 50\nsmoothing = 3\n", encoding="utf-8")
        code, _ = self._main(*SIMULATE, "--config", str(conf), "--out", str(self.root / "s.csv"))
        self.assertEqual(code, EXIT_USAGE)

    def test_invalid_theta_is_a_usage_error(self):
        code, _ = self._main("feasibility", "--gamma", "0.7", "--d", "0.7", "--c", "0.2")
        self.assertEqual(code, EXIT_USAGE)

    def test_infeasible_simulation_is_a_data_error(self):
        argv = ["simulate", "--gamma", "0.9", "--omega", "0.1", "--a", "0", "--c", "0.5", "--d", "0.4"]
        code, _ = self._main(*argv, "--n", "50", "--out", str(self.root / "x.csv"))
        self.assertEqual(code, EXIT_DATA)

    def test_missing_input_is_a_data_error(self):
        code, _ = self._main("estimate", "--in", str(self.root / "missing.csv"))
        self.assertEqual(code, EXIT_DATA)

    def test_feasibility_report(self):
        code, output = self._main("feasibility", "--gamma", "0.7", "--c", "0.2", "--d", "0.4")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("# command = feasibility", output)
        self.assertIn("l2_ok = true", output)
        self.assertIn("l4_ok = false", output)
        b2_line = next(line for line in output.splitlines() if line.startswith("b2 = "))
        self.assertAlmostEqual(float(b2_line.split("=")[1]), 0.2237, delta=1e-4)

    def test_estimate_writes_row_and_report(self):
        series = self._simulate("s.csv", 200)
        out = self.root / "est.csv"
        code, output = self._main(
            "estimate", "--in", str(series), "--starts", "1", "--max-iters", "150", "--out", str(out)
        )
        self.assertEqual(code, EXIT_OK)
        self.assertIn("QML estimate (finite-past, n = 200)", output)
        frame = pd.read_csv(out, comment="#")
        self.assertEqual(len(frame), 1)
        for column in ("gamma", "omega", "a", "d", "c", "se_gamma", "objective", "converged", "seed"):
            self.assertIn(column, frame.columns)
        report = (self.root / "est.report.txt").read_text(encoding="utf-8")
        self.assertEqual(parse_config_echo(report).input_path, str(series))

    def test_diagnose_writes_autocovariances(self):
        series = self._simulate("s.csv", 2000)
        out = self.root / "acf.csv"
        code, _ = self._main("diagnose", "--in", str(series), "--out", str(out), "--max-lag", "50", "--lag-lo", "2")
        self.assertIn(code, (EXIT_OK, 4))
        frame = pd.read_csv(out, comment="#")
        self.assertEqual(list(frame.columns), ["lag", "acov"])
        self.assertEqual(len(frame), 51)

    def test_mc_writes_csv_and_table(self):
        out = self.root / "mc.csv"
        code, output = self._main(
            "mc", "--design", "single", "--n-list", "60", "--reps", "1", "--starts", "1", "--max-iters", "30",
            "--out", str(out),
        )
        self.assertEqual(code, EXIT_OK)
        self.assertIn("omega0 = 0.1", output)
        self.assertTrue((self.root / "mc.table.txt").exists())
        frame = pd.read_csv(out, comment="#")
        self.assertEqual(int(frame.loc[0, "n"]), 60)
        self.assertEqual(int(frame.loc[0, "reps"]), 1)

    def test_metrics_textfile(self):
        metrics = self.root / "metrics.prom"
        with patch.dict(os.environ, {"GQARCH_METRICS_PATH": str(metrics)}):
            code, _ = self._main("feasibility", "--gamma", "0.7", "--c", "0.2", "--d", "0.4")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("gqarch_estimations_total", metrics.read_text(encoding="utf-8"))

    @unittest.skipUnless(SLOW_TESTS, "set GQARCH_SLOW_TESTS=1 to run the full-size estimate")
    def test_estimate_recovers_gamma(self):
        series = self._simulate("s.csv", 1000)
        out = self.root / "est.csv"
        code, _ = self._main("estimate", "--in", str(series), "--mode", "finite-past", "--out", str(out))
        self.assertEqual(code, EXIT_OK)
        frame = pd.read_csv(out, comment="#")
        self.assertLess(abs(float(frame.loc[0, "gamma"]) - 0.7), 0.3)


if __name__ == "__main__":
    unittest.main()

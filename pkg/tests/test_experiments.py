import unittest
import sys
import os
import csv
import json
import math
import tempfile
from dataclasses import replace
from unittest import mock

import numpy as np

# Add repository root to path
ROOT = os.path.join(os.path.dirname(__file__), '..')
sys.path.append(ROOT)

from src.config import ExperimentConfig, build_rule, load_experiment_config
from src.errors import ConfigError
from src.experiments import (
    emit_outputs,
    format_rate_table,
    probe_from_config,
    run_batch,
    run_case,
    run_probe,
    run_rate_study,
    run_semilocal_check,
    solve_karcher,
)
from src.inspect_history import analyse_history, inexactness_ratios, terminal_monotone
from src.main import main
from src.manifold import dist
from src.newton import FixedDecay, check_rule_conformance, read_history_csv
from src.point_cloud import karcher_points, sphere_point

EXPERIMENTS = os.path.join(ROOT, "experiments")


def experiment(name, **overrides):
    return load_experiment_config(os.path.join(EXPERIMENTS, f"{name}.yaml"), **overrides)


def write_yaml(directory, name, text):
    path = os.path.join(directory, name)
    with open(path, "w") as f:
        f.write(text)
    return path


class TestConfigLoading(unittest.TestCase):
    def test_case_file(self):
        config = experiment("case_a3")
        self.assertEqual(config.kind, "karcher_kkt")
        self.assertEqual(config.n_points, 10)
        self.assertEqual(config.radius, 0.1)
        self.assertEqual(config.rule, {"kind": "fixed_decay", "c": 1.0, "rho": 0.1})

    def test_overrides(self):
        config = experiment("case_a1", seed=7, out_dir="elsewhere")
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.out_dir, "elsewhere")

    def test_invalid_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            cases = {
                "unknown_key.yaml": "kind: karcher_kkt\nradius: 1.0\ncolour: red\n",
                "no_kind.yaml": "radius: 1.0\n",
                "bad_kind.yaml": "kind: banana\n",
                "bad_yaml.yaml": "kind: [karcher_kkt\n",
                "bad_radius.yaml": "kind: karcher_kkt\nradius: -1.0\n",
                "needs_solution.yaml": "kind: karcher_kkt\nrule: {kind: proximity_linear}\n",
                "missing_constants.yaml": "kind: semilocal_check\nconstants: {sigma: 0.1}\n",
                "bad_sigma.yaml": "kind: mreg_probe\nsigma: -2\n",
            }
            for name, text in cases.items():
                path = write_yaml(tmp, name, text)
                with self.assertRaises(ConfigError, msg=name):
                    load_experiment_config(path)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_experiment_config(os.path.join(EXPERIMENTS, "nope.yaml"))

    def test_name_defaults_to_file_name(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_yaml(tmp, "tiny_case.yaml", "kind: karcher_kkt\nn_points: 3\n")
            self.assertEqual(load_experiment_config(path).name, "tiny_case")

    def test_build_rule(self):
        self.assertEqual(build_rule({"kind": "fixed_decay", "c": 2.0, "rho": 0.5}), FixedDecay(2.0, 0.5))
        with self.assertRaises(ConfigError):
            build_rule({"kind": "secant"})
        with self.assertRaises(ConfigError):
            build_rule({"kind": "fixed_decay", "rho": "fast"})

    def test_readme_lists_every_key(self):
        with open(os.path.join(ROOT, "README.md")) as f:
            readme = f.read()
        for key in set(ExperimentConfig.__dataclass_fields__) - {"source"}:
            self.assertRegex(readme, rf"(?m)^{key}:\s", msg=key)
        self.assertIn("decay: 0.5", readme)

    def test_experiment_files_share_one_pointer(self):
        for name in sorted(os.listdir(EXPERIMENTS)):
            with open(os.path.join(EXPERIMENTS, name)) as f:
                comments = [line for line in f if line.startswith("#")]
            self.assertEqual(comments, ["# Experiment keys: see \"Experiment files\" in README.md.\n"], msg=name)

    def test_problem_key_is_not_a_config_key(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_yaml(tmp, "rates.yaml", "kind: scalar_rate_study\nproblem: scalar\n")
            with self.assertRaises(ConfigError):
                load_experiment_config(path)
        config = experiment("rate_scalar")
        self.assertEqual(config.coefficients, [1.0, 0.0, -2.0])


class TestPointCloud(unittest.TestCase):
    def test_seeded_and_on_sphere(self):
        a = karcher_points(10, 2024)
        b = karcher_points(10, 2024)
        for p, q in zip(a, b):
            np.testing.assert_array_equal(p.coords, q.coords)
            self.assertAlmostEqual(float(np.linalg.norm(p.coords)), 1.0, places=14)
            self.assertTrue(np.all(p.coords >= 0.0))

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            karcher_points(0, 1)
        with self.assertRaises(ConfigError):
            sphere_point([0.0, 0.0, 0.0, 0.0])


class TestKarcherCases(unittest.TestCase):
    """The four constrained Karcher cases, solved once for the whole class."""

    @classmethod
    def setUpClass(cls):
        cls.configs = [experiment(f"case_a{i}") for i in range(1, 5)]
        cls.results = run_batch(cls.configs)

    def test_results_in_config_order(self):
        self.assertEqual([r.row.case for r in self.results], ["case_a1", "case_a2", "case_a3", "case_a4"])

    def test_all_converge(self):
        for r in self.results:
            self.assertEqual(r.row.status, "Converged", r.row.case)
            self.assertLessEqual(r.row.iterations, 30, r.row.case)
            self.assertLessEqual(r.report.history[-1].norm_phi, 1e-12)

    def test_inactive_constraint(self):
        for r in self.results[:2]:
            self.assertEqual(r.row.mu_star, 0.0)
            self.assertLess(r.row.g_star, 0.0)
            self.assertLessEqual(r.row.grad_norm, 1e-12)

    def test_active_constraint(self):
        center = sphere_point([0.0, 0.0, 0.0, 1.0])
        for r in self.results[2:]:
            self.assertGreater(r.row.mu_star, 0.0)
            self.assertLessEqual(abs(r.row.g_star), 1e-12)
            self.assertLessEqual(abs(r.row.mu_g), 1e-10)
            self.assertLessEqual(r.row.grad_norm, 1e-12)
            self.assertAlmostEqual(dist(r.report.final.point, center), 0.1, delta=1e-7)

    def test_terminal_residuals_decrease(self):
        for r in self.results:
            tail = [rec.norm_phi for rec in r.report.history[-5:]]
            self.assertTrue(all(b < a for a, b in zip(tail, tail[1:])), r.row.case)

    def test_fixed_decay_is_followed(self):
        for r in self.results:
            self.assertEqual(check_rule_conformance(r.problem, r.report.history, FixedDecay(1.0, 0.1)), [])

    def test_outputs(self):
        with tempfile.TemporaryDirectory() as tmp:
            self.assertEqual(emit_outputs(self.results, tmp), 0)
            with open(os.path.join(tmp, "summary.csv"), newline="") as f:
                rows = list(csv.DictReader(f))
            self.assertEqual(len(rows), 4)
            self.assertEqual({row["status"] for row in rows}, {"Converged"})
            for r in self.results:
                path = os.path.join(tmp, f"{r.row.case}_history.csv")
                parsed = read_history_csv(path)
                self.assertEqual([row["norm_phi"] for row in parsed],
                                 [rec.norm_phi for rec in r.report.history])
                self.assertEqual(parsed[-1]["mu"], r.row.mu_star)
                self.assertTrue(terminal_monotone(parsed))

    def test_history_analysis(self):
        with tempfile.TemporaryDirectory() as tmp:
            emit_outputs(self.results[:1], tmp)
            rows = read_history_csv(os.path.join(tmp, "case_a1_history.csv"))
        analysis = analyse_history(rows)
        self.assertEqual(analysis["iterates"], len(rows))
        self.assertTrue(analysis["monotone_tail"])
        self.assertEqual([k for k, _ in inexactness_ratios(rows)], [row["k"] for row in rows[:-1]])


class TestKarcherEdgeCases(unittest.TestCase):
    def test_single_sample_at_center(self):
        p = sphere_point([0.0, 0.0, 0.0, 1.0])
        result = solve_karcher("single", [p], p, 2.0, FixedDecay(1.0, 0.1))
        self.assertTrue(result.report.converged)
        self.assertLessEqual(result.row.iterations, 1)
        self.assertEqual(result.row.mu_star, 0.0)
        np.testing.assert_allclose(result.row.p_star, [0.0, 0.0, 0.0, 1.0], atol=1e-12)

    def test_failed_case_sets_exit_code(self):
        config = replace(experiment("case_a3"), name="capped", max_iters=1)
        failed = run_case(config)
        self.assertEqual(failed.row.status, "MaxIters")
        with tempfile.TemporaryDirectory() as tmp:
            self.assertEqual(emit_outputs([failed], tmp), 1)
            with open(os.path.join(tmp, "summary.csv"), newline="") as f:
                rows = list(csv.DictReader(f))
        self.assertEqual(rows[0]["status"], "MaxIters")

    def test_batch_records_failed_cases(self):
        broken = replace(experiment("case_a3"), name="broken", center=[0.0, 0.0, 0.0, 0.0])
        results = run_batch([broken, experiment("case_a1")])
        self.assertEqual([r.row.case for r in results], ["broken", "case_a1"])
        self.assertEqual(results[0].row.status, "Failed")
        self.assertIn("ConfigError", results[0].row.error)
        self.assertIsNone(results[0].report)
        self.assertEqual(results[1].row.status, "Converged")
        with tempfile.TemporaryDirectory() as tmp:
            self.assertEqual(emit_outputs(results, tmp), 1)
            with open(os.path.join(tmp, "summary.csv"), newline="") as f:
                rows = list(csv.DictReader(f))
            self.assertFalse(os.path.exists(os.path.join(tmp, "broken_history.csv")))
            self.assertTrue(os.path.exists(os.path.join(tmp, "case_a1_history.csv")))
            with open(os.path.join(tmp, "summary.txt")) as f:
                self.assertIn("error: ConfigError", f.read())
        self.assertEqual([row["status"] for row in rows], ["Failed", "Converged"])
        self.assertIn("ConfigError", rows[0]["error"])
        self.assertEqual(rows[1]["error"], "")

    def test_batch_survives_unexpected_errors(self):
        real_run_case = run_case

        def flaky(config):
            if config.name == "singular":
                raise np.linalg.LinAlgError("Singular matrix")
            return real_run_case(config)

        configs = [replace(experiment("case_a1"), name="singular"), experiment("case_a1")]
        with mock.patch("src.experiments.run_case", side_effect=flaky):
            results = run_batch(configs)
        self.assertEqual(results[0].row.status, "Failed")
        self.assertEqual(results[0].row.error, "LinAlgError: Singular matrix")
        self.assertEqual(results[1].row.status, "Converged")

    def test_identical_runs_write_identical_files(self):
        config = experiment("case_a3")
        blobs = []
        for _ in range(2):
            with tempfile.TemporaryDirectory() as tmp:
                emit_outputs([run_case(config)], tmp)
                with open(os.path.join(tmp, "case_a3_history.csv"), "rb") as f:
                    history = f.read()
                with open(os.path.join(tmp, "summary.csv"), "rb") as f:
                    summary = f.read()
            blobs.append((history, summary))
        self.assertEqual(blobs[0], blobs[1])


class TestRateStudies(unittest.TestCase):
    def test_scalar_study(self):
        rows = {r.rule: r for r in run_rate_study(experiment("rate_scalar"))}
        self.assertEqual(rows["exact"].classification, "Quadratic")
        self.assertEqual(rows["proximity_linear"].classification, "Linear")
        self.assertLessEqual(rows["proximity_linear"].ratio, 0.5)
        self.assertGreaterEqual(rows["proximity_quadratic"].order, 1.8)
        for r in rows.values():
            self.assertEqual(r.status, "Converged")
            self.assertEqual(r.nonconforming, [])
        self.assertIn("proximity_linear", format_rate_table(list(rows.values())))

    def test_karcher_rules(self):
        rows = {r.rule: r for r in run_rate_study(experiment("rate_karcher"))}
        exact = rows["exact"]
        self.assertEqual(exact.status, "Converged")
        self.assertGreaterEqual(exact.samples, 3)
        self.assertGreaterEqual(exact.order, 1.8)
        self.assertEqual(exact.classification, "Quadratic")
        decay = rows["fixed_decay"]
        self.assertEqual(decay.status, "Converged")
        self.assertAlmostEqual(decay.order, 1.0, delta=0.2)
        self.assertLess(decay.ratio, 1.0)


class TestSemiLocalCheck(unittest.TestCase):
    def test_certificate_passes(self):
        report, cert = run_semilocal_check(experiment("certify_scalar"))
        self.assertTrue(report.converged)
        self.assertTrue(cert.passed, cert.reasons)

    def test_divergent_constants(self):
        config = experiment("certify_scalar")
        config = replace(config, constants=dict(config.constants, theta=5.0))
        _, cert = run_semilocal_check(config)
        self.assertFalse(cert.valid)


class TestProbes(unittest.TestCase):
    def test_all_probe_configs(self):
        for name in ("mreg_ex1", "mreg_ex2", "mreg_ex3", "mreg_ex4"):
            report = run_probe(experiment(name))
            self.assertEqual(report.violations, 0, name)

    def test_auto_sigma(self):
        self.assertAlmostEqual(probe_from_config(experiment("mreg_ex1")).sigma, math.sqrt(2.0))
        self.assertAlmostEqual(probe_from_config(experiment("mreg_ex2")).sigma, math.sqrt(2.0) * 2.0 * math.e)


class TestCommandLine(unittest.TestCase):
    def test_probe_command(self):
        with tempfile.TemporaryDirectory() as tmp:
            code = main(["mreg", "--config", os.path.join(EXPERIMENTS, "mreg_ex1.yaml"), "--out", tmp])
            self.assertEqual(code, 0)
            with open(os.path.join(tmp, "mreg_ex1_probe.json")) as f:
                self.assertEqual(json.load(f)["violations"], 0)

    def test_certify_command(self):
        with tempfile.TemporaryDirectory() as tmp:
            code = main(["certify", "--config", os.path.join(EXPERIMENTS, "certify_scalar.yaml"), "--out", tmp])
            self.assertEqual(code, 0)
            self.assertTrue(os.path.exists(os.path.join(tmp, "certify_scalar_certificate.json")))

    def test_run_and_inspect(self):
        with tempfile.TemporaryDirectory() as tmp:
            code = main(["run", "--config", os.path.join(EXPERIMENTS, "case_a1.yaml"), "--out", tmp])
            self.assertEqual(code, 0)
            self.assertEqual(main(["inspect", os.path.join(tmp, "case_a1_history.csv")]), 0)

    def test_config_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            bad = write_yaml(tmp, "bad.yaml", "kind: karcher_kkt\nradius: 0\n")
            self.assertEqual(main(["run", "--config", bad, "--out", tmp]), 2)
            wrong_kind = os.path.join(EXPERIMENTS, "case_a1.yaml")
            self.assertEqual(main(["rates", "--config", wrong_kind, "--out", tmp]), 2)

    def test_each_config_keeps_its_out_dir(self):
        with tempfile.TemporaryDirectory() as tmp:
            left, right = os.path.join(tmp, "left"), os.path.join(tmp, "right")
            cases = [write_yaml(tmp, f"{name}.yaml", "kind: karcher_kkt\nn_points: 10\nradius: 2.0\n"
                                f"out_dir: {out}\n") for name, out in (("west", left), ("east", right))]
            self.assertEqual(main(["run", "--config", cases[0], "--config", cases[1]]), 0)
            self.assertEqual(sorted(os.listdir(left)), ["summary.csv", "summary.txt", "west_history.csv"])
            self.assertEqual(sorted(os.listdir(right)), ["east_history.csv", "summary.csv", "summary.txt"])
            with open(os.path.join(right, "summary.csv")) as f:
                self.assertEqual([row["case"] for row in csv.DictReader(f)], ["east"])

            probes = [write_yaml(tmp, f"{name}.yaml", "kind: mreg_probe\nsamples: 50\n"
                                 f"out_dir: {out}\n") for name, out in (("north", left), ("south", right))]
            self.assertEqual(main(["mreg", "--config", probes[0], "--config", probes[1]]), 0)
            self.assertTrue(os.path.exists(os.path.join(left, "north_probe.json")))
            self.assertTrue(os.path.exists(os.path.join(right, "south_probe.json")))
            self.assertFalse(os.path.exists(os.path.join(left, "south_probe.json")))

    def test_inspect_missing_file(self):
        self.assertEqual(main(["inspect", os.path.join(EXPERIMENTS, "missing_history.csv")]), 1)


if __name__ == '__main__':
    unittest.main()

import contextlib
import io
import itertools
import json
import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
from pydantic import ValidationError
from scipy import stats
from scipy.spatial import cKDTree

from app.bnb import GrowthRow, GrowthTable, branch_and_bound
from app.cli import EXIT_INVALID, EXIT_INVARIANT, EXIT_IO, EXIT_OK, main
from app.combs import Comb
from app.config import ACCEPTANCE_MODE
from app.errors import InvalidArgumentError
from app.experiments import (
    RunConfig,
    best_tour,
    constants_criteria,
    count_triangle_copies,
    estimate_constants,
    failed_criteria,
    gap_experiment,
    gap_instance,
    growth_criteria,
    load_preset,
    load_presets,
    trial_seeds,
    tree_growth_experiment,
    write_csv,
    write_report,
    write_svg_line_chart,
)
from app.instance import CopySpec, build_gadget, find_copies, generate_uniform, rescale, triangle_template, verify_copy
from app.io_formats import (
    CombModel,
    GadgetMetaModel,
    TourModel,
    format_points,
    load_gadget_meta,
    load_model,
    parse_points,
    parse_tsplib,
    save_gadget_meta,
)
from app.lp_core import held_karp
from app.stats import bootstrap_mean, summarize_column
from app.tsp_solvers import exact_tsp_dp, heuristic_tour

TSPLIB_SAMPLE = """NAME : square
TYPE : TSP
DIMENSION : 4
EDGE_WEIGHT_TYPE : EUC_2D
NODE_COORD_SECTION
1 0 0
2 3 0
3 3 4
4 0 4
EOF
"""


def run_cli(*argv: str) -> tuple[int, str]:
    buffer = io.StringIO()
    with contextlib.redirect_stdout(buffer):
        code = main(list(argv))
    return code, buffer.getvalue()


class Phase6ConstantsTests(unittest.TestCase):
    def test_constants_rows_are_sandwiched_and_scaled(self):
        cfg = RunConfig(name="unit", n_grid=[5, 6], trials=3, seed=3)
        report = estimate_constants(cfg)
        self.assertEqual(report.kind, "constants")
        self.assertEqual(len(report.rows), 6)
        for row in report.rows:
            self.assertTrue(row["tsp_exact"])
            self.assertLessEqual(row["hk"], row["comb"] + 1e-6)
            self.assertLessEqual(row["comb"], row["tsp"] + 1e-6)
            self.assertAlmostEqual(row["hk_scaled"], row["hk"] / math.sqrt(row["n"]))
            self.assertLessEqual(row["ratio_hk"], 1.0 + 1e-9)
            self.assertGreaterEqual(row["triangle_copies"], 0)
            self.assertAlmostEqual(row["copy_density"], row["triangle_copies"] / row["n"])
        self.assertEqual(set(report.summary), {"5", "6", "criteria"})
        self.assertEqual(report.summary["5"]["ratio_hk"]["count"], 3)
        self.assertEqual(report.summary["criteria"], {"hk_ratio_below_one": True})

    def test_tours_above_the_dp_cap_are_certified(self):
        X = generate_uniform(17, 2, seed=4)
        tour, exact = best_tour(X, exact_limit=15, seed=4)
        self.assertTrue(exact)
        self.assertLessEqual(tour.length, heuristic_tour(X, 4).length + 1e-9)
        self.assertGreaterEqual(tour.length, held_karp(X).value - 1e-6)
        self.assertAlmostEqual(branch_and_bound(X).tour.length, tour.length, places=9)
        _, flagged = best_tour(X, exact_limit=15, seed=4, certify=False)
        self.assertFalse(flagged)

    def test_triangle_copies_match_exhaustive_count(self):
        eps, D = 0.1, 0.5
        X = generate_uniform(5000, 2, seed=21)
        unit = rescale(X, math.sqrt(X.n))
        template = triangle_template()
        reach = float(template.dist.max()) + 2 * eps
        neighbours = cKDTree(unit.points).query_ball_point(unit.points, r=reach)
        expected = set()
        for i in range(unit.n):
            for j, k in itertools.combinations([v for v in neighbours[i] if v != i], 2):
                for mapping in itertools.permutations((i, j, k)):
                    if verify_copy(unit, template, mapping, eps, D):
                        expected.add(frozenset(mapping))
                        break
        found = find_copies(unit, CopySpec(template, eps, D))
        self.assertGreaterEqual(len(expected), 1)
        self.assertEqual({match.labels for match in found}, expected)
        self.assertEqual(count_triangle_copies(X, eps, D), len(expected))

    def test_hk_criterion_needs_the_interval_below_one(self):
        rows = [{"n": 14, "tsp_exact": True}, {"n": 8, "tsp_exact": True}]
        summary = {"14": {"ratio_hk": {"ci": {"high": 0.99}}}, "8": {"ratio_hk": {"ci": {"high": 1.0}}}}
        self.assertEqual(constants_criteria(rows, summary), {"hk_ratio_below_one": True})
        summary["14"]["ratio_hk"]["ci"]["high"] = 1.0
        self.assertEqual(constants_criteria(rows, summary), {"hk_ratio_below_one": False})
        rows[0]["tsp_exact"] = False
        self.assertEqual(constants_criteria(rows, summary), {"hk_ratio_below_one": True})

    @unittest.skipUnless(ACCEPTANCE_MODE, "solo con TSPLAB_ACCEPTANCE=1")
    def test_acceptance_constants_pass_their_criteria(self):
        report = estimate_constants(load_preset("constants_acceptance"))
        self.assertTrue(report.config.check)
        self.assertEqual(failed_criteria(report), [])
        self.assertLess(report.summary["14"]["ratio_hk"]["ci"]["high"], 1.0)

    def test_three_points_collapse_all_bounds(self):
        report = estimate_constants(RunConfig(name="tri", n_grid=[3], trials=2))
        for row in report.rows:
            self.assertAlmostEqual(row["hk"], row["tsp"])
            self.assertAlmostEqual(row["comb"], row["tsp"])

    def test_reports_are_byte_identical_for_identical_configs(self):
        cfg = RunConfig(name="repeat", n_grid=[5], trials=2, seed=11)
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            csv_a, json_a = write_report(estimate_constants(cfg), a)
            csv_b, json_b = write_report(estimate_constants(cfg), b)
            self.assertEqual(csv_a.name, "repeat_constants.csv")
            self.assertEqual(csv_a.read_bytes(), csv_b.read_bytes())
            self.assertEqual(json_a.read_bytes(), json_b.read_bytes())
            data = json.loads(json_a.read_text(encoding="utf-8"))
        self.assertEqual(data["schema_version"], 1)
        self.assertEqual(data["config"]["seed"], 11)

    def test_trial_seeds(self):
        seeds = trial_seeds(7, 10, 5)
        self.assertEqual(seeds, trial_seeds(7, 10, 5))
        self.assertEqual(len(set(seeds)), 5)
        self.assertNotEqual(seeds, trial_seeds(7, 11, 5))


class Phase6GapTests(unittest.TestCase):
    def test_gap_experiment_on_planted_gadget(self):
        cfg = RunConfig(name="gap", k=8, c=6, copies=1, anchors=6, trials=1, seed=7)
        report = gap_experiment(cfg)
        self.assertEqual(report.summary["trials_kept"], 1)
        self.assertTrue(report.summary["all_comb_clean"])
        self.assertIn("copy_gap", report.summary)
        criteria = report.summary["criteria"]
        self.assertEqual(set(criteria), {"comb_clean", "exact_tours", "spliced_below_tour", "gap_positive"})
        self.assertTrue(criteria["exact_tours"])
        for row in report.rows:
            self.assertTrue(26 + 2 <= row["n"] <= 26 + 6)
            self.assertTrue(row["tour_exact"])
            self.assertEqual(row["spliced_copies"] + row["skipped_copies"], 1)
            self.assertAlmostEqual(row["gap"], row["tour_length"] - row["spliced_value"])

    def test_planted_instance_goes_through_plant_gadget_copies(self):
        X, metas = gap_instance(8, 2, 12, 1.0, seed=3)
        template, _ = build_gadget(8)
        self.assertEqual(len(metas), 2)
        self.assertLessEqual(X.n, 2 * 26 + 12)
        for meta in metas:
            self.assertEqual(list(meta.all_ids), list(range(meta.all_ids[0], meta.all_ids[0] + 26)))
            self.assertTrue(verify_copy(X, template, list(meta.all_ids), eps=0.05, D=1.0))
        base, none = gap_instance(8, 0, 12, 1.0, seed=3)
        self.assertEqual((base.n, none), (12, []))

    def test_heuristic_tours_are_flagged(self):
        cfg = RunConfig(name="fast", k=8, c=6, copies=1, anchors=8, trials=2, seed=7, exact_tours=False)
        report = gap_experiment(cfg)
        for row in report.rows:
            self.assertFalse(row["tour_exact"])
        self.assertFalse(report.summary["criteria"]["exact_tours"])

    def test_without_copies_the_splice_is_the_tour(self):
        cfg = RunConfig(name="nocopy", k=8, copies=0, anchors=6, trials=2, seed=1)
        report = gap_experiment(cfg)
        for row in report.rows:
            self.assertTrue(row["tour_exact"])
            self.assertAlmostEqual(row["spliced_value"], row["tour_length"], places=9)
        self.assertNotIn("copy_gap", report.summary)
        self.assertEqual(failed_criteria(report), ["spliced_below_tour", "gap_positive"])

    @unittest.skipUnless(ACCEPTANCE_MODE, "solo con TSPLAB_ACCEPTANCE=1")
    def test_acceptance_gap_passes_its_criteria(self):
        report = gap_experiment(load_preset("gap_acceptance"))
        self.assertEqual(failed_criteria(report), [])
        self.assertGreater(report.summary["gap"]["ci"]["low"], 0.0)
        for row in report.rows:
            self.assertLess(row["spliced_value"], row["tour_length"])


class Phase6GrowthTests(unittest.TestCase):
    def test_tree_growth_table(self):
        cfg = RunConfig(name="growth", n_grid=[5, 6, 7], trials=10, families=["uniform", "collinear"], seed=2)
        report, table = tree_growth_experiment(cfg)
        self.assertEqual(len(report.rows), 60)
        self.assertEqual(len(table.rows), 6)
        self.assertEqual(set(table.slopes), {"uniform", "collinear"})
        self.assertEqual(report.summary["bound"], "HK")
        self.assertEqual(set(report.summary["criteria"]), {"uniform_nondecreasing", "collinear_flat"})
        self.assertTrue(report.summary["criteria"]["collinear_flat"])
        for row in report.rows:
            self.assertGreaterEqual(row["leaves"], 1)

    def test_growth_criteria(self):
        def table(uniform: list[float], collinear: list[float]) -> GrowthTable:
            rows = [GrowthRow("uniform", 10 + 2 * i, 10, m, m, m) for i, m in enumerate(uniform)]
            rows += [GrowthRow("collinear", 10 + 2 * i, 10, m, m, m) for i, m in enumerate(collinear)]
            return GrowthTable(tuple(rows), {})

        self.assertEqual(
            growth_criteria(table([1, 3, 3, 8], [1, 1, 1, 1])),
            {"uniform_nondecreasing": True, "collinear_flat": True},
        )
        self.assertEqual(
            growth_criteria(table([1, 5, 3, 8], [1, 1, 2, 1])),
            {"uniform_nondecreasing": False, "collinear_flat": False},
        )
        single = GrowthTable((GrowthRow("collinear", 8, 10, 1, 1, 1),), {})
        self.assertEqual(growth_criteria(single), {"collinear_flat": True})

    def test_tree_growth_needs_ten_trials(self):
        cfg = RunConfig(name="short", n_grid=[5, 6, 7], trials=5)
        with self.assertRaises(InvalidArgumentError):
            tree_growth_experiment(cfg)

    @unittest.skipUnless(ACCEPTANCE_MODE, "solo con TSPLAB_ACCEPTANCE=1")
    def test_acceptance_growth_passes_its_criteria(self):
        report, _ = tree_growth_experiment(load_preset("growth_acceptance"))
        self.assertEqual(failed_criteria(report), [])


class Phase6ConfigTests(unittest.TestCase):
    def test_bundled_presets(self):
        presets = load_presets()
        for name in ("constants_desk", "gap_desk", "growth_desk"):
            self.assertIn(name, presets)
        gap = load_preset("gap_desk")
        self.assertEqual(gap.name, "gap_desk")
        self.assertEqual(gap.k, 8)
        with self.assertRaises(InvalidArgumentError):
            load_preset("no_such_preset")

    def test_invalid_preset_files_are_ignored(self):
        with tempfile.TemporaryDirectory() as tmp:
            broken = Path(tmp) / "broken.yaml"
            broken.write_text("presets:\n  bad:\n    n_grid: [1]\n", encoding="utf-8")
            self.assertEqual(load_presets(broken), {})
            self.assertEqual(load_presets(Path(tmp) / "missing.yaml"), {})

    def test_run_config_validation(self):
        self.assertEqual(RunConfig(n_grid=[9, 5, 9]).n_grid, [5, 9])
        with self.assertRaises(ValidationError):
            RunConfig(n_grid=[2])
        with self.assertRaises(ValidationError):
            RunConfig(bound="exact")
        with self.assertRaises(InvalidArgumentError):
            RunConfig(bound="comb", c=4).bound_spec()


class Phase6StatsTests(unittest.TestCase):
    def test_constant_column_has_degenerate_interval(self):
        interval = bootstrap_mean([2.5] * 8)
        self.assertEqual((interval.mean, interval.low, interval.high), (2.5, 2.5, 2.5))
        self.assertFalse(interval.excludes(2.5))
        self.assertTrue(interval.excludes(3.0))

    def test_bootstrap_is_seeded(self):
        values = np.random.default_rng(0).random(30)
        self.assertEqual(bootstrap_mean(values, seed=4), bootstrap_mean(values, seed=4))
        summary = summarize_column(values)
        self.assertLessEqual(summary.interval.low, summary.mean)
        self.assertGreaterEqual(summary.interval.high, summary.mean)
        self.assertAlmostEqual(summary.std, float(np.std(values, ddof=1)))

    def test_interval_is_scipy_percentile_bootstrap(self):
        values = np.random.default_rng(5).normal(1.0, 0.3, size=40)
        interval = bootstrap_mean(values, resamples=500, seed=9)
        reference = stats.bootstrap(
            (values,),
            np.mean,
            n_resamples=500,
            confidence_level=0.95,
            method="percentile",
            random_state=np.random.default_rng(9),
        ).confidence_interval
        self.assertAlmostEqual(interval.low, reference.low)
        self.assertAlmostEqual(interval.high, reference.high)
        self.assertLess(interval.low, interval.mean)
        self.assertGreater(interval.high, interval.mean)

    def test_invalid_inputs(self):
        with self.assertRaises(InvalidArgumentError):
            bootstrap_mean([])
        with self.assertRaises(InvalidArgumentError):
            bootstrap_mean([1.0, 2.0], level=1.5)


class Phase6FormatTests(unittest.TestCase):
    def test_points_text_format(self):
        X = generate_uniform(7, 3, seed=2)
        parsed = parse_points("# instancia\n" + format_points(X))
        self.assertTrue(np.array_equal(parsed.points, X.points))
        with self.assertRaises(InvalidArgumentError):
            parse_points("3 2\n0 0\n1 1\n")
        with self.assertRaises(InvalidArgumentError):
            parse_points("")

    def test_tsplib_import(self):
        X = parse_tsplib(TSPLIB_SAMPLE)
        self.assertEqual(X.n, 4)
        self.assertAlmostEqual(exact_tsp_dp(X).length, 14.0)
        with self.assertRaises(InvalidArgumentError):
            parse_tsplib(TSPLIB_SAMPLE.replace("EUC_2D", "GEO"))
        with self.assertRaises(InvalidArgumentError):
            parse_tsplib(TSPLIB_SAMPLE.replace("DIMENSION : 4", "DIMENSION : 5"))

    def test_gadget_meta_file(self):
        _, meta = build_gadget(6)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_gadget_meta(meta, Path(tmp) / "meta.json")
            loaded = load_gadget_meta(path)
            (Path(tmp) / "bad.json").write_text("{not json", encoding="utf-8")
            with self.assertRaises(InvalidArgumentError):
                load_model(Path(tmp) / "bad.json", GadgetMetaModel)
        self.assertEqual(loaded.all_ids, meta.all_ids)
        self.assertEqual(loaded.k, 6)

    def test_models(self):
        comb = CombModel(handle=[0, 1, 2], teeth=[[0, 3], [1, 4], [2, 5]]).to_comb()
        self.assertEqual(comb, Comb.of({0, 1, 2}, [{0, 3}, {1, 4}, {2, 5}]))
        with self.assertRaises(InvalidArgumentError):
            CombModel(handle=[0, 1, 2], teeth=[[0, 3]]).to_comb()
        with self.assertRaises(ValidationError):
            TourModel(order=[0, 2, 2], length=1.0)

    def test_csv_and_svg_outputs(self):
        rows = [{"n": 5, "value": 1.5}, {"n": 6, "value": 1.25}]
        with tempfile.TemporaryDirectory() as tmp:
            csv_path = write_csv(rows, Path(tmp) / "rows.csv")
            lines = csv_path.read_text(encoding="utf-8").splitlines()
            svg_path = write_svg_line_chart(rows, "n", "value", Path(tmp) / "chart.svg")
            svg = svg_path.read_text(encoding="utf-8")
        self.assertEqual(lines[0], "schema_version,n,value")
        self.assertEqual(lines[1], "1,5,1.5")
        self.assertTrue(svg.startswith("<svg"))
        self.assertIn("<polyline", svg)
        with self.assertRaises(InvalidArgumentError):
            write_svg_line_chart([], "n", "value", "unused.svg")


class Phase6CliTests(unittest.TestCase):
    def test_gen_writes_points(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "points.txt"
            code, _ = run_cli("gen", "--n", "5", "--seed", "1", "--out", str(out))
            self.assertEqual(code, EXIT_OK)
            self.assertEqual(parse_points(out.read_text(encoding="utf-8")).n, 5)

    def test_gadget_exit_codes(self):
        code, _ = run_cli("gadget", "--k", "12", "--c", "6")
        self.assertEqual(code, EXIT_INVALID)
        with tempfile.TemporaryDirectory() as tmp:
            code, output = run_cli("gadget", "--k", "12", "--c", "6", "--no-strict", "--out", tmp)
            self.assertEqual(code, EXIT_OK)
            self.assertTrue((Path(tmp) / "gadget_meta.json").exists())
            self.assertTrue((Path(tmp) / "gadget_support.edgelist").exists())
        self.assertIn("gap", json.loads(output))

    def test_missing_points_file_is_an_io_failure(self):
        code, _ = run_cli("hk", "--points", "/nonexistent/dir/points.txt")
        self.assertEqual(code, EXIT_IO)

    def test_hk_and_bnb(self):
        with tempfile.TemporaryDirectory() as tmp:
            lp_path = Path(tmp) / "hk.lp"
            code, output = run_cli("hk", "--n", "6", "--dump-lp", str(lp_path))
            self.assertEqual(code, EXIT_OK)
            self.assertTrue(lp_path.exists())
        self.assertEqual(json.loads(output)["n"], 6)

        code, output = run_cli("bnb", "--n", "6", "--seed", "2")
        self.assertEqual(code, EXIT_OK)
        data = json.loads(output)
        self.assertAlmostEqual(data["length"], exact_tsp_dp(generate_uniform(6, 2, 2)).length, places=6)

    def test_combs_with_given_comb_and_tour_output(self):
        with tempfile.TemporaryDirectory() as tmp:
            comb_path = Path(tmp) / "comb.json"
            comb_path.write_text(json.dumps({"handle": [0, 1, 2], "teeth": [[0, 3], [1, 4], [2, 5]]}), encoding="utf-8")
            code, output = run_cli("combs", "--n", "7", "--comb", str(comb_path))
            self.assertEqual(code, EXIT_OK)
            data = json.loads(output)
            self.assertEqual(data["given_comb_rhs"], 10)
            self.assertLessEqual(data["hk"], data["comb"] + 1e-6)

            tour_path = Path(tmp) / "tour.json"
            code, _ = run_cli("bnb", "--n", "6", "--out", str(tour_path))
            self.assertEqual(code, EXIT_OK)
            tour = load_model(tour_path, TourModel)
            self.assertEqual(sorted(tour.order), list(range(6)))

    def test_experiment_commands(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, output = run_cli("constants", "--n", "5", "--trials", "2", "--out", tmp, "--format", "csv")
            self.assertEqual(code, EXIT_OK)
            self.assertTrue(list(Path(tmp).glob("*.csv")))
            self.assertTrue(list(Path(tmp).glob("*.svg")))
        self.assertTrue(output.startswith("n,d,c,seed"))

        code, _ = run_cli("growth", "--n", "5", "6", "--trials", "10")
        self.assertEqual(code, EXIT_INVALID)

    def test_checked_experiments_exit_on_failed_criteria(self):
        with tempfile.TemporaryDirectory() as tmp:
            args = ("gap", "--copies", "0", "--anchors", "6", "--trials", "2", "--out", tmp)
            code, _ = run_cli(*args)
            self.assertEqual(code, EXIT_OK)
            code, output = run_cli(*args, "--check")
            self.assertEqual(code, EXIT_INVARIANT)
        data = json.loads(output)
        self.assertTrue(data["config"]["check"])
        self.assertFalse(data["summary"]["criteria"]["gap_positive"])

        with tempfile.TemporaryDirectory() as tmp:
            code, _ = run_cli("constants", "--n", "5", "--trials", "2", "--out", tmp, "--check")
            self.assertEqual(code, EXIT_OK)


if __name__ == "__main__":
    unittest.main()

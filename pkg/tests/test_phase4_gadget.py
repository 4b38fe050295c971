import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from app.config import ACCEPTANCE_MODE
from app.combs import separate_combs, triangle_decompose
from app.errors import InvalidArgumentError
from app.gadget_solution import (
    _choose_entries,
    admissible_ring_edges,
    build_gadget_solution,
    dump_support_graph,
    entry_separation,
    local_lengths,
    splice,
    verify_gadget_lemmas,
)
from app.instance import PointSet, build_gadget
from app.lp_core import check_feasible
from app.tsp_solvers import forced_cycle

RING_LIMIT = 10 * math.pi + 6


def gadget_with_anchors(k: int, anchors: list[tuple[float, float]]):
    gadget, meta = build_gadget(k)
    X = PointSet(np.vstack([gadget.points, np.array(anchors)]))
    return X, meta


class Phase4GadgetSolutionTests(unittest.TestCase):
    def test_single_entry_solution_is_structured(self):
        _, meta = build_gadget(16)
        sol = build_gadget_solution(meta, 6)
        self.assertEqual(sol.entry_mode, 1)
        self.assertEqual(len(sol.entry_edges), 1)
        self.assertGreaterEqual(sol.separation, 5)
        self.assertEqual(len(sol.triangles), 4)

        degrees = sol.internal_degrees()
        for v in range(3 * 16 + 2):
            expected = 1.0 if v in sol.entry_vertices else 2.0
            self.assertAlmostEqual(float(degrees[v]), expected)

        closed = sol.closed()
        self.assertTrue(check_feasible(closed).passed)
        self.assertEqual(len(triangle_decompose(closed).triangles), 4)

    def test_double_entry_solution_is_structured(self):
        _, meta = build_gadget(16)
        sol = build_gadget_solution(meta, 6, entry_mode=2)
        self.assertEqual(len(sol.entry_edges), 2)
        self.assertEqual(len(set(sol.entry_vertices)), 4)
        self.assertGreaterEqual(entry_separation(16, sol.entry_vertices), 5)
        self.assertTrue(check_feasible(sol.closed()).passed)

    def test_strict_mode_requires_a_wide_ring(self):
        _, meta = build_gadget(12)
        with self.assertRaises(InvalidArgumentError):
            build_gadget_solution(meta, 6)
        sol = build_gadget_solution(meta, 6, strict=False)
        self.assertEqual(sol.separation, 4)

    def test_invalid_arguments(self):
        _, meta = build_gadget(16)
        with self.assertRaises(InvalidArgumentError):
            build_gadget_solution(meta, 1)
        with self.assertRaises(InvalidArgumentError):
            build_gadget_solution(meta, 6, entry_mode=3)
        with self.assertRaises(InvalidArgumentError):
            build_gadget_solution(meta, 6, entry_sites=[0], strict=False)
        with self.assertRaises(InvalidArgumentError):
            build_gadget_solution(meta, 6, entry_sites=[2])

    def test_admissible_sites_avoid_triangles(self):
        self.assertEqual(admissible_ring_edges(8, 2), [4, 12])
        for p in admissible_ring_edges(16, 5):
            self.assertNotIn(p, (0, 16))
            self.assertGreaterEqual(entry_separation(16, (p, (p + 1) % 32)), 5)

    def test_ring_without_entry_sites_is_an_argument_error(self):
        gadget, _ = build_gadget(8)
        self.assertEqual(admissible_ring_edges(8, 3), [])
        with self.assertRaises(InvalidArgumentError):
            _choose_entries(8, 3, [np.zeros(2), np.ones(2)], gadget.points[:16], 1, 6)


class Phase4LocalGapTests(unittest.TestCase):
    def test_local_lp_length_tracks_ring_limit(self):
        for k, c in ((12, 6), (16, 6), (20, 8)):
            _, meta = build_gadget(k)
            report = local_lengths(meta, build_gadget_solution(meta, c, strict=False))
            with self.subTest(k=k, c=c):
                self.assertFalse(report.exact)
                self.assertLessEqual(abs(report.lp_length_local - RING_LIMIT), 2 * c / k * RING_LIMIT)
                self.assertGreater(report.gap, 0.0)
                self.assertAlmostEqual(report.gap, report.tour_length_local - report.lp_length_local)

    def test_exact_local_tour_is_not_longer_than_heuristic(self):
        gadget, meta = build_gadget(4)
        sol = build_gadget_solution(meta, 2, strict=False)
        report = local_lengths(meta, sol)
        self.assertTrue(report.exact)
        heuristic, order = forced_cycle(gadget.dist, list(sol.external_pairs), exact=False)
        self.assertLessEqual(report.tour_length_local, heuristic + 1e-9)
        self.assertEqual(sorted(order), list(range(gadget.n)))

    def test_local_lengths_scale_with_the_gadget(self):
        _, base_meta = build_gadget(4)
        base = local_lengths(base_meta, build_gadget_solution(base_meta, 2, strict=False))
        for factor in (0.5, 2.0, 10.0):
            _, meta = build_gadget(4, scale=factor)
            report = local_lengths(meta, build_gadget_solution(meta, 2, strict=False))
            with self.subTest(factor=factor):
                self.assertTrue(report.exact)
                self.assertAlmostEqual(report.lp_length_local / (factor * base.lp_length_local), 1.0, delta=1e-6)
                self.assertAlmostEqual(report.tour_length_local / (factor * base.tour_length_local), 1.0, delta=1e-6)

    def test_gadget_lemmas_hold_on_the_closed_solution(self):
        cs = (6, 8, 10) if ACCEPTANCE_MODE else (6, 8)
        _, meta = build_gadget(12)
        for c in cs:
            sol = build_gadget_solution(meta, c, strict=False)
            report = verify_gadget_lemmas(sol, c)
            with self.subTest(c=c):
                self.assertTrue(report.passed)
                self.assertEqual(report.triangles, 4)
                self.assertEqual(report.weight_one_paths, 4)
                self.assertEqual(report.gap_three_comb_violations, 0)
                self.assertEqual(report.gap_five_comb_violations, 0)
                self.assertGreater(report.combs_checked, 0)

    def test_dump_support_graph(self):
        _, meta = build_gadget(8)
        sol = build_gadget_solution(meta, 6, strict=False)
        with tempfile.TemporaryDirectory() as tmp:
            path = dump_support_graph(sol.closed(), Path(tmp) / "support.edgelist")
            lines = path.read_text(encoding="utf-8").splitlines()
        self.assertEqual(len(lines), len(sol.closed().support()))


class Phase4SpliceTests(unittest.TestCase):
    def test_single_crossing_splice_beats_the_tour(self):
        X, meta = gadget_with_anchors(8, [(-2.0, 7.0), (0.0, 9.0), (2.0, 7.0)])
        inside = [4, 3, 2, 1, 17, 18, 19, 20, 25, 21, 22, 23, 16, 24, 0, 15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5]
        order = inside + [26, 27, 28]

        result = splice(X, order, [meta], c=6, strict=False)
        self.assertEqual(len(result.spliced), 1)
        self.assertEqual(result.skipped, ())
        copy = result.spliced[0]
        self.assertEqual(copy.entry_mode, 1)
        self.assertEqual(copy.entry_edges, ((4, 5),))
        self.assertTrue(check_feasible(result.solution).passed)
        self.assertLess(result.value, result.tour_length)
        self.assertGreater(copy.gap, 0.0)
        self.assertAlmostEqual(result.tour_length - result.value, copy.gap, places=9)
        self.assertIsNone(separate_combs(result.solution, 6))

    def test_double_crossing_splice_stays_feasible(self):
        X, meta = gadget_with_anchors(8, [(1.0, 7.0), (1.0, -7.0), (-1.0, -7.0), (-1.0, 7.0)])
        first = [5, 6, 7, 8, 25, 20, 19, 18, 17, 16, 24, 0, 1, 2, 3, 4]
        second = [12, 11, 10, 9, 21, 22, 23, 15, 14, 13]
        order = first + [26, 27] + second + [28, 29]

        result = splice(X, order, [meta], c=6, strict=False)
        self.assertEqual(len(result.spliced), 1)
        copy = result.spliced[0]
        self.assertEqual(copy.entry_mode, 2)
        self.assertEqual(len(copy.entry_edges), 2)
        self.assertTrue(check_feasible(result.solution).passed)
        self.assertAlmostEqual(result.solution.value(X), result.value)

    def test_splice_without_copies_returns_the_tour(self):
        X, _ = gadget_with_anchors(8, [(0.0, 9.0)])
        order = list(range(X.n))
        result = splice(X, order, [], c=6)
        self.assertAlmostEqual(result.value, result.tour_length)
        self.assertTrue(result.solution.is_integral())

    def test_strict_splice_rejects_narrow_rings(self):
        X, meta = gadget_with_anchors(8, [(-2.0, 7.0), (0.0, 9.0), (2.0, 7.0)])
        inside = [4, 3, 2, 1, 17, 18, 19, 20, 25, 21, 22, 23, 16, 24, 0, 15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5]
        with self.assertRaises(InvalidArgumentError):
            splice(X, inside + [26, 27, 28], [meta], c=6, strict=True)

    def test_bad_tour_is_rejected(self):
        X, meta = gadget_with_anchors(8, [(0.0, 9.0)])
        with self.assertRaises(InvalidArgumentError):
            splice(X, list(range(X.n - 1)), [meta], c=6, strict=False)


if __name__ == "__main__":
    unittest.main()

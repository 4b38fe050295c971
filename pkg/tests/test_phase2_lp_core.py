import itertools
import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from app.config import ACCEPTANCE_MODE
from app.errors import InvalidArgumentError, InvariantError
from app.instance import PointSet, generate_uniform, rescale
from app.combs import random_half_integral_solution
from app.lp_core import (
    CutPool,
    EdgeFixings,
    FractionalSolution,
    BoundStatus,
    between,
    build_model,
    check_feasible,
    cut_value,
    edge_index,
    held_karp,
    min_cut,
    subtour_row,
    subtour_violations,
    write_lp_file,
)
from app.simplex import SimplexStatus, solve_bounded_lp


def full_subtour_lp(X: PointSet) -> float:
    n = X.n
    index = edge_index(n)
    rows, cols = np.triu_indices(n, 1)
    costs = X.dist[rows, cols]
    A_eq = np.zeros((n, costs.size))
    for (i, j), col in index.items():
        A_eq[i, col] = A_eq[j, col] = 1.0
    A_ub = []
    others = range(1, n)
    for size in range(0, n - 1):
        for rest in itertools.combinations(others, size):
            S = {0, *rest}
            row = np.zeros(costs.size)
            for (i, j), col in index.items():
                if (i in S) != (j in S):
                    row[col] = -1.0
            A_ub.append(row)
    result = linprog(
        costs,
        A_ub=np.array(A_ub),
        b_ub=np.full(len(A_ub), -2.0),
        A_eq=A_eq,
        b_eq=np.full(n, 2.0),
        bounds=[(0.0, 1.0)] * costs.size,
        method="highs",
    )
    assert result.status == 0
    return float(result.fun)


class Phase2SimplexTests(unittest.TestCase):
    def test_bounded_variables_reach_optimum(self):
        result = solve_bounded_lp(
            c=np.array([-1.0, -1.0]),
            A=np.array([[1.0, 1.0]]),
            senses=["<="],
            b=np.array([1.5]),
            lower=np.zeros(2),
            upper=np.ones(2),
        )
        self.assertEqual(result.status, SimplexStatus.OPTIMAL)
        self.assertAlmostEqual(result.objective, -1.5)
        self.assertAlmostEqual(float(result.x.sum()), 1.5)

    def test_equality_and_greater_rows(self):
        result = solve_bounded_lp(
            c=np.array([1.0, 2.0, 3.0]),
            A=np.array([[1.0, 1.0, 1.0], [0.0, 1.0, 1.0]]),
            senses=["=", ">="],
            b=np.array([2.0, 1.0]),
            lower=np.zeros(3),
            upper=np.ones(3),
        )
        self.assertEqual(result.status, SimplexStatus.OPTIMAL)
        self.assertAlmostEqual(result.objective, 3.0)

    def test_infeasible_rows_are_reported(self):
        result = solve_bounded_lp(
            c=np.array([1.0]),
            A=np.array([[1.0]]),
            senses=[">="],
            b=np.array([2.0]),
            lower=np.zeros(1),
            upper=np.ones(1),
        )
        self.assertEqual(result.status, SimplexStatus.INFEASIBLE)
        self.assertTrue(math.isinf(result.objective))


class Phase2HeldKarpTests(unittest.TestCase):
    def test_triangle_bound_is_perimeter(self):
        X = PointSet(np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]]))
        result = held_karp(X)
        self.assertTrue(result.optimal)
        self.assertAlmostEqual(result.value, 12.0)

    def test_matches_full_subtour_formulation(self):
        sizes = range(5, 11) if ACCEPTANCE_MODE else range(5, 9)
        seeds = range(10) if ACCEPTANCE_MODE else range(3)
        for n in sizes:
            for seed in seeds:
                X = generate_uniform(n, 2, seed)
                result = held_karp(X)
                with self.subTest(n=n, seed=seed):
                    self.assertTrue(result.optimal)
                    self.assertTrue(check_feasible(result.solution).passed)
                    self.assertAlmostEqual(result.value, full_subtour_lp(X), delta=1e-6 * max(1.0, result.value))

    def test_solution_is_feasible_and_value_matches_costs(self):
        X = generate_uniform(9, 3, seed=5)
        result = held_karp(X)
        report = check_feasible(result.solution)
        self.assertTrue(report.passed)
        self.assertLessEqual(report.max_degree_violation, 1e-6)
        self.assertGreaterEqual(report.min_cut_value, 2.0 - 1e-6)
        self.assertAlmostEqual(result.solution.value(X), result.value, places=6)
        self.assertEqual(subtour_violations(result.solution), [])

    def test_bound_scales_with_the_instance(self):
        for seed in range(2):
            X = generate_uniform(8, 2, seed)
            base = held_karp(X).value
            for factor in (0.5, 2.0, 10.0):
                with self.subTest(seed=seed, factor=factor):
                    scaled = held_karp(rescale(X, factor)).value
                    self.assertAlmostEqual(scaled / (factor * base), 1.0, delta=1e-6)

    def test_fixings_raise_the_bound(self):
        X = generate_uniform(7, 2, seed=2)
        base = held_karp(X)
        far = max(((i, j) for i in range(7) for j in range(i + 1, 7)), key=lambda e: X.dist[e])
        forced = held_karp(X, EdgeFixings.of(include=[far]))
        self.assertTrue(forced.optimal)
        self.assertGreaterEqual(forced.value, base.value - 1e-9)
        self.assertAlmostEqual(forced.solution.weight(*far), 1.0)

    def test_conflicting_fixings_are_infeasible(self):
        X = generate_uniform(6, 2, seed=1)
        both = held_karp(X, EdgeFixings.of(include=[(0, 1)], exclude=[(0, 1)]))
        self.assertEqual(both.status, BoundStatus.INFEASIBLE)
        self.assertTrue(math.isinf(both.value))
        crowded = held_karp(X, EdgeFixings.of(include=[(0, 1), (0, 2), (0, 3)]))
        self.assertEqual(crowded.status, BoundStatus.INFEASIBLE)

    def test_closed_subtour_fixing_is_infeasible(self):
        X = generate_uniform(6, 2, seed=4)
        result = held_karp(X, EdgeFixings.of(include=[(0, 1), (1, 2), (0, 2)]))
        self.assertEqual(result.status, BoundStatus.INFEASIBLE)
        self.assertIsNone(result.solution)

    def test_passed_pool_is_not_mutated(self):
        X = generate_uniform(8, 2, seed=6)
        pool = CutPool()
        result = held_karp(X, pool=pool)
        self.assertEqual(len(pool), 0)
        self.assertEqual(len(result.pool), result.cuts_added)
        warm = held_karp(X, pool=result.pool)
        self.assertEqual(warm.cuts_added, 0)
        self.assertAlmostEqual(warm.value, result.value, places=7)

    def test_duplicate_pool_row_is_an_invariant_breach(self):
        pool = CutPool()
        key = ("subtour", (0, 1))
        pool.add(key, subtour_row(5, {0, 1}))
        with self.assertRaises(InvariantError):
            pool.add(key, subtour_row(5, {0, 1}))


class Phase2CutTests(unittest.TestCase):
    def test_cut_value_and_min_cut_on_two_triangles(self):
        x = FractionalSolution.from_edges(
            6, {(0, 1): 1.0, (1, 2): 1.0, (0, 2): 1.0, (3, 4): 1.0, (4, 5): 1.0, (3, 5): 1.0}
        )
        self.assertAlmostEqual(cut_value(x, {0, 1, 2}), 0.0)
        side, value = min_cut(x)
        self.assertEqual(side, frozenset({0, 1, 2}))
        self.assertEqual(value, 0.0)
        self.assertEqual(subtour_violations(x), [frozenset({0, 1, 2})])
        self.assertFalse(check_feasible(x).passed)

    def test_cut_of_a_union_splits_into_its_parts(self):
        rng = np.random.default_rng(11)
        solutions = [random_half_integral_solution(6 + seed % 5, seed) for seed in range(6)]
        solutions += [held_karp(generate_uniform(8, 2, seed)).solution for seed in range(3)]
        for pos, x in enumerate(solutions):
            for _ in range(20):
                labels = rng.integers(0, 3, size=x.n)
                A = [v for v in range(x.n) if labels[v] == 0]
                B = [v for v in range(x.n) if labels[v] == 1]
                with self.subTest(solution=pos, A=A, B=B):
                    expected = cut_value(x, A) + cut_value(x, B) - 2.0 * between(x, A, B)
                    self.assertAlmostEqual(cut_value(x, A + B), expected, places=9)
        with self.assertRaises(InvalidArgumentError):
            between(solutions[0], [0, 1], [1, 2])

    def test_tour_is_feasible(self):
        x = FractionalSolution.from_tour([0, 3, 1, 4, 2])
        self.assertTrue(x.is_integral())
        self.assertTrue(check_feasible(x).passed)
        self.assertAlmostEqual(min_cut(x)[1], 2.0)

    def test_write_lp_file(self):
        X = generate_uniform(5, 2, seed=0)
        model = build_model(X, EdgeFixings.of(exclude=[(0, 1)]), [subtour_row(5, {0, 1})])
        with tempfile.TemporaryDirectory() as tmp:
            path = write_lp_file(model, Path(tmp) / "hk.lp")
            lines = path.read_text(encoding="utf-8").splitlines()
        for header in ("Minimize", "Subject To", "Bounds", "End"):
            self.assertIn(header, lines)
        start, stop = lines.index("Subject To"), lines.index("Bounds")
        self.assertEqual(stop - start - 1, len(model.rows))
        self.assertIn(" 0 <= x_0_1 <= 0", lines)


if __name__ == "__main__":
    unittest.main()

"""Held-Karp LP: edge-indexed models, subtour separation and the cutting-plane loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

from app.config import CUT_VIOLATION_TOL, LP_TOLERANCE, logger
from app.errors import InvalidArgumentError, InvariantError
from app.instance import PointSet
from app.simplex import SimplexStatus, solve_bounded_lp

Edge = tuple[int, int]

SUPPORT_TOL = 1e-9
MAX_CUTTING_ROUNDS = 5000


def edge(i: int, j: int) -> Edge:
    if i == j:
        raise InvalidArgumentError(f"Arista degenerada ({i}, {j}).")
    return (i, j) if i < j else (j, i)


@lru_cache(maxsize=64)
def edge_list(n: int) -> tuple[Edge, ...]:
    """All unordered pairs of 0..n-1 in lexicographic order; the LP column order."""
    rows, cols = np.triu_indices(n, 1)
    return tuple(zip(rows.tolist(), cols.tolist()))


@lru_cache(maxsize=64)
def edge_index(n: int) -> dict[Edge, int]:
    return {e: pos for pos, e in enumerate(edge_list(n))}


@dataclass(frozen=True, eq=False)
class FractionalSolution:
    """Edge weights x_ij on the complete graph, stored as a symmetric matrix."""

    n: int
    matrix: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.shape != (self.n, self.n):
            raise InvalidArgumentError(f"Matriz de pesos {matrix.shape} para n={self.n}.")
        matrix = (matrix + matrix.T) / 2.0
        np.fill_diagonal(matrix, 0.0)
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def from_edges(cls, n: int, weights: Mapping[Edge, float]) -> "FractionalSolution":
        matrix = np.zeros((n, n))
        for (i, j), w in weights.items():
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise InvalidArgumentError(f"Arista ({i}, {j}) fuera de rango.")
            matrix[i, j] = matrix[j, i] = float(w)
        return cls(n, matrix)

    @classmethod
    def from_vector(cls, n: int, values: np.ndarray) -> "FractionalSolution":
        rows, cols = np.triu_indices(n, 1)
        matrix = np.zeros((n, n))
        matrix[rows, cols] = values
        matrix[cols, rows] = values
        return cls(n, matrix)

    @classmethod
    def from_tour(cls, order: Sequence[int]) -> "FractionalSolution":
        n = len(order)
        matrix = np.zeros((n, n))
        for pos, u in enumerate(order):
            v = order[(pos + 1) % n]
            matrix[u, v] = matrix[v, u] = 1.0
        return cls(n, matrix)

    def weight(self, i: int, j: int) -> float:
        return float(self.matrix[i, j])

    def vector(self) -> np.ndarray:
        rows, cols = np.triu_indices(self.n, 1)
        return self.matrix[rows, cols].copy()

    def support(self, tol: float = SUPPORT_TOL) -> dict[Edge, float]:
        rows, cols = np.nonzero(np.triu(self.matrix, 1) > tol)
        return {(int(i), int(j)): float(self.matrix[i, j]) for i, j in zip(rows, cols)}

    def support_graph(self, tol: float = SUPPORT_TOL) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_weighted_edges_from((i, j, w) for (i, j), w in self.support(tol).items())
        return graph

    def degrees(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    def value(self, X: PointSet) -> float:
        return float(np.triu(self.matrix * X.dist, 1).sum())

    def is_integral(self, tol: float = 1e-6) -> bool:
        return bool(np.all(np.minimum(np.abs(self.matrix), np.abs(self.matrix - 1.0)) <= tol))


def _mask(n: int, S: Iterable[int]) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    mask[list(S)] = True
    return mask


def cut_value(x: FractionalSolution, S: Iterable[int]) -> float:
    """x(delta(S))."""
    mask = _mask(x.n, S)
    return float(x.matrix[np.ix_(mask, ~mask)].sum())


def between(x: FractionalSolution, A: Iterable[int], B: Iterable[int]) -> float:
    """x(e(A, B)) for disjoint A and B."""
    a = _mask(x.n, A)
    b = _mask(x.n, B)
    if np.any(a & b):
        raise InvalidArgumentError("e(A, B) requiere conjuntos disjuntos.")
    return float(x.matrix[np.ix_(a, b)].sum())


def inside(x: FractionalSolution, S: Iterable[int]) -> float:
    """x(E[S])."""
    mask = _mask(x.n, S)
    return float(np.triu(x.matrix[np.ix_(mask, mask)], 1).sum())


@dataclass(frozen=True)
class EdgeFixings:
    include: frozenset[Edge] = frozenset()
    exclude: frozenset[Edge] = frozenset()

    @classmethod
    def of(cls, include: Iterable[Edge] = (), exclude: Iterable[Edge] = ()) -> "EdgeFixings":
        return cls(frozenset(edge(*e) for e in include), frozenset(edge(*e) for e in exclude))

    def with_include(self, e: Edge) -> "EdgeFixings":
        return EdgeFixings(self.include | {edge(*e)}, self.exclude)

    def with_exclude(self, e: Edge) -> "EdgeFixings":
        return EdgeFixings(self.include, self.exclude | {edge(*e)})

    def conflicts(self, n: int) -> str | None:
        """Reason the fixings admit no tour by simple counting, else None."""
        if self.include & self.exclude:
            return "arista incluida y excluida a la vez"
        included = np.zeros(n, dtype=int)
        excluded = np.zeros(n, dtype=int)
        for i, j in self.include:
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidArgumentError(f"Arista fijada ({i}, {j}) fuera de rango.")
            included[[i, j]] += 1
        for i, j in self.exclude:
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidArgumentError(f"Arista fijada ({i}, {j}) fuera de rango.")
            excluded[[i, j]] += 1
        if np.any(included > 2):
            return "vertice con mas de dos aristas incluidas"
        if np.any(excluded > n - 3):
            return "vertice con menos de dos aristas disponibles"
        return None


@dataclass(frozen=True)
class Row:
    """One LP row sum(coefs * x[indices]) (sense) rhs over edge columns."""

    name: str
    indices: tuple[int, ...]
    coefs: tuple[float, ...]
    sense: str
    rhs: float


def subtour_row(n: int, S: Iterable[int]) -> Row:
    mask = _mask(n, S)
    index = edge_index(n)
    cols = sorted(index[edge(int(i), int(j))] for i in np.nonzero(mask)[0] for j in np.nonzero(~mask)[0])
    return Row(name="subtour", indices=tuple(cols), coefs=(1.0,) * len(cols), sense=">=", rhs=2.0)


def canonical_side(n: int, S: Iterable[int]) -> frozenset[int]:
    """The side of the cut (S, V \\ S) that contains vertex 0."""
    side = frozenset(int(v) for v in S)
    return side if 0 in side else frozenset(range(n)) - side


class CutPool:
    """Rows added by separation, keyed so that each cut enters the pool once."""

    def __init__(self) -> None:
        self._rows: dict[tuple, Row] = {}

    def __len__(self) -> int:
        return len(self._rows)

    def __contains__(self, key: tuple) -> bool:
        return key in self._rows

    def add(self, key: tuple, row: Row) -> None:
        if key in self._rows:
            raise InvariantError(f"La fila {key[0]} ya estaba en el pool y sigue violada.")
        self._rows[key] = row

    def rows(self) -> list[Row]:
        return list(self._rows.values())

    def keys(self) -> list[tuple]:
        return list(self._rows.keys())

    def copy(self) -> "CutPool":
        pool = CutPool()
        pool._rows = dict(self._rows)
        return pool


@dataclass(frozen=True, eq=False)
class LPModel:
    n: int
    costs: np.ndarray
    rows: tuple[Row, ...]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        ncols = self.n * (self.n - 1) // 2
        if self.costs.shape != (ncols,):
            raise InvalidArgumentError("Vector de costos con longitud incorrecta.")
        for row in self.rows:
            if any(not (0 <= c < ncols) for c in row.indices) or not math.isfinite(row.rhs):
                raise InvalidArgumentError(f"Fila {row.name} mal formada.")

    def matrix(self) -> np.ndarray:
        A = np.zeros((len(self.rows), self.costs.size))
        for r, row in enumerate(self.rows):
            np.add.at(A[r], list(row.indices), list(row.coefs))
        return A


class BoundStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class BoundResult:
    value: float
    solution: FractionalSolution | None
    cuts_added: int
    iterations: int
    status: BoundStatus
    pool: CutPool | None = None

    @property
    def optimal(self) -> bool:
        return self.status is BoundStatus.OPTIMAL


def degree_rows(n: int) -> list[Row]:
    index = edge_index(n)
    rows = []
    for v in range(n):
        cols = sorted(index[edge(v, u)] for u in range(n) if u != v)
        rows.append(Row(name=f"deg_{v}", indices=tuple(cols), coefs=(1.0,) * len(cols), sense="=", rhs=2.0))
    return rows


def build_model(X: PointSet, fixings: EdgeFixings, extra_rows: Sequence[Row] = ()) -> LPModel:
    n = X.n
    index = edge_index(n)
    rows, cols = np.triu_indices(n, 1)
    costs = X.dist[rows, cols].copy()
    lower = np.zeros(costs.size)
    upper = np.ones(costs.size)
    for e in fixings.include:
        lower[index[e]] = 1.0
    for e in fixings.exclude:
        upper[index[e]] = 0.0
    return LPModel(n=n, costs=costs, rows=tuple(degree_rows(n)) + tuple(extra_rows), lower=lower, upper=upper)


def solve_lp(model: LPModel, tol: float = LP_TOLERANCE) -> BoundResult:
    result = solve_bounded_lp(
        model.costs,
        model.matrix(),
        [row.sense for row in model.rows],
        np.array([row.rhs for row in model.rows]),
        model.lower,
        model.upper,
        tol=tol,
    )
    if result.status is SimplexStatus.INFEASIBLE:
        return BoundResult(math.inf, None, 0, result.iterations, BoundStatus.INFEASIBLE)
    solution = FractionalSolution.from_vector(model.n, result.x)
    return BoundResult(result.objective, solution, 0, result.iterations, BoundStatus.OPTIMAL)


def min_cut(x: FractionalSolution) -> tuple[frozenset[int], float]:
    """Global minimum cut of the support graph; the returned side contains vertex 0."""
    if x.n < 2:
        raise InvalidArgumentError("min_cut requiere n >= 2.")
    graph = x.support_graph()
    if not nx.is_connected(graph):
        component = nx.node_connected_component(graph, 0)
        return frozenset(component), 0.0
    value, (side_a, side_b) = nx.stoer_wagner(graph, weight="weight")
    side = side_a if 0 in side_a else side_b
    return frozenset(side), float(value)


def subtour_violations(x: FractionalSolution, tol: float = CUT_VIOLATION_TOL) -> list[frozenset[int]]:
    """Cut sides to add: every component of a disconnected support, else the min cut if < 2."""
    graph = x.support_graph()
    if not nx.is_connected(graph):
        sides = {canonical_side(x.n, comp) for comp in nx.connected_components(graph)}
        return sorted(sides, key=sorted)
    side, value = min_cut(x)
    if value < 2.0 - tol:
        return [canonical_side(x.n, side)]
    return []


@dataclass(frozen=True)
class FeasibilityReport:
    passed: bool
    max_degree_violation: float
    min_cut_value: float
    max_bound_violation: float


def check_feasible(x: FractionalSolution, tol: float = CUT_VIOLATION_TOL) -> FeasibilityReport:
    degree_violation = float(np.abs(x.degrees() - 2.0).max()) if x.n else 0.0
    upper = np.triu(x.matrix, 1)
    bound_violation = float(max(0.0, -upper.min(initial=0.0), upper.max(initial=0.0) - 1.0))
    cut = min_cut(x)[1] if x.n >= 2 else 0.0
    passed = degree_violation <= tol and cut >= 2.0 - tol and bound_violation <= tol
    return FeasibilityReport(passed, degree_violation, cut, bound_violation)


Separator = Callable[[FractionalSolution, CutPool], int]


def subtour_separator(tol: float = CUT_VIOLATION_TOL) -> Separator:
    def separate(x: FractionalSolution, pool: CutPool) -> int:
        added = 0
        for side in subtour_violations(x, tol):
            pool.add(("subtour", tuple(sorted(side))), subtour_row(x.n, side))
            added += 1
        return added

    return separate


def cutting_plane(
    X: PointSet,
    fixings: EdgeFixings | None,
    separators: Sequence[Separator],
    pool: CutPool | None = None,
    label: str = "HK",
) -> BoundResult:
    """Solve, run the separators in order until one adds rows, resolve; stop when none does."""
    n = X.n
    if n < 3:
        raise InvalidArgumentError("El LP de Held-Karp requiere n >= 3.")
    fixings = fixings or EdgeFixings()
    pool = pool.copy() if pool is not None else CutPool()
    reason = fixings.conflicts(n)
    if reason is not None:
        logger.debug(f"{label}: fijaciones inconsistentes ({reason}).")
        return BoundResult(math.inf, None, 0, 0, BoundStatus.INFEASIBLE, pool)

    cuts_added = 0
    iterations = 0
    for _ in range(MAX_CUTTING_ROUNDS):
        result = solve_lp(build_model(X, fixings, pool.rows()))
        iterations += result.iterations
        if not result.optimal:
            return BoundResult(math.inf, None, cuts_added, iterations, BoundStatus.INFEASIBLE, pool)
        added = 0
        for separate in separators:
            added = separate(result.solution, pool)
            if added:
                break
        if not added:
            logger.debug(f"{label}: valor {result.value:.6f} con {cuts_added} cortes, {iterations} pivotes.")
            return BoundResult(result.value, result.solution, cuts_added, iterations, BoundStatus.OPTIMAL, pool)
        cuts_added += added
    raise InvariantError(f"{label}: el ciclo de planos cortantes no termino en {MAX_CUTTING_ROUNDS} rondas.")


def held_karp(
    X: PointSet,
    fixings: EdgeFixings | None = None,
    tol: float = CUT_VIOLATION_TOL,
    pool: CutPool | None = None,
) -> BoundResult:
    """HK(X | fixings) by subtour cutting planes. The pool passed in is copied, never mutated."""
    return cutting_plane(X, fixings, [subtour_separator(tol)], pool, label="HK")


def write_lp_file(model: LPModel, path: str | Path) -> Path:
    """Dump the model in CPLEX LP text format, rows in model order."""
    path = Path(path)
    names = [f"x_{i}_{j}" for i, j in edge_list(model.n)]
    lines = ["\\ Held-Karp model", "Minimize", " obj: " + _linear(model.costs, names)]
    lines.append("Subject To")
    for r, row in enumerate(model.rows):
        terms = _linear(np.array(row.coefs), [names[c] for c in row.indices])
        op = {"=": "=", "<=": "<=", ">=": ">="}[row.sense]
        lines.append(f" {row.name}_{r}: {terms} {op} {row.rhs:.17g}")
    lines.append("Bounds")
    for name, lo, hi in zip(names, model.lower, model.upper):
        lines.append(f" {lo:.17g} <= {name} <= {hi:.17g}")
    lines.append("End")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise OSError(f"No se pudo escribir el modelo LP en {path}: {e}") from e
    return path


def _linear(coefs: np.ndarray, names: Sequence[str]) -> str:
    if not names:
        return "0"
    parts = []
    for pos, (coef, name) in enumerate(zip(coefs, names)):
        sign = "-" if coef < 0 else "+"
        term = f"{abs(coef):.17g} {name}"
        parts.append(term if pos == 0 and sign == "+" else f"{sign} {term}")
    return " ".join(parts)

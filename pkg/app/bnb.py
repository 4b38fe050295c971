"""Best-first branch and bound over edge fixings with HK or Comb_c lower bounds."""

from __future__ import annotations

import heapq
import itertools
import json
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from app.combs import comb_lp
from app.config import CUT_VIOLATION_TOL, logger
from app.errors import InvalidArgumentError, InvariantError, SizeLimitError
from app.instance import PointSet
from app.lp_core import BoundResult, CutPool, Edge, EdgeFixings, FractionalSolution, held_karp
from app.tsp_solvers import Tour, heuristic_tour, make_tour

PRUNE_TOL = 1e-6
MONOTONE_TOL = 1e-6
INTEGRAL_TOL = 1e-6
MIN_CENSUS_POINTS = 3
MIN_CENSUS_TRIALS = 10


class BoundKind(str, Enum):
    HK = "hk"
    COMB = "comb"


@dataclass(frozen=True)
class BoundSpec:
    kind: BoundKind = BoundKind.HK
    c: int = 0

    @classmethod
    def hk(cls) -> "BoundSpec":
        return cls(BoundKind.HK, 0)

    @classmethod
    def comb(cls, c: int) -> "BoundSpec":
        if c < 6:
            raise InvalidArgumentError(f"Comb_c requiere c >= 6 (c={c}).")
        return cls(BoundKind.COMB, c)

    @property
    def label(self) -> str:
        return "HK" if self.kind is BoundKind.HK else f"Comb_{self.c}"


@dataclass(frozen=True)
class BnBNode:
    node_id: int
    include: frozenset[Edge]
    exclude: frozenset[Edge]
    depth: int
    parent: int | None
    bound: float = math.inf

    @property
    def fixings(self) -> EdgeFixings:
        return EdgeFixings(self.include, self.exclude)


class LeafReason(str, Enum):
    BOUND = "bound"
    TOUR = "tour"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class LeafRecord:
    node_id: int
    depth: int
    bound: float
    reason: LeafReason


@dataclass
class TreeStats:
    nodes_expanded: int = 0
    leaves: int = 0
    max_depth: int = 0
    bound_evaluations: int = 0
    incumbent_history: list[tuple[int, float]] = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self, include_time: bool = False) -> dict:
        data = {
            "nodes_expanded": self.nodes_expanded,
            "leaves": self.leaves,
            "max_depth": self.max_depth,
            "bound_evaluations": self.bound_evaluations,
            "incumbent_history": [[node, length] for node, length in self.incumbent_history],
        }
        if include_time:
            data["wall_time"] = self.wall_time
        return data


@dataclass(frozen=True, eq=False)
class BnBResult:
    tour: Tour
    stats: TreeStats
    bound: BoundSpec
    root_bound: float
    leaves: tuple[LeafRecord, ...]
    node_bounds: dict[int, tuple[int | None, float]]


def node_bound(X: PointSet, node: BnBNode, bound: BoundSpec, pool: CutPool | None = None) -> BoundResult:
    """HK or Comb_c under the node's fixings; infeasible fixings give value +inf."""
    if bound.kind is BoundKind.HK:
        return held_karp(X, node.fixings, CUT_VIOLATION_TOL, pool)
    return comb_lp(X, bound.c, node.fixings, CUT_VIOLATION_TOL, pool)


def select_branch_edge(x: FractionalSolution, dist: np.ndarray) -> Edge:
    """Most fractional edge: weight nearest 1/2, then longest, then smallest (i, j)."""
    best_key = None
    best: Edge | None = None
    for (i, j), w in x.support().items():
        frac = abs(w - round(w))
        if frac <= INTEGRAL_TOL:
            continue
        key = (abs(w - 0.5), -float(dist[i, j]), i, j)
        if best_key is None or key < best_key:
            best_key, best = key, (i, j)
    if best is None:
        raise InvalidArgumentError("La solucion es entera: no hay arista para ramificar.")
    return best


def branch(node: BnBNode, x: FractionalSolution, dist: np.ndarray, next_ids: Iterable[int]) -> tuple[BnBNode, BnBNode]:
    """Children with the selected edge included and excluded."""
    e = select_branch_edge(x, dist)
    ids = iter(next_ids)
    left = BnBNode(next(ids), node.include | {e}, node.exclude, node.depth + 1, node.node_id)
    right = BnBNode(next(ids), node.include, node.exclude | {e}, node.depth + 1, node.node_id)
    return left, right


def tour_from_integral(x: FractionalSolution) -> list[int] | None:
    """Vertex order of an integral x that is a Hamiltonian cycle, else None."""
    n = x.n
    adj = np.round(x.matrix).astype(int)
    if np.any(adj.sum(axis=1) != 2):
        return None
    order = [0]
    prev, current = -1, 0
    for _ in range(n - 1):
        nbrs = [int(v) for v in np.nonzero(adj[current])[0] if v != prev]
        if not nbrs:
            return None
        prev, current = current, nbrs[0]
        if current == 0:
            return None
        order.append(current)
    return order if len(set(order)) == n and adj[order[-1], 0] == 1 else None


def _log_node(handle, node: BnBNode, status: str, incumbent: float) -> None:
    if handle is None:
        return
    record = {
        "id": node.node_id,
        "parent": node.parent,
        "depth": node.depth,
        "bound": node.bound if math.isfinite(node.bound) else None,
        "include": len(node.include),
        "exclude": len(node.exclude),
        "status": status,
        "incumbent": incumbent,
    }
    handle.write(json.dumps(record, sort_keys=True) + "\n")


def branch_and_bound(
    X: PointSet,
    bound: BoundSpec | None = None,
    incumbent: Tour | None = None,
    seed: int | None = 0,
    node_log: str | Path | None = None,
    max_nodes: int | None = None,
) -> BnBResult:
    """Optimal tour with a pruned-tree certificate.

    Nodes are expanded best-first by (bound, -depth, id). A node is a leaf when its bound
    is at least the incumbent (within PRUNE_TOL), its fixings are infeasible, or its LP
    optimum is an integral tour. Children inherit the parent's cut pool.
    """
    bound = bound or BoundSpec.hk()
    if X.n < 4:
        raise InvalidArgumentError(f"branch_and_bound requiere n >= 4 (n={X.n}).")
    start = time.perf_counter()
    best = incumbent or heuristic_tour(X, seed)
    stats = TreeStats(incumbent_history=[(0, best.length)])
    leaves: list[LeafRecord] = []
    node_bounds: dict[int, tuple[int | None, float]] = {}
    ids = itertools.count()

    handle = None
    if node_log is not None:
        path = Path(node_log)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            handle = path.open("w", encoding="utf-8")
        except OSError as e:
            raise OSError(f"No se pudo abrir el log de nodos {path}: {e}") from e

    def evaluate(node: BnBNode, pool: CutPool | None) -> tuple[BnBNode, BoundResult]:
        result = node_bound(X, node, bound, pool)
        stats.bound_evaluations += 1
        evaluated = BnBNode(node.node_id, node.include, node.exclude, node.depth, node.parent, result.value)
        node_bounds[node.node_id] = (node.parent, result.value)
        return evaluated, result

    def close(node: BnBNode, reason: LeafReason) -> None:
        stats.leaves += 1
        leaves.append(LeafRecord(node.node_id, node.depth, node.bound, reason))

    try:
        root, root_result = evaluate(BnBNode(next(ids), frozenset(), frozenset(), 0, None), None)
        heap: list[tuple[float, int, int, BnBNode, BoundResult]] = [
            (root.bound, 0, root.node_id, root, root_result)
        ]
        while heap:
            _, _, _, node, result = heapq.heappop(heap)
            stats.nodes_expanded += 1
            stats.max_depth = max(stats.max_depth, node.depth)
            if max_nodes is not None and stats.nodes_expanded > max_nodes:
                raise SizeLimitError(f"Se supero el limite de {max_nodes} nodos.")

            if not result.optimal:
                close(node, LeafReason.INFEASIBLE)
                _log_node(handle, node, "infeasible", best.length)
                continue
            if node.bound >= best.length - PRUNE_TOL:
                close(node, LeafReason.BOUND)
                _log_node(handle, node, "pruned", best.length)
                continue
            x = result.solution
            if x.is_integral(INTEGRAL_TOL):
                order = tour_from_integral(x)
                if order is None:
                    raise InvariantError("Solucion LP entera que no es un tour tras separar subtours.")
                candidate = make_tour(X, order)
                if candidate.length < best.length - PRUNE_TOL:
                    best = candidate
                    stats.incumbent_history.append((node.node_id, best.length))
                    logger.debug(f"B&B {bound.label}: nuevo incumbente {best.length:.6f} en nodo {node.node_id}.")
                close(node, LeafReason.TOUR)
                _log_node(handle, node, "tour", best.length)
                continue

            _log_node(handle, node, "branched", best.length)
            for child in branch(node, x, X.dist, ids):
                evaluated, child_result = evaluate(child, result.pool)
                heapq.heappush(heap, (evaluated.bound, -evaluated.depth, evaluated.node_id, evaluated, child_result))
    finally:
        if handle is not None:
            handle.close()

    stats.wall_time = time.perf_counter() - start
    logger.info(
        f"B&B {bound.label} n={X.n}: optimo {best.length:.6f}, {stats.nodes_expanded} nodos, "
        f"{stats.leaves} hojas, profundidad {stats.max_depth}."
    )
    return BnBResult(best, stats, bound, root.bound, tuple(leaves), node_bounds)


def verify_certificate(result: BnBResult, tol: float = PRUNE_TOL) -> list[str]:
    """Problems with the pruned-tree certificate; empty when it holds."""
    problems = []
    B = result.tour.length
    for leaf in result.leaves:
        if leaf.reason is LeafReason.BOUND and leaf.bound < B - tol:
            problems.append(f"hoja {leaf.node_id} podada con cota {leaf.bound:.6f} < {B:.6f}")
        if leaf.reason is LeafReason.TOUR and leaf.bound < B - tol:
            problems.append(f"hoja {leaf.node_id} con tour {leaf.bound:.6f} mas corto que {B:.6f}")
    for node_id, (parent, value) in result.node_bounds.items():
        if parent is None:
            continue
        parent_value = result.node_bounds[parent][1]
        if value < parent_value - MONOTONE_TOL:
            problems.append(f"cota no monotona en nodo {node_id}: {value:.6f} < {parent_value:.6f}")
    if result.stats.leaves > result.stats.nodes_expanded:
        problems.append("mas hojas que nodos expandidos")
    if result.root_bound > B + tol:
        problems.append("la cota raiz supera al tour devuelto")
    return problems


# --- Leaf census ---


@dataclass(frozen=True)
class CensusRun:
    n: int
    seed: int
    leaves: int
    nodes: int
    family: str = "uniform"


@dataclass(frozen=True)
class GrowthRow:
    family: str
    n: int
    trials: int
    median_leaves: float
    mean_leaves: float
    median_nodes: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class GrowthTable:
    rows: tuple[GrowthRow, ...]
    slopes: dict[str, float]

    def to_dict(self) -> dict:
        return {"rows": [row.to_dict() for row in self.rows], "slopes": dict(sorted(self.slopes.items()))}


def leaf_census(runs: Sequence[CensusRun], min_trials: int = MIN_CENSUS_TRIALS) -> GrowthTable:
    """Median leaves per (family, n) and the fitted slope of log(median leaves) against n."""
    rows: list[GrowthRow] = []
    slopes: dict[str, float] = {}
    families = sorted({run.family for run in runs})
    if not families:
        raise InvalidArgumentError("El censo de hojas necesita corridas.")
    for family in families:
        by_n: dict[int, list[CensusRun]] = {}
        for run in runs:
            if run.family == family:
                by_n.setdefault(run.n, []).append(run)
        if len(by_n) < MIN_CENSUS_POINTS:
            raise InvalidArgumentError(f"{family}: se requieren al menos {MIN_CENSUS_POINTS} valores de n.")
        family_rows = []
        for n in sorted(by_n):
            group = by_n[n]
            if len(group) < min_trials:
                raise InvalidArgumentError(f"{family}, n={n}: {len(group)} ensayos < {min_trials}.")
            leaves = np.array([run.leaves for run in group], dtype=float)
            nodes = np.array([run.nodes for run in group], dtype=float)
            family_rows.append(
                GrowthRow(family, n, len(group), float(np.median(leaves)), float(leaves.mean()), float(np.median(nodes)))
            )
        ns = np.array([row.n for row in family_rows], dtype=float)
        logs = np.log(np.array([row.median_leaves for row in family_rows]))
        slopes[family] = float(np.polyfit(ns, logs, 1)[0])
        rows.extend(family_rows)
    return GrowthTable(tuple(rows), slopes)

"""Half-integral solution on the ring gadget, its local gap, and splicing into tours.

Local labels follow build_gadget: outer ring 0..2k-1, inner ring 2k..3k-1, gap points
3k (at (2, 0)) and 3k+1 (at (-2, 0)). A copy's meta maps local label i to
meta.all_ids[i] in the host instance.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import networkx as nx
import numpy as np
from scipy.spatial.distance import cdist

from app.combs import enumerate_combs, is_violated, triangle_decompose
from app.config import DP_MAX_N, logger
from app.errors import InvalidArgumentError, InvariantError
from app.instance import GadgetMeta, PointSet, build_gadget, tour_crossing_pairs
from app.lp_core import FractionalSolution, check_feasible
from app.tsp_solvers import forced_cycle

LocalEdge = tuple[int, int]


def _e(u: int, v: int) -> LocalEdge:
    return (u, v) if u < v else (v, u)


def gadget_triangles(k: int) -> tuple[tuple[int, int, int], ...]:
    """The four weight-1/2 triangles: each gap point with its two nearest outer and inner points."""
    g, g2 = 3 * k, 3 * k + 1
    inner = lambda j: 2 * k + (j % k)  # noqa: E731
    far = k // 2 if k % 2 == 0 else (k - 1) // 2
    return (
        tuple(sorted((g, 0, 1))),
        tuple(sorted((g, inner(0), inner(1)))),
        tuple(sorted((g2, k, k + 1))),
        tuple(sorted((g2, inner(far), inner(far + 1)))),
    )


def _ring_gap(k: int, a: int, b: int) -> int:
    d = abs(a - b) % (2 * k)
    return min(d, 2 * k - d)


def entry_separation(k: int, vertices: Sequence[int]) -> int:
    """Fewest outer-ring points strictly between an entry vertex and a weight-1/2 outer edge."""
    ends = (0, 1, k, k + 1)
    return min(_ring_gap(k, v, q) - 1 for v in vertices for q in ends)


def max_separation(k: int) -> int:
    return (k - 4) // 2


def admissible_ring_edges(k: int, separation: int) -> list[int]:
    """Positions p whose ring edge (p, p+1) may be opened for an entry."""
    sites = []
    for p in range(2 * k):
        if p in (0, k):
            continue
        if entry_separation(k, (p, (p + 1) % (2 * k))) >= separation:
            sites.append(p)
    return sites


@dataclass(frozen=True, eq=False)
class GadgetSolution:
    k: int
    c: int
    entry_mode: int
    weights: FractionalSolution
    triangles: tuple[tuple[int, int, int], ...]
    entry_edges: tuple[LocalEdge, ...]
    separation: int
    external_pairs: tuple[LocalEdge, ...]

    @property
    def entry_vertices(self) -> tuple[int, ...]:
        return tuple(v for e in self.entry_edges for v in e)

    def internal_degrees(self) -> np.ndarray:
        return self.weights.degrees()

    def closed(self, pairs: Sequence[LocalEdge] | None = None) -> FractionalSolution:
        """Gadget solution with a weight-1 edge on each external pair."""
        matrix = np.array(self.weights.matrix)
        for u, v in pairs if pairs is not None else self.external_pairs:
            matrix[u, v] += 1.0
            matrix[v, u] += 1.0
        return FractionalSolution(self.weights.n, matrix)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "c": self.c,
            "entry_mode": self.entry_mode,
            "triangles": [list(t) for t in self.triangles],
            "entry_edges": [list(e) for e in self.entry_edges],
            "separation": self.separation,
            "external_pairs": [list(e) for e in self.external_pairs],
            "weights": [[i, j, w] for (i, j), w in sorted(self.weights.support().items())],
        }


def _required_separation(k: int, c: int, strict: bool) -> int:
    if c < 2:
        raise InvalidArgumentError("c debe ser >= 2.")
    if strict and k < 2 * (c + 2):
        raise InvalidArgumentError(f"k={k} < 2(c+2)={2 * (c + 2)}: la separacion de entradas no es posible.")
    wanted = c - 1
    capped = min(wanted, max_separation(k))
    if capped < 0:
        raise InvalidArgumentError(f"k={k} no admite entradas lejos de los triangulos.")
    if capped < wanted:
        logger.warning(f"Gadget k={k}, c={c}: separacion de entradas limitada a {capped} (< c-1={wanted}).")
    return capped


def _default_sites(k: int, entry_mode: int, separation: int) -> list[int]:
    if entry_mode == 1:
        return [k // 2]
    if k >= 2 * separation + 6:
        return [separation + 2, k - separation - 2]
    return [k // 2, k + k // 2]


def build_gadget_solution(
    meta: GadgetMeta,
    c: int,
    entry_mode: int = 1,
    entry_sites: Sequence[int] | None = None,
    strict: bool = True,
    external_pairs: Sequence[LocalEdge] | None = None,
) -> GadgetSolution:
    """Rings at weight 1, four gap triangles at weight 1/2, and one or two opened outer ring edges.

    `entry_sites` are outer positions p; the ring edge (p, p+1) is removed and its ends
    become entry/exit vertices. With strict=False the entry separation is capped at what
    the ring admits instead of requiring k >= 2(c+2).
    """
    k = meta.k
    if entry_mode not in (1, 2):
        raise InvalidArgumentError(f"Modo de entrada {entry_mode} no soportado (1 o 2).")
    separation = _required_separation(k, c, strict)
    sites = list(entry_sites) if entry_sites is not None else _default_sites(k, entry_mode, separation)
    if len(sites) != entry_mode:
        raise InvalidArgumentError(f"Se esperaban {entry_mode} sitios de entrada, llegaron {len(sites)}.")
    return _assemble(k, c, entry_mode, sites, separation, external_pairs)


def _assemble(
    k: int,
    c: int,
    entry_mode: int,
    sites: Sequence[int],
    separation: int,
    external_pairs: Sequence[LocalEdge] | None,
) -> GadgetSolution:
    ring = 2 * k
    entry_edges = tuple(_e(p % ring, (p + 1) % ring) for p in sites)
    touched = [v for e in entry_edges for v in e]
    if len(set(touched)) != len(touched):
        raise InvalidArgumentError("Las aristas de entrada comparten vertices.")
    for p in sites:
        if p % ring in (0, k):
            raise InvalidArgumentError(f"La arista {p} pertenece a un triangulo.")
    actual = entry_separation(k, touched)
    if actual < separation:
        raise InvalidArgumentError(f"Entradas a {actual} puntos de los triangulos; se requieren {separation}.")

    triangles = gadget_triangles(k)
    half = {_e(a, b) for tri in triangles for a, b in itertools.combinations(tri, 2)}
    weights: dict[LocalEdge, float] = {e: 0.5 for e in half}
    for j in range(ring):
        e = _e(j, (j + 1) % ring)
        if e not in half and e not in entry_edges:
            weights[e] = 1.0
    for j in range(k):
        e = _e(2 * k + j, 2 * k + (j + 1) % k)
        if e not in half:
            weights[e] = 1.0

    n = 3 * k + 2
    solution = GadgetSolution(
        k=k,
        c=c,
        entry_mode=entry_mode,
        weights=FractionalSolution.from_edges(n, weights),
        triangles=triangles,
        entry_edges=entry_edges,
        separation=actual,
        external_pairs=tuple(external_pairs) if external_pairs is not None else entry_edges,
    )
    degrees = solution.internal_degrees()
    expected = np.full(n, 2.0)
    expected[touched] = 1.0
    if np.abs(degrees - expected).max() > 1e-9:
        raise InvariantError("Grados internos del gadget inconsistentes.")
    return solution


@dataclass(frozen=True)
class GapReport:
    k: int
    c: int
    entry_mode: int
    tour_length_local: float
    lp_length_local: float
    gap: float
    exact: bool
    separation: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _local_points(meta: GadgetMeta, X: PointSet | None) -> np.ndarray:
    if X is None:
        gadget, _ = build_gadget(meta.k, meta.scale)
        return gadget.points
    return X.points[list(meta.all_ids)]


def local_lengths(meta: GadgetMeta, sol: GadgetSolution, X: PointSet | None = None) -> GapReport:
    """LP length of the local solution vs the shortest tour restriction with the same external pairs."""
    points = _local_points(meta, X)
    dist = cdist(points, points)
    lp_length = float(np.triu(sol.weights.matrix * dist, 1).sum())
    exact = points.shape[0] <= DP_MAX_N
    tour_length, _ = forced_cycle(dist, list(sol.external_pairs), exact=exact)
    if not exact:
        logger.info(f"Gadget k={meta.k}: longitud de tour local heuristica (3k+2 > {DP_MAX_N}).")
    return GapReport(
        k=meta.k,
        c=sol.c,
        entry_mode=sol.entry_mode,
        tour_length_local=tour_length,
        lp_length_local=lp_length,
        gap=tour_length - lp_length,
        exact=exact,
        separation=sol.separation,
    )


# --- Splicing ---


@dataclass(frozen=True)
class SplicedCopy:
    copy_index: int
    entry_mode: int
    entry_edges: tuple[LocalEdge, ...]
    separation: int
    removed_length: float
    added_length: float

    @property
    def gap(self) -> float:
        return self.removed_length - self.added_length


@dataclass(frozen=True, eq=False)
class SpliceResult:
    solution: FractionalSolution
    tour_length: float
    value: float
    spliced: tuple[SplicedCopy, ...]
    skipped: tuple[tuple[int, int], ...] = field(default_factory=tuple)


def _crossings(order: Sequence[int], members: set[int]) -> list[tuple[int, int]]:
    """Crossing edges as (inside, outside) in tour order, starting with an entry."""
    n = len(order)
    found = []
    for pos in range(n):
        u, v = order[pos], order[(pos + 1) % n]
        if (u in members) != (v in members):
            found.append((pos, u, v))
    first = next(i for i, (_, u, v) in enumerate(found) if v in members)
    rotated = found[first:] + found[:first]
    return [(v, u) if v in members else (u, v) for _, u, v in rotated]


def _choose_entries(
    k: int,
    separation: int,
    outside_pts: list[np.ndarray],
    ring_pts: np.ndarray,
    mode: int,
    c: int,
) -> tuple[list[int], tuple[int, ...], tuple[LocalEdge, ...]]:
    """Ring sites and entry vertices e_1..e_2m closest to the outside endpoints z_1..z_2m."""
    sites = admissible_ring_edges(k, separation)
    if len(sites) < mode:
        raise InvalidArgumentError(
            f"El anillo k={k} no admite {mode} sitio(s) de entrada con separacion {separation} "
            f"(hay {len(sites)})."
        )
    ring = 2 * k

    def reach(i: int, local: int) -> float:
        return float(np.linalg.norm(outside_pts[i] - ring_pts[local]))

    if mode == 1:
        best = None
        for p in sites:
            a, b = p, (p + 1) % ring
            for e1, e2 in ((a, b), (b, a)):
                cost = reach(0, e1) + reach(1, e2)
                key = (cost, p, e1)
                if best is None or key < best[0]:
                    best = (key, [p], (e1, e2), ((e2, e1),))
        return best[1], best[2], best[3]

    options = []
    for p, q in itertools.combinations(sites, 2):
        verts = {p, (p + 1) % ring, q, (q + 1) % ring}
        if len(verts) < 4:
            continue
        for perm in itertools.permutations(sorted(verts)):
            cost = reach(0, perm[0]) + reach(1, perm[1]) + reach(2, perm[2]) + reach(3, perm[3])
            options.append((cost, p, q, perm))
    options.sort()
    for cost, p, q, perm in options:
        pairs = ((perm[1], perm[2]), (perm[3], perm[0]))
        candidate = _assemble(k, c, 2, [p, q], separation, pairs)
        if check_feasible(candidate.closed()).passed:
            return [p, q], perm, pairs
    raise InvariantError("Ninguna asignacion de entradas dobles deja la solucion factible.")


def splice(
    X: PointSet,
    tour_order: Sequence[int],
    copies: Sequence[GadgetMeta],
    c: int,
    strict: bool = True,
) -> SpliceResult:
    """Replace the tour inside every copy entered at most twice by the local half-integral solution."""
    order = [int(v) for v in tour_order]
    if sorted(order) != list(range(X.n)):
        raise InvalidArgumentError("tour_order no es un ciclo Hamiltoniano de X.")
    tour_solution = FractionalSolution.from_tour(order)
    tour_length = tour_solution.value(X)
    matrix = np.array(tour_solution.matrix)
    dist = X.dist
    subst: dict[tuple[int, int], int] = {}
    spliced: list[SplicedCopy] = []
    skipped: list[tuple[int, int]] = []

    for index, meta in enumerate(copies):
        labels = list(meta.all_ids)
        members = set(labels)
        if len(members) >= X.n:
            raise InvalidArgumentError("Una copia no puede cubrir toda la instancia.")
        pairs = tour_crossing_pairs(order, members)
        if pairs > 2:
            logger.warning(f"Copia {index}: el tour la cruza {pairs} veces; se omite.")
            skipped.append((index, pairs))
            continue

        separation = _required_separation(meta.k, c, strict)
        crossings = _crossings(order, members)
        outside = [subst.get((w, z), z) for w, z in crossings]
        ring_pts = X.points[list(meta.outer_ids)]
        sites, entries, ext_pairs = _choose_entries(
            meta.k, separation, [X.points[z] for z in outside], ring_pts, pairs, c
        )
        local = _assemble(meta.k, c, pairs, sites, separation, ext_pairs)

        block = np.ix_(labels, labels)
        removed = float(np.triu(matrix[block] * dist[block], 1).sum())
        matrix[block] = 0.0
        for (w, _), z in zip(crossings, outside):
            removed += dist[w, z]
            matrix[w, z] = matrix[z, w] = 0.0

        added = 0.0
        for (i, j), w in local.weights.support().items():
            a, b = labels[i], labels[j]
            matrix[a, b] = matrix[b, a] = w
            added += w * dist[a, b]
        for ((w, z_orig), z), e_local in zip(zip(crossings, outside), entries):
            e = labels[e_local]
            matrix[e, z] = matrix[z, e] = matrix[e, z] + 1.0
            added += dist[e, z]
            subst[(z_orig, w)] = e

        spliced.append(SplicedCopy(index, pairs, local.entry_edges, local.separation, removed, added))

    solution = FractionalSolution(X.n, matrix)
    report = check_feasible(solution)
    if not report.passed:
        logger.error(f"Solucion empalmada infactible: {report}")
        raise InvariantError("La solucion empalmada no es factible para Held-Karp.")
    value = solution.value(X)
    logger.info(f"Empalme: {len(spliced)} copias, {len(skipped)} omitidas, valor {value:.4f} vs tour {tour_length:.4f}.")
    return SpliceResult(solution, tour_length, value, tuple(spliced), tuple(skipped))


# --- Lemma checks on the gadget ---


@dataclass(frozen=True)
class GadgetLemmaReport:
    k: int
    c: int
    size_limit: int
    combs_checked: int
    violated: int
    min_violated_size: int | None
    gap_three_comb_violations: int
    gap_five_comb_violations: int
    weight_one_paths: int
    triangles: int
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _weight_one_paths(sol: GadgetSolution) -> int:
    graph = nx.Graph()
    graph.add_nodes_from(range(sol.weights.n))
    graph.add_edges_from(e for e, w in sol.closed().support().items() if abs(w - 1.0) <= 1e-9)
    count = 0
    for comp in nx.connected_components(graph):
        if len(comp) < 2:
            continue
        sub = graph.subgraph(comp)
        if nx.is_tree(sub) and max(d for _, d in sub.degree) <= 2:
            count += 1
    return count


def verify_gadget_lemmas(sol: GadgetSolution, c: int, size_limit: int | None = None) -> GadgetLemmaReport:
    """Exhaustive comb search on the closed gadget solution up to `size_limit` (default c)."""
    limit = size_limit if size_limit is not None else c
    x = sol.closed()
    gaps = {3 * sol.k, 3 * sol.k + 1}
    checked = violated = gap3 = gap5 = 0
    smallest: int | None = None
    for comb in enumerate_combs(x, limit):
        checked += 1
        if not is_violated(x, comb):
            continue
        violated += 1
        size = comb.size
        smallest = size if smallest is None else min(smallest, size)
        span = comb.handle.union(*comb.teeth)
        if span & gaps:
            if comb.t == 3 and size < 2 * c:
                gap3 += 1
            if comb.t >= 5 and size < c:
                gap5 += 1
    triangles = len(triangle_decompose(x).triangles)
    paths = _weight_one_paths(sol)
    passed = (
        check_feasible(x).passed
        and triangles == 4
        and gap3 == 0
        and gap5 == 0
        and (smallest is None or smallest > c)
    )
    return GadgetLemmaReport(
        k=sol.k,
        c=c,
        size_limit=limit,
        combs_checked=checked,
        violated=violated,
        min_violated_size=smallest,
        gap_three_comb_violations=gap3,
        gap_five_comb_violations=gap5,
        weight_one_paths=paths,
        triangles=triangles,
        passed=passed,
    )


def dump_support_graph(x: FractionalSolution, path: str | Path) -> Path:
    """Weighted edge list of the support graph, one "u v weight" line per edge."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        nx.write_weighted_edgelist(x.support_graph(), str(path))
    except OSError as e:
        raise OSError(f"No se pudo escribir el grafo soporte en {path}: {e}") from e
    return path

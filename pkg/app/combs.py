"""Comb inequalities: evaluation, enumeration, separation, the Comb_c LP and lemma validators.

Vertex sets are handled internally as int bitmasks; public types use frozensets.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import networkx as nx
import numpy as np

from app.config import COMB_VIOLATION_TOL, CUT_VIOLATION_TOL, logger
from app.errors import InvalidArgumentError, InvariantError, NotDecomposableError
from app.instance import PointSet
from app.lp_core import (
    BoundResult,
    CutPool,
    EdgeFixings,
    FractionalSolution,
    Row,
    between,
    check_feasible,
    cut_value,
    cutting_plane,
    edge_list,
    subtour_separator,
)

HALF_TOL = 1e-9
MIN_COMB_SIZE = 6


def _bits(mask: int) -> list[int]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


def _mask(vertices: Iterable[int]) -> int:
    mask = 0
    for v in vertices:
        mask |= 1 << int(v)
    return mask


def _low(mask: int) -> int:
    return (mask & -mask).bit_length() - 1


@dataclass(frozen=True)
class Comb:
    handle: frozenset[int]
    teeth: tuple[frozenset[int], ...]

    @classmethod
    def of(cls, handle: Iterable[int], teeth: Iterable[Iterable[int]]) -> "Comb":
        return cls(frozenset(int(v) for v in handle), tuple(frozenset(int(v) for v in tooth) for tooth in teeth))

    @property
    def t(self) -> int:
        return len(self.teeth)

    @property
    def size(self) -> int:
        return len(self.handle.union(*self.teeth))

    @property
    def rhs(self) -> int:
        return 3 * self.t + 1

    def parts(self) -> list[tuple[frozenset[int], frozenset[int]]]:
        """(A_i, B_i) = (T_i & H, T_i - H) per tooth."""
        return [(tooth & self.handle, tooth - self.handle) for tooth in self.teeth]

    def problems(self, n: int | None = None) -> list[str]:
        found = []
        if self.t < 3 or self.t % 2 == 0:
            found.append(f"numero de dientes {self.t} no es impar >= 3")
        for a, b in itertools.combinations(range(self.t), 2):
            if self.teeth[a] & self.teeth[b]:
                found.append(f"dientes {a} y {b} se solapan")
        for pos, (A, B) in enumerate(self.parts()):
            if not A:
                found.append(f"diente {pos} no toca el mango")
            if not B:
                found.append(f"diente {pos} no sale del mango")
        if n is not None and any(not (0 <= v < n) for v in self.handle.union(*self.teeth)):
            found.append("vertices fuera de rango")
        return found

    def validate(self, n: int | None = None) -> None:
        found = self.problems(n)
        if found:
            raise InvalidArgumentError("Peine invalido: " + "; ".join(found))

    def canonical(self) -> "Comb":
        return Comb(self.handle, tuple(sorted(self.teeth, key=lambda tooth: (min(tooth), sorted(tooth)))))

    def key(self) -> tuple:
        canon = self.canonical()
        return (tuple(sorted(canon.handle)), tuple(tuple(sorted(tooth)) for tooth in canon.teeth))

    def to_dict(self) -> dict:
        handle, teeth = self.key()
        return {"handle": list(handle), "teeth": [list(tooth) for tooth in teeth]}


def comb_lhs(x: FractionalSolution, comb: Comb, validate: bool = True) -> float:
    """x(delta(H)) + sum_i x(delta(T_i)). With validate=False degenerate teeth are evaluated as given."""
    if validate:
        comb.validate(x.n)
    return cut_value(x, comb.handle) + sum(cut_value(x, tooth) for tooth in comb.teeth)


def is_violated(x: FractionalSolution, comb: Comb, tol: float = COMB_VIOLATION_TOL) -> bool:
    return comb_lhs(x, comb) < comb.rhs - tol


def comb_row(n: int, comb: Comb) -> Row:
    """x(delta(H)) + sum x(delta(T_i)) >= 3t + 1 as an LP row over edge columns."""
    sets = [comb.handle, *comb.teeth]
    indices, coefs = [], []
    for pos, (i, j) in enumerate(edge_list(n)):
        crossings = sum(1 for S in sets if (i in S) != (j in S))
        if crossings:
            indices.append(pos)
            coefs.append(float(crossings))
    return Row(name="comb", indices=tuple(indices), coefs=tuple(coefs), sense=">=", rhs=float(comb.rhs))


# --- Support graphs and connected subsets ---


def support_adjacency(support: FractionalSolution | nx.Graph, tol: float = HALF_TOL) -> list[int]:
    """Neighbour bitmask per vertex of the support graph (weight > tol)."""
    if isinstance(support, FractionalSolution):
        graph = support.support_graph(tol)
    else:
        graph = support
    n = graph.number_of_nodes()
    if set(graph.nodes) != set(range(n)):
        raise InvalidArgumentError("El grafo soporte debe tener vertices 0..n-1.")
    adj = [0] * n
    for u, v in graph.edges:
        adj[u] |= 1 << v
        adj[v] |= 1 << u
    return adj


def connected_subsets(adj: Sequence[int], max_size: int) -> Iterator[int]:
    """Every connected vertex set of size <= max_size, each exactly once.

    Sets are grown from their smallest vertex, extending only through neighbours that
    are larger than it and not adjacent to the set grown so far.
    """
    if max_size < 1:
        return
    for v in range(len(adj)):
        higher = ~((1 << (v + 1)) - 1)
        start = 1 << v
        yield from _grow(adj, start, adj[v] & higher, start | adj[v], higher, 1, max_size)


def _grow(adj: Sequence[int], sub: int, ext: int, closed: int, higher: int, size: int, max_size: int) -> Iterator[int]:
    yield sub
    if size == max_size:
        return
    while ext:
        low = ext & -ext
        ext ^= low
        w = low.bit_length() - 1
        fresh = adj[w] & higher & ~closed
        yield from _grow(adj, sub | low, ext | fresh, closed | adj[w], higher, size + 1, max_size)


def _tooth_candidates(subsets: Sequence[int], handle: int, h: int, budget: int) -> list[int]:
    outside = ~handle
    cands = [
        T for T in subsets
        if T & handle and T & outside
        and (T & outside).bit_count() <= budget - 2
        and (T & handle).bit_count() <= h - 2
    ]
    cands.sort(key=lambda T: (_low(T), T))
    return cands


def enumerate_combs(support: FractionalSolution | nx.Graph, c: int) -> Iterator[Comb]:
    """Every comb of size <= c whose handle and teeth are connected in the support graph.

    Teeth come sorted by smallest vertex, so each comb appears once.
    """
    if c < MIN_COMB_SIZE:
        return
    adj = support_adjacency(support)
    subsets = list(connected_subsets(adj, c - 3))
    handles = sorted((H for H in subsets if 3 <= H.bit_count() <= c - 3), key=lambda H: (H.bit_count(), _bits(H)))
    for H in handles:
        h = H.bit_count()
        budget = c - h
        cands = _tooth_candidates(subsets, H, h, budget)
        for teeth in _teeth_choices(cands, H, budget):
            yield Comb(frozenset(_bits(H)), tuple(frozenset(_bits(T)) for T in teeth))


def _teeth_choices(cands: Sequence[int], handle: int, budget: int) -> Iterator[list[int]]:
    outside = ~handle

    def walk(start: int, used: int, spent: int, chosen: list[int]) -> Iterator[list[int]]:
        if len(chosen) >= 3 and len(chosen) % 2 == 1:
            yield list(chosen)
        for idx in range(start, len(cands)):
            T = cands[idx]
            if T & used:
                continue
            cost = (T & outside).bit_count()
            if spent + cost > budget:
                continue
            chosen.append(T)
            yield from walk(idx + 1, used | T, spent + cost, chosen)
            chosen.pop()

    yield from walk(0, 0, 0, [])


# --- Separation ---


class _CutCache:
    def __init__(self, x: FractionalSolution) -> None:
        self.matrix = x.matrix
        self.degrees = x.degrees()
        self.values: dict[int, float] = {}

    def __call__(self, mask: int) -> float:
        value = self.values.get(mask)
        if value is None:
            idx = _bits(mask)
            inner = float(self.matrix[np.ix_(idx, idx)].sum())
            value = float(self.degrees[idx].sum()) - inner
            self.values[mask] = value
        return value


@dataclass
class _Best:
    slack: float
    t: int
    handle: tuple[int, ...]
    teeth: tuple[tuple[int, ...], ...]

    def beats(self, other: "_Best | None") -> bool:
        if other is None:
            return True
        if self.slack < other.slack - 1e-9:
            return True
        if self.slack > other.slack + 1e-9:
            return False
        return (self.t, self.handle, self.teeth) < (other.t, other.handle, other.teeth)


def _extra_teeth_bound(count: int, room: int, least: float) -> float | None:
    """Smallest total contribution of further teeth that leaves an odd count >= 3."""
    options = [m for m in range(0, room + 1) if (count + m) >= 3 and (count + m) % 2 == 1]
    if not options:
        return None
    if least < 0:
        return max(options) * least
    return min(options) * least


def separate_combs(x: FractionalSolution, c: int, tol: float = COMB_VIOLATION_TOL) -> Comb | None:
    """Most violated support-connected comb of size <= c, or None.

    Ties are broken by fewer teeth, then the lexicographically smaller handle.
    """
    if c < MIN_COMB_SIZE:
        return None
    adj = support_adjacency(x)
    cut = _CutCache(x)
    subsets = list(connected_subsets(adj, c - 3))
    best: _Best | None = None

    handles = sorted((H for H in subsets if 3 <= H.bit_count() <= c - 3), key=lambda H: (H.bit_count(), _bits(H)))
    for H in handles:
        h = H.bit_count()
        budget = c - h
        base = cut(H) - 1.0
        cands = _tooth_candidates(subsets, H, h, budget)
        if len(cands) < 3:
            continue
        contrib = [cut(T) - 3.0 for T in cands]
        least = min(contrib)
        limit = best.slack + 1e-9 if best is not None else -tol
        opening = _extra_teeth_bound(0, min(h, budget), least)
        if opening is None or base + opening > limit:
            continue
        outside = ~H

        def walk(start: int, used: int, used_a: int, spent: int, chosen: list[int], partial: float) -> None:
            nonlocal best
            if len(chosen) >= 3 and len(chosen) % 2 == 1:
                slack = base + partial
                candidate = _Best(
                    slack,
                    len(chosen),
                    tuple(_bits(H)),
                    tuple(tuple(_bits(T)) for T in chosen),
                )
                if slack < -tol and candidate.beats(best):
                    best = candidate
            room = min(h - used_a, budget - spent)
            extra = _extra_teeth_bound(len(chosen) + 1, room - 1, least) if room >= 1 else None
            if extra is None:
                return
            for idx in range(start, len(cands)):
                T = cands[idx]
                if T & used:
                    continue
                cost = (T & outside).bit_count()
                if spent + cost > budget:
                    continue
                current = best.slack + 1e-9 if best is not None else -tol
                if base + partial + contrib[idx] + extra > current:
                    continue
                chosen.append(T)
                walk(idx + 1, used | T, used_a + (T & H).bit_count(), spent + cost, chosen, partial + contrib[idx])
                chosen.pop()

        walk(0, 0, 0, 0, [], 0.0)

    if best is None:
        return None
    return Comb.of(best.handle, best.teeth)


def comb_separator(c: int, tol: float = COMB_VIOLATION_TOL):
    def separate(x: FractionalSolution, pool: CutPool) -> int:
        comb = separate_combs(x, c, tol)
        if comb is None:
            return 0
        logger.debug(f"Comb_{c}: peine violado t={comb.t} tam={comb.size} lhs={comb_lhs(x, comb):.4f}")
        pool.add(("comb",) + comb.key(), comb_row(x.n, comb))
        return 1

    return separate


def comb_lp(
    X: PointSet,
    c: int,
    fixings: EdgeFixings | None = None,
    tol: float = CUT_VIOLATION_TOL,
    pool: CutPool | None = None,
) -> BoundResult:
    """Comb_c(X | fixings): subtour rows first, comb rows once no subtour row is violated."""
    separators = [subtour_separator(tol), comb_separator(c, COMB_VIOLATION_TOL)]
    return cutting_plane(X, fixings, separators, pool, label=f"Comb_{c}")


# --- Half-integral solutions ---


@dataclass(frozen=True)
class TriangleDecomposition:
    triangles: tuple[tuple[int, int, int], ...]


def is_half_integral(x: FractionalSolution, tol: float = HALF_TOL) -> bool:
    doubled = x.matrix * 2.0
    return bool(np.all(np.abs(doubled - np.round(doubled)) <= 2 * tol) and np.all(np.round(doubled) <= 2)
                and np.all(np.round(doubled) >= 0))


def triangle_decompose(x: FractionalSolution, tol: float = HALF_TOL) -> TriangleDecomposition:
    """Split the weight-1/2 edges into edge-disjoint triangles."""
    if not is_half_integral(x, tol):
        raise InvalidArgumentError("La solucion no es semientera.")
    halves = {(i, j) for (i, j), w in x.support(tol).items() if abs(w - 0.5) <= tol}
    if len(halves) % 3:
        raise NotDecomposableError(f"{len(halves)} aristas de peso 1/2 no se reparten en triangulos.")

    def search(remaining: frozenset) -> list[tuple[int, int, int]] | None:
        if not remaining:
            return []
        u, v = min(remaining)
        for w in range(x.n):
            if w in (u, v):
                continue
            uw = (min(u, w), max(u, w))
            vw = (min(v, w), max(v, w))
            if uw in remaining and vw in remaining:
                rest = search(remaining - {(u, v), uw, vw})
                if rest is not None:
                    return [tuple(sorted((u, v, w)))] + rest
        return None

    found = search(frozenset(halves))
    if found is None:
        raise NotDecomposableError("Las aristas de peso 1/2 no forman triangulos disjuntos.")
    return TriangleDecomposition(tuple(sorted(found)))


def check_cut_integrality(x: FractionalSolution, tol: float = HALF_TOL) -> float:
    """Largest distance of x(delta(S)) to an integer over every proper nonempty S (n <= 12)."""
    n = x.n
    if n > 12:
        raise InvalidArgumentError("La verificacion exhaustiva de cortes admite n <= 12.")
    masks = np.arange(1, (1 << n) - 1)
    members = ((masks[:, None] >> np.arange(n)) & 1).astype(np.float64)
    inner = np.einsum("si,ij,sj->s", members, x.matrix, members) / 2.0
    cuts = members @ x.degrees() - 2.0 * inner
    return float(np.abs(cuts - np.round(cuts)).max(initial=0.0))


def random_half_integral_solution(n: int, seed: int | None, max_tries: int = 200) -> FractionalSolution:
    """Random feasible, half-integral, triangle-decomposable solution on n vertices.

    An even number of vertex-disjoint weight-1/2 triangles whose corners are paired at
    random (never within one triangle) by weight-1 paths; the remaining vertices are
    scattered along those paths. Below six vertices the result is a random tour.
    """
    if n < 3:
        raise InvalidArgumentError("Se requieren al menos 3 vertices.")
    rng = np.random.default_rng(seed)
    if n < 6:
        return FractionalSolution.from_tour([int(v) for v in rng.permutation(n)])
    for _ in range(max_tries):
        x = _draw_triangle_paths(n, rng)
        if x is not None and check_feasible(x).passed:
            return x
    raise InvariantError("No se pudo generar una solucion semientera factible.")


def _draw_triangle_paths(n: int, rng: np.random.Generator) -> FractionalSolution | None:
    perm = [int(v) for v in rng.permutation(n)]
    m = 2 * int(rng.integers(1, n // 6 + 1))
    triangles = [perm[3 * i:3 * i + 3] for i in range(m)]
    owner = {v: i for i, tri in enumerate(triangles) for v in tri}

    corners = [int(v) for v in rng.permutation(perm[:3 * m])]
    pairs = list(zip(corners[0::2], corners[1::2]))
    if any(owner[a] == owner[b] for a, b in pairs):
        return None
    paths: list[list[int]] = [[a, b] for a, b in pairs]
    for v in perm[3 * m:]:
        path = paths[int(rng.integers(0, len(paths)))]
        path.insert(int(rng.integers(1, len(path))), v)

    weights: dict[tuple[int, int], float] = {}
    for tri in triangles:
        for a, b in itertools.combinations(tri, 2):
            weights[(min(a, b), max(a, b))] = 0.5
    for path in paths:
        for a, b in zip(path, path[1:]):
            weights[(min(a, b), max(a, b))] = 1.0
    return FractionalSolution.from_edges(n, weights)


# --- Structural lemma validators ---


@dataclass(frozen=True)
class CombViolationReport:
    comb: Comb
    lhs: float
    rhs: int
    slack: float
    violated: bool
    delta_handle: float
    delta_star_handle: float
    delta_teeth: tuple[float, ...]
    e_a_b: tuple[float, ...]
    e_a_handle: tuple[float, ...]
    e_b_outside: tuple[float, ...]
    conditions_hold: bool

    def to_dict(self) -> dict:
        return {
            "comb": self.comb.to_dict(),
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "violated": self.violated,
            "x_delta_H": self.delta_handle,
            "x_delta_star_H": self.delta_star_handle,
            "x_delta_T": list(self.delta_teeth),
            "x_e_A_B": list(self.e_a_b),
            "x_e_A_H_minus_A": list(self.e_a_handle),
            "x_e_B_outside": list(self.e_b_outside),
            "conditions_hold": self.conditions_hold,
        }


def _require_structured(x: FractionalSolution) -> None:
    try:
        triangle_decompose(x)
    except NotDecomposableError as e:
        raise InvalidArgumentError(f"La solucion no se descompone en triangulos: {e}") from e
    if not check_feasible(x).passed:
        raise InvalidArgumentError("La solucion no es factible para Held-Karp.")


def validate_violated_comb_structure(
    x: FractionalSolution,
    comb: Comb,
    tol: float = COMB_VIOLATION_TOL,
) -> CombViolationReport:
    """Measure the six quantities a violated comb must show on a structured half-integral x.

    When the comb is violated and any of them is off, an InvariantError is raised.
    """
    comb.validate(x.n)
    _require_structured(x)
    everything = frozenset(range(x.n))
    lhs = comb_lhs(x, comb)
    delta_h = cut_value(x, comb.handle)
    parts = comb.parts()
    delta_t = tuple(cut_value(x, tooth) for tooth in comb.teeth)
    e_ab = tuple(between(x, A, B) for A, B in parts)
    e_ah = tuple(between(x, A, comb.handle - A) for A, _ in parts)
    e_bo = tuple(
        between(x, B, everything - (comb.handle | tooth))
        for (_, B), tooth in zip(parts, comb.teeth)
    )
    delta_star = delta_h - sum(e_ab)
    violated = lhs < comb.rhs - tol

    def near(value: float, target: float) -> bool:
        return abs(value - target) <= tol

    holds = (
        near(delta_h, comb.t)
        and near(delta_star, 0.0)
        and all(near(v, 2.0) for v in delta_t)
        and all(near(v, 1.0) for v in e_ab)
        and all(near(v, 1.0) for v in e_ah)
        and all(near(v, 1.0) for v in e_bo)
    )
    report = CombViolationReport(
        comb=comb,
        lhs=lhs,
        rhs=comb.rhs,
        slack=lhs - comb.rhs,
        violated=violated,
        delta_handle=delta_h,
        delta_star_handle=delta_star,
        delta_teeth=delta_t,
        e_a_b=e_ab,
        e_a_handle=e_ah,
        e_b_outside=e_bo,
        conditions_hold=holds,
    )
    if violated and not holds:
        logger.error(f"Peine violado sin la estructura esperada: {report.to_dict()}")
        raise InvariantError("Un peine violado no cumple las seis condiciones estructurales.")
    return report


@dataclass(frozen=True)
class CycleWitness:
    u: int
    v: int
    path: tuple[int, ...]


def check_cycle_lemma(x: FractionalSolution, S: Iterable[int], T: Iterable[int], tol: float = COMB_VIOLATION_TOL) -> CycleWitness:
    """Find u, v in S joined by a support path whose inner vertices lie in T - S."""
    S = frozenset(S)
    T = frozenset(T)
    if not S or not S < T:
        raise InvalidArgumentError("Se requiere S subconjunto propio y no vacio de T.")
    if not check_feasible(x).passed:
        raise InvalidArgumentError("La solucion no es factible para Held-Karp.")
    rest = T - S
    for u in S:
        if between(x, [u], rest) > 1.0 + tol:
            raise InvalidArgumentError(f"x(e({u}, T - S)) > 1.")
    m = cut_value(x, S)
    if abs(cut_value(x, T) - (m - 1.0)) > tol or abs(m - round(m)) > tol:
        raise InvalidArgumentError("Se requiere x(delta(S)) = m y x(delta(T)) = m - 1.")

    graph = x.support_graph()
    inner = graph.subgraph(rest)
    for component in sorted(nx.connected_components(inner), key=min):
        touching = sorted({s for s in S for w in component if graph.has_edge(s, w)})
        if len(touching) < 2:
            continue
        u, v = touching[0], touching[1]
        starts = sorted(w for w in component if graph.has_edge(u, w))
        ends = sorted(w for w in component if graph.has_edge(v, w))
        best: list[int] | None = None
        for a in starts:
            for b in ends:
                route = nx.shortest_path(inner, a, b)
                if best is None or len(route) < len(best):
                    best = route
        return CycleWitness(u=u, v=v, path=(u, *best, v))

    logger.error(f"Sin camino testigo para S={sorted(S)} T={sorted(T)}")
    raise InvariantError("No existe el camino que garantiza el lema de ciclos.")

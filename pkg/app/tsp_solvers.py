"""Tour construction: bitmask DP, permutation brute force, nearest neighbour + 2-opt, dissection tours."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from app.config import DP_MAX_N, logger
from app.errors import InvalidArgumentError, InvariantError, SizeLimitError
from app.instance import Dissection, PointSet

BRUTE_FORCE_MAX_N = 10
IMPROVE_TOL = 1e-12


@dataclass(frozen=True)
class Tour:
    order: tuple[int, ...]
    length: float

    def __post_init__(self) -> None:
        if sorted(self.order) != list(range(len(self.order))):
            raise InvalidArgumentError("El orden del tour no es una permutacion.")

    @property
    def edges(self) -> list[tuple[int, int]]:
        n = len(self.order)
        return [tuple(sorted((self.order[i], self.order[(i + 1) % n]))) for i in range(n)]

    def to_dict(self) -> dict:
        return {"order": list(self.order), "length": self.length}


def cycle_length(dist: np.ndarray, order: Sequence[int]) -> float:
    idx = np.asarray(order)
    return float(dist[idx, np.roll(idx, -1)].sum())


def make_tour(X: PointSet, order: Sequence[int]) -> Tour:
    order = tuple(int(v) for v in order)
    return Tour(order, cycle_length(X.dist, order))


def _check_size(n: int) -> None:
    if n < 3:
        raise InvalidArgumentError(f"Se requieren al menos 3 puntos (n={n}).")


# --- Exact solvers ---


def dp_cycle(dist: np.ndarray) -> tuple[float, list[int]]:
    """Minimum Hamiltonian cycle of a (possibly negative) weight matrix, starting at 0.

    dp[mask, j] is the cheapest path from 0 through the vertices of mask ending at j;
    masks are processed by popcount layers with the inner minimum vectorised.
    """
    n = dist.shape[0]
    if n > DP_MAX_N:
        raise SizeLimitError(f"n={n} supera el limite del DP exacto ({DP_MAX_N}).")
    if n < 3:
        raise InvalidArgumentError("El DP requiere n >= 3.")
    m = n - 1
    full = (1 << m) - 1
    inner = dist[1:, 1:]
    masks = np.arange(1 << m)
    popcount = np.zeros(1 << m, dtype=np.int64)
    for b in range(m):
        popcount += (masks >> b) & 1

    dp = np.full((1 << m, m), np.inf)
    parent = np.full((1 << m, m), -1, dtype=np.int8)
    for b in range(m):
        dp[1 << b, b] = dist[0, b + 1]

    for layer in range(2, m + 1):
        layer_masks = masks[popcount == layer]
        for b in range(m):
            sel = layer_masks[(layer_masks >> b) & 1 == 1]
            prev = sel ^ (1 << b)
            cand = dp[prev] + inner[:, b][None, :]
            best = np.argmin(cand, axis=1)
            dp[sel, b] = cand[np.arange(sel.size), best]
            parent[sel, b] = best

    closing = dp[full] + dist[1:, 0]
    last = int(np.argmin(closing))
    total = float(closing[last])

    path = []
    mask = full
    node = last
    while node >= 0:
        path.append(node + 1)
        prev_node = int(parent[mask, node])
        mask ^= 1 << node
        node = prev_node
    order = [0] + path[::-1]
    return total, order


def exact_tsp_dp(X: PointSet) -> Tour:
    """Optimal tour by Held-Karp dynamic programming (3 <= n <= DP_MAX_N)."""
    _check_size(X.n)
    if X.n == 3:
        return make_tour(X, [0, 1, 2])
    _, order = dp_cycle(X.dist)
    return make_tour(X, order)


def brute_force_tsp(X: PointSet) -> Tour:
    """Permutation oracle; each cycle is visited once per direction and start."""
    _check_size(X.n)
    if X.n > BRUTE_FORCE_MAX_N:
        raise SizeLimitError(f"n={X.n} supera el limite de fuerza bruta ({BRUTE_FORCE_MAX_N}).")
    dist = X.dist
    best_len = math.inf
    best_order: tuple[int, ...] = ()
    for perm in itertools.permutations(range(1, X.n)):
        if perm[0] > perm[-1]:
            continue
        order = (0,) + perm
        length = cycle_length(dist, order)
        if length < best_len - IMPROVE_TOL:
            best_len = length
            best_order = order
    return Tour(best_order, best_len)


# --- Heuristics ---


def nearest_neighbour(dist: np.ndarray, start: int) -> list[int]:
    """Greedy cycle from `start`; ties go to the smallest label."""
    n = dist.shape[0]
    visited = np.zeros(n, dtype=bool)
    order = [start]
    visited[start] = True
    current = start
    for _ in range(n - 1):
        row = np.where(visited, np.inf, dist[current])
        current = int(np.argmin(row))
        visited[current] = True
        order.append(current)
    return order


def two_opt(order: Sequence[int], dist: np.ndarray) -> list[int]:
    """2-opt local search to a local optimum (best move per first edge, repeat until stable)."""
    tour = np.array(order, dtype=np.int64)
    n = tour.size
    if n < 4:
        return tour.tolist()
    improved = True
    while improved:
        improved = False
        for i in range(n - 2):
            a, b = tour[i], tour[i + 1]
            js = np.arange(i + 2, n if i > 0 else n - 1)
            if js.size == 0:
                continue
            c = tour[js]
            d = tour[(js + 1) % n]
            delta = dist[a, c] + dist[b, d] - dist[a, b] - dist[c, d]
            pick = int(np.argmin(delta))
            if delta[pick] < -IMPROVE_TOL:
                j = int(js[pick])
                tour[i + 1:j + 1] = tour[i + 1:j + 1][::-1]
                improved = True
    return tour.tolist()


def is_two_opt_optimal(order: Sequence[int], dist: np.ndarray, tol: float = 1e-9) -> bool:
    tour = list(order)
    n = len(tour)
    for i in range(n - 2):
        for j in range(i + 2, n if i > 0 else n - 1):
            a, b, c, d = tour[i], tour[i + 1], tour[j], tour[(j + 1) % n]
            if dist[a, c] + dist[b, d] - dist[a, b] - dist[c, d] < -tol:
                return False
    return True


def heuristic_cycle(dist: np.ndarray, start: int = 0) -> list[int]:
    return two_opt(nearest_neighbour(dist, start), dist)


def heuristic_tour(X: PointSet, seed: int | None = 0) -> Tour:
    """Nearest neighbour from a seeded start, then 2-opt."""
    _check_size(X.n)
    start = int(np.random.default_rng(seed).integers(X.n))
    return make_tour(X, heuristic_cycle(X.dist, start))


def forced_cycle(dist: np.ndarray, forced: Sequence[tuple[int, int]], exact: bool) -> tuple[float, list[int]]:
    """Cheapest cycle through every vertex that uses all `forced` edges.

    Forced edges are priced at -BIG so any optimal cycle takes them; the returned length
    excludes them.
    """
    n = dist.shape[0]
    big = 4.0 * n * float(np.abs(dist).max() + 1.0)
    priced = dist.copy()
    for u, v in forced:
        priced[u, v] = priced[v, u] = -big
    if exact:
        _, order = dp_cycle(priced)
    else:
        start = forced[0][0] if forced else 0
        order = heuristic_cycle(priced, start)
    taken = {tuple(sorted((order[i], order[(i + 1) % n]))) for i in range(n)}
    missing = [e for e in forced if tuple(sorted(e)) not in taken]
    if missing:
        raise InvariantError(f"El ciclo no usa las aristas forzadas {missing}.")
    length = cycle_length(priced, order) + big * len(forced)
    return length, order


def path_through(dist: np.ndarray, members: Sequence[int], start: int, end: int) -> list[int]:
    """Hamiltonian path over `members` from start to end (nearest neighbour + 2-opt)."""
    members = list(members)
    if start == end:
        raise InvalidArgumentError("El camino requiere extremos distintos.")
    if len(members) == 2:
        return [start, end]
    local = {v: pos for pos, v in enumerate(members)}
    sub = dist[np.ix_(members, members)]
    _, cycle = forced_cycle(sub, [(local[end], local[start])], exact=False)
    pos = cycle.index(local[start])
    rotated = cycle[pos:] + cycle[:pos]
    if rotated[-1] != local[end]:
        rotated = [rotated[0]] + rotated[1:][::-1]
    return [members[i] for i in rotated]


# --- Dissection tours ---


@dataclass(frozen=True)
class DissectionTour:
    tour: Tour
    dissection: Dissection
    conformance: dict[str, bool]

    @property
    def conforms(self) -> bool:
        return all(self.conformance.values())


def dissection_tour(X: PointSet, dissection: Dissection) -> DissectionTour:
    """Two passes over the snake order: forward through x^1..x^3 paths, back along x^4-x^2 edges."""
    s = dissection.s
    if s < 2 or len(dissection.box_of) != X.n:
        raise InvalidArgumentError("Diseccion invalida para esta instancia.")
    dist = X.dist
    ip = dissection.interface_points
    members = dissection.members

    forward: list[int] = []
    first = path_through(dist, members[0], ip[0][4], ip[0][3])
    forward.extend(first)
    for j in range(1, s - 1):
        inner = [v for v in members[j] if v not in (ip[j][2], ip[j][4])]
        forward.extend(path_through(dist, inner, ip[j][1], ip[j][3]))
    forward.extend(path_through(dist, members[s - 1], ip[s - 1][1], ip[s - 1][2]))

    backward: list[int] = []
    for j in range(s - 2, 0, -1):
        backward.extend([ip[j][4], ip[j][2]])
    order = forward + backward

    tour = make_tour(X, order)
    conformance = check_dissection_tour(X, tour.order, dissection)
    if not all(conformance.values()):
        logger.error(f"Tour de diseccion no conforme: {conformance}")
        raise InvariantError("El tour de diseccion no cumple las propiedades estructurales.")
    return DissectionTour(tour=tour, dissection=dissection, conformance=conformance)


def _adjacent(pos: dict[int, int], n: int, a: int, b: int) -> bool:
    return (pos[a] - pos[b]) % n in (1, n - 1)


def _joined_within(order: Sequence[int], pos: dict[int, int], a: int, b: int, box: set[int]) -> bool:
    """Some arc of the cycle from a to b has all its vertices inside `box`."""
    n = len(order)
    for step in (1, -1):
        i = pos[a]
        ok = True
        while order[i] != b:
            i = (i + step) % n
            if order[i] not in box:
                ok = False
                break
        if ok:
            return True
    return False


def check_dissection_tour(X: PointSet, order: Sequence[int], dissection: Dissection) -> dict[str, bool]:
    """Independent check of the six restricted-tour properties on a cycle."""
    n = X.n
    order = list(order)
    if sorted(order) != list(range(n)):
        raise InvalidArgumentError("El orden no es un ciclo Hamiltoniano.")
    pos = {v: i for i, v in enumerate(order)}
    ip = dissection.interface_points
    boxes = [set(m) for m in dissection.members]
    s = dissection.s
    return {
        "first_box_path": _joined_within(order, pos, ip[0][4], ip[0][3], boxes[0]),
        "forward_links": all(_adjacent(pos, n, ip[j][3], ip[j + 1][1]) for j in range(s - 1)),
        "middle_forward_paths": all(
            _joined_within(order, pos, ip[j][1], ip[j][3], boxes[j]) for j in range(1, s - 1)
        ),
        "last_box_path": _joined_within(order, pos, ip[s - 1][1], ip[s - 1][2], boxes[s - 1]),
        "backward_links": all(_adjacent(pos, n, ip[j][2], ip[j - 1][4]) for j in range(1, s)),
        "middle_backward_paths": all(
            _joined_within(order, pos, ip[j][2], ip[j][4], boxes[j]) for j in range(1, s - 1)
        ),
    }

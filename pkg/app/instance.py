"""Point sets: random instances, the ring gadget, dissection boxes and approximate copies."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from app.config import GEOMETRY_TOL, logger
from app.errors import InvalidArgumentError, UnderfilledBoxError

OUTER_RADIUS = 4.0
INNER_RADIUS = 1.0
GAP_OFFSET = 2.0
TRIANGLE_SIDE = 0.3


@dataclass(frozen=True, eq=False)
class PointSet:
    """Finite labeled point set in R^d; labels are the row indices 0..n-1."""

    points: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.points, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidArgumentError("Los puntos deben formar una matriz n x d.")
        if arr.shape[1] < 2:
            raise InvalidArgumentError(f"Dimension {arr.shape[1]} < 2.")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("Coordenadas no finitas.")
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    @property
    def labels(self) -> range:
        return range(self.n)

    @cached_property
    def dist(self) -> np.ndarray:
        """Full Euclidean distance matrix."""
        matrix = cdist(self.points, self.points)
        matrix.setflags(write=False)
        return matrix

    def distance(self, i: int, j: int) -> float:
        return float(self.dist[i, j])

    def subset(self, labels: Sequence[int]) -> "PointSet":
        """Points of `labels`, relabeled 0..len-1 in the given order."""
        return PointSet(self.points[list(labels)])


@dataclass(frozen=True)
class GadgetMeta:
    """Label layout of a ring gadget (or of a copy of it inside a larger instance)."""

    k: int
    outer_ids: tuple[int, ...]
    inner_ids: tuple[int, ...]
    gap_ids: tuple[int, int]
    scale: float = 1.0
    outer_radius: float = OUTER_RADIUS
    inner_radius: float = INNER_RADIUS

    def __post_init__(self) -> None:
        if len(self.outer_ids) != 2 * self.k or len(self.inner_ids) != self.k:
            raise InvalidArgumentError("Anillos del gadget con tamano incorrecto.")
        if len(self.gap_ids) != 2:
            raise InvalidArgumentError("El gadget necesita exactamente dos puntos de hueco.")
        if len(set(self.all_ids)) != 3 * self.k + 2:
            raise InvalidArgumentError("Etiquetas del gadget repetidas.")
        if self.scale <= 0:
            raise InvalidArgumentError("La escala del gadget debe ser positiva.")

    @property
    def all_ids(self) -> tuple[int, ...]:
        return self.outer_ids + self.inner_ids + self.gap_ids

    def relabel(self, mapping: Sequence[int] | dict[int, int]) -> "GadgetMeta":
        """Meta of the same gadget after mapping every label through `mapping`."""
        return GadgetMeta(
            k=self.k,
            outer_ids=tuple(mapping[i] for i in self.outer_ids),
            inner_ids=tuple(mapping[i] for i in self.inner_ids),
            gap_ids=(mapping[self.gap_ids[0]], mapping[self.gap_ids[1]]),
            scale=self.scale,
            outer_radius=self.outer_radius,
            inner_radius=self.inner_radius,
        )


@dataclass(frozen=True, eq=False)
class CopySpec:
    """Template plus the (eps, D) tolerances of an approximate isolated copy."""

    template: PointSet
    eps: float
    D: float

    def __post_init__(self) -> None:
        if self.eps <= 0 or self.D <= 0:
            raise InvalidArgumentError("eps y D deben ser positivos.")
        if self.template.n == 0:
            raise InvalidArgumentError("Plantilla vacia.")


@dataclass(frozen=True)
class CopyMatch:
    """One accepted copy: `mapping[i]` is the X label matched to template point i."""

    mapping: tuple[int, ...]
    residual: float
    isolation: float

    @property
    def labels(self) -> frozenset[int]:
        return frozenset(self.mapping)


@dataclass(frozen=True)
class Dissection:
    """Grid dissection of the unit cube walked in snake order.

    `order[j]` is the grid coordinate of the j-th box of the walk and
    `interface_points[j]` maps the superscripts 1..4 to point labels. The first box
    only carries superscripts 3 and 4, the last one only 1 and 2.
    """

    K_box: float
    s: int
    per_axis: int
    side: float
    box_of: tuple[int, ...]
    order: tuple[tuple[int, ...], ...]
    members: tuple[tuple[int, ...], ...]
    interface_points: tuple[dict[int, int], ...]

    def position_of(self, label: int) -> int:
        return self.box_of[label]


def generate_uniform(n: int, d: int, seed: int | None) -> PointSet:
    """n i.i.d. uniform points in [0,1]^d."""
    if n < 1:
        raise InvalidArgumentError("n debe ser >= 1.")
    if d < 2:
        raise InvalidArgumentError("d debe ser >= 2.")
    rng = np.random.default_rng(seed)
    return PointSet(rng.random((n, d)))


def rescale(X: PointSet, factor: float) -> PointSet:
    if factor <= 0:
        raise InvalidArgumentError("El factor de escala debe ser positivo.")
    return PointSet(X.points * factor)


def collinear_points(n: int, seed: int | None) -> PointSet:
    """Control instance: n points on a horizontal segment of [0,1]^2."""
    rng = np.random.default_rng(seed)
    xs = np.sort(rng.random(n))
    return PointSet(np.column_stack([xs, np.full(n, 0.5)]))


def build_gadget(k: int, scale: float = 1.0) -> tuple[PointSet, GadgetMeta]:
    """Two rings (2k points at radius 4, k at radius 1) plus the gap points (+-2, 0).

    Labels: outer ring 0..2k-1 counter-clockwise from angle 0, inner ring 2k..3k-1,
    then (2,0) and (-2,0).
    """
    if k < 4:
        raise InvalidArgumentError(f"k={k} < 4: anillos demasiado ralos para el gadget.")
    if scale <= 0:
        raise InvalidArgumentError("La escala debe ser positiva.")

    outer_angles = np.arange(2 * k) * (math.pi / k)
    inner_angles = np.arange(k) * (2 * math.pi / k)
    outer = OUTER_RADIUS * np.column_stack([np.cos(outer_angles), np.sin(outer_angles)])
    inner = INNER_RADIUS * np.column_stack([np.cos(inner_angles), np.sin(inner_angles)])
    gaps = np.array([[GAP_OFFSET, 0.0], [-GAP_OFFSET, 0.0]])
    points = np.vstack([outer, inner, gaps]) * scale

    meta = GadgetMeta(
        k=k,
        outer_ids=tuple(range(2 * k)),
        inner_ids=tuple(range(2 * k, 3 * k)),
        gap_ids=(3 * k, 3 * k + 1),
        scale=scale,
    )
    return PointSet(points), meta


def triangle_template(side: float = TRIANGLE_SIDE, d: int = 2) -> PointSet:
    """Equilateral triangle in the first two coordinates; the copy-density template."""
    if side <= 0:
        raise InvalidArgumentError("El lado del triangulo debe ser positivo.")
    if d < 2:
        raise InvalidArgumentError("d debe ser >= 2.")
    points = np.zeros((3, d))
    points[1, 0] = side
    points[2, :2] = (side / 2, side * math.sqrt(3) / 2)
    return PointSet(points)


# --- Approximate copies ---


def _orthogonal_fits(A: np.ndarray, B: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Least-squares rigid motions (proper and improper) with B ~ A @ R.T + t."""
    ca = A.mean(axis=0)
    cb = B.mean(axis=0)
    H = (A - ca).T @ (B - cb)
    U, _, Vt = np.linalg.svd(H)
    fits = []
    for sign in (1.0, -1.0):
        flip = np.ones(A.shape[1])
        base = np.linalg.det(Vt.T @ U.T)
        flip[-1] = sign * (1.0 if base >= 0 else -1.0)
        R = Vt.T @ np.diag(flip) @ U.T
        fits.append((R, cb - ca @ R.T))
    return fits


def _best_residual(template: np.ndarray, target: np.ndarray) -> float:
    best = math.inf
    for R, t in _orthogonal_fits(template, target):
        residual = float(np.max(np.linalg.norm(template @ R.T + t - target, axis=1)))
        best = min(best, residual)
    return best


def _isolation(X: PointSet, labels: Sequence[int], tree: cKDTree | None = None) -> float:
    """Distance from the labeled points to the nearest point of X outside them."""
    inside = set(labels)
    if len(inside) >= X.n:
        return math.inf
    tree = tree if tree is not None else cKDTree(X.points)
    k = min(X.n, len(inside) + 1)
    dists, idx = tree.query(X.points[list(inside)], k=k)
    dists = np.atleast_2d(dists)
    idx = np.atleast_2d(idx)
    best = math.inf
    for row_d, row_i in zip(dists, idx):
        for dist, j in zip(row_d, row_i):
            if int(j) not in inside:
                best = min(best, float(dist))
                break
    return best


def verify_copy(X: PointSet, template: PointSet, mapping: Sequence[int], eps: float, D: float) -> bool:
    """Independent check of one (eps, D)-copy given the bijection template -> X."""
    if len(mapping) != template.n or len(set(mapping)) != template.n:
        return False
    if template.n == 1:
        residual = 0.0
    else:
        residual = _best_residual(template.points, X.points[list(mapping)])
    return residual < eps and _isolation(X, mapping) > D


def _diameter_pair(template: PointSet) -> tuple[int, int]:
    flat = int(np.argmax(template.dist))
    a, b = divmod(flat, template.n)
    return (min(a, b), max(a, b))


def _third_anchor(template: PointSet, a: int, b: int) -> int | None:
    """Template point farthest from the line through the diameter pair."""
    if template.n < 3:
        return None
    P = template.points
    axis = (P[b] - P[a]) / np.linalg.norm(P[b] - P[a])
    rel = P - P[a]
    off_line = np.linalg.norm(rel - np.outer(rel @ axis, axis), axis=1)
    off_line[[a, b]] = -1.0
    return int(np.argmax(off_line))


def find_copies(X: PointSet, spec: CopySpec) -> list[CopyMatch]:
    """Greedy maximal family of pairwise disjoint (eps, D)-copies of the template.

    Candidates are aligned on the template's diameter pair (plus a third anchor when
    d >= 3), remaining points are matched greedily to their nearest free point, the
    motion is refit on the full correspondence and the copy is accepted only if every
    residual is < eps and the copy is farther than D from the rest of X.
    """
    template = spec.template
    if template.dim != X.dim:
        raise InvalidArgumentError(f"Dimension de plantilla {template.dim} != {X.dim}.")
    eps, D = spec.eps, spec.D
    tree = cKDTree(X.points)
    used = np.zeros(X.n, dtype=bool)
    found: list[CopyMatch] = []

    if template.n == 1:
        for label in range(X.n):
            isolation = _isolation(X, [label], tree)
            if isolation > D:
                found.append(CopyMatch(mapping=(label,), residual=0.0, isolation=isolation))
        return found

    a, b = _diameter_pair(template)
    third = _third_anchor(template, a, b) if X.dim >= 3 else None
    diam = float(template.dist[a, b])
    # Both endpoints may each move by < eps, so the candidate window is 2*eps wide.
    window = 2 * eps
    reach = diam + window
    neighbours = tree.query_ball_point(X.points, r=reach)

    for i in range(X.n):
        if used[i]:
            continue
        for j in sorted(neighbours[i]):
            if j <= i or used[j] or used[i]:
                continue
            if abs(float(np.linalg.norm(X.points[i] - X.points[j])) - diam) >= window:
                continue
            for p, q in ((i, j), (j, i)):
                local = [c for c in neighbours[p] if not used[c]]
                match = _try_anchor(X, template, (a, b, third), (p, q), local, eps, D, tree)
                if match is not None:
                    found.append(match)
                    used[list(match.mapping)] = True
                    break

    logger.debug(f"find_copies: {len(found)} copias aceptadas de {X.n} puntos.")
    return found


def _try_anchor(
    X: PointSet,
    template: PointSet,
    anchors: tuple[int, int, int | None],
    pair: tuple[int, int],
    local: list[int],
    eps: float,
    D: float,
    tree: cKDTree,
) -> CopyMatch | None:
    P = X.points
    T = template.points
    a, b, third = anchors
    p, q = pair
    anchor_sets: list[tuple[list[int], list[int]]] = []
    if third is None:
        anchor_sets.append(([a, b], [p, q]))
    else:
        da = float(template.dist[third, a])
        db = float(template.dist[third, b])
        for r in local:
            if r in (p, q):
                continue
            if abs(np.linalg.norm(P[r] - P[p]) - da) < 2 * eps and abs(np.linalg.norm(P[r] - P[q]) - db) < 2 * eps:
                anchor_sets.append(([a, b, third], [p, q, r]))

    for t_idx, x_idx in anchor_sets:
        for R, t in _orthogonal_fits(T[t_idx], P[x_idx]):
            mapped = T @ R.T + t
            mapping = [-1] * len(T)
            for ti, xi in zip(t_idx, x_idx):
                mapping[ti] = xi
            free = [c for c in local if c not in x_idx]
            if len(free) < len(T) - len(x_idx):
                continue
            for ti in range(len(T)):
                if mapping[ti] >= 0:
                    continue
                dists = np.linalg.norm(P[free] - mapped[ti], axis=1)
                mapping[ti] = free.pop(int(np.argmin(dists)))
            residual = _best_residual(T, P[mapping])
            if residual >= eps:
                continue
            isolation = _isolation(X, mapping, tree)
            if isolation <= D:
                continue
            return CopyMatch(mapping=tuple(mapping), residual=residual, isolation=isolation)
    return None


def plant_gadget_copies(
    X: PointSet,
    k: int,
    count: int,
    D: float,
    seed: int | None,
    scale: float = 1.0,
) -> tuple[PointSet, list[GadgetMeta]]:
    """Place `count` exact gadget copies into a 2-d instance, each isolated by more than D.

    Base points closer than D to a planted copy are dropped; base labels keep their order
    and the copies are appended after them.
    """
    if X.dim != 2:
        raise InvalidArgumentError("Solo se plantan gadgets en dimension 2.")
    gadget, meta = build_gadget(k, scale)
    radius = OUTER_RADIUS * scale
    rng = np.random.default_rng(seed)
    lo = X.points.min(axis=0)
    hi = X.points.max(axis=0)
    centers: list[np.ndarray] = []
    attempts = 0
    while len(centers) < count:
        attempts += 1
        if attempts > 1000 * max(count, 1):
            raise InvalidArgumentError("No hay espacio para plantar las copias pedidas.")
        center = lo + rng.random(2) * (hi - lo)
        if all(np.linalg.norm(center - c) > 2 * radius + D for c in centers):
            centers.append(center)

    keep = np.ones(X.n, dtype=bool)
    for center in centers:
        keep &= np.linalg.norm(X.points - center, axis=1) > radius + D + GEOMETRY_TOL
    base = X.points[keep]
    blocks = [base]
    metas = []
    offset = base.shape[0]
    for center in centers:
        blocks.append(gadget.points + center)
        metas.append(meta.relabel({i: offset + i for i in meta.all_ids}))
        offset += gadget.n
    if not keep.all():
        logger.info(f"Plantado: {int((~keep).sum())} puntos base eliminados por aislamiento.")
    return PointSet(np.vstack(blocks)), metas


# --- Dissection ---


def _snake(per_axis: int, dim: int) -> list[tuple[int, ...]]:
    """Boustrophedon walk of a per_axis^dim grid; consecutive cells share a facet."""
    if dim == 1:
        return [(i,) for i in range(per_axis)]
    inner = _snake(per_axis, dim - 1)
    walk: list[tuple[int, ...]] = []
    for head in range(per_axis):
        block = inner if head % 2 == 0 else inner[::-1]
        walk.extend((head,) + cell for cell in block)
    return walk


def shares_facet(a: Sequence[int], b: Sequence[int]) -> bool:
    diffs = [abs(x - y) for x, y in zip(a, b)]
    return sum(diffs) == 1


def dissect(X: PointSet, K_box: float) -> Dissection:
    """Split [0,1]^d into about n / (K_box log n) boxes and pick interface points."""
    if K_box <= 0:
        raise InvalidArgumentError("K_box debe ser positivo.")
    n, d = X.n, X.dim
    if n < 8:
        raise InvalidArgumentError("Muy pocos puntos para disecar.")
    if X.points.min() < -GEOMETRY_TOL or X.points.max() > 1 + GEOMETRY_TOL:
        raise InvalidArgumentError("La diseccion requiere puntos en [0,1]^d.")

    s_target = int(math.floor(n / (K_box * math.log(n))))
    per_axis = int(math.floor(s_target ** (1.0 / d) + 1e-9)) if s_target > 0 else 0
    if per_axis < 1 or per_axis ** d < 2:
        raise InvalidArgumentError(f"K_box={K_box} deja menos de dos cajas para n={n}.")

    order = _snake(per_axis, d)
    position = {cell: j for j, cell in enumerate(order)}
    cells = np.minimum(np.floor(X.points * per_axis).astype(int), per_axis - 1)
    cells = np.maximum(cells, 0)
    box_of = tuple(position[tuple(int(c) for c in row)] for row in cells)

    buckets: list[list[int]] = [[] for _ in order]
    for label, j in enumerate(box_of):
        buckets[j].append(label)
    for j, bucket in enumerate(buckets):
        if len(bucket) < 4:
            raise UnderfilledBoxError(j, len(bucket))

    last = len(order) - 1
    interface: list[dict[int, int]] = []
    for j, bucket in enumerate(buckets):
        lowest = sorted(bucket)
        if j == 0:
            interface.append({3: lowest[0], 4: lowest[1]})
        elif j == last:
            interface.append({1: lowest[0], 2: lowest[1]})
        else:
            interface.append({1: lowest[0], 2: lowest[1], 3: lowest[2], 4: lowest[3]})

    return Dissection(
        K_box=K_box,
        s=len(order),
        per_axis=per_axis,
        side=1.0 / per_axis,
        box_of=box_of,
        order=tuple(order),
        members=tuple(tuple(sorted(bucket)) for bucket in buckets),
        interface_points=tuple(interface),
    )


def tour_crossing_pairs(tour: Sequence[int], S: Iterable[int]) -> int:
    """Number of entry/exit edge pairs of a Hamiltonian cycle across the cut of S."""
    order = list(tour)
    inside = set(S)
    if not inside or len(inside) >= len(order) or not inside <= set(order):
        raise InvalidArgumentError("S debe ser un subconjunto propio y no vacio del tour.")
    if len(set(order)) != len(order):
        raise InvalidArgumentError("El tour repite vertices.")
    crossings = 0
    for pos, u in enumerate(order):
        v = order[(pos + 1) % len(order)]
        if (u in inside) != (v in inside):
            crossings += 1
    return crossings // 2

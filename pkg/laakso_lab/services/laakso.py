"""
Laakso Graph Service
Exact finite approximations G_n of Laakso spaces: vertices, metric, cubes, measure.

Heights are integers in units of 1/D with D = N_1···N_{n+1}; every distance that
leaves this module is a Fraction.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from laakso_lab.core.config import settings
from laakso_lab.core.errors import LevelRangeError, ParameterError, VertexNotFoundError

logger = logging.getLogger(__name__)

WILDCARD = 0
# float64 integer arithmetic stays exact below this bound
EXACT_LIMIT = 2**53

Digits = Tuple[int, ...]


class LVertex(NamedTuple):
    """A vertex as (height numerator, digit word); digit 0 is the wormhole wildcard."""

    height: int
    digits: Digits


VertexRef = Union[int, LVertex, Tuple[int, Sequence[int]]]


# ── Parameters ──────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class LaaksoParams:
    """Branching M and grid subdivisions N_1..N_{n+1} of the depth-n approximation."""

    M: int
    N: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "N", tuple(int(x) for x in self.N))
        if self.M < 2:
            raise ParameterError(f"M must be at least 2, got {self.M}", field="M")
        if len(self.N) < 2:
            raise ParameterError("N needs n+1 >= 2 entries", field="N")
        for i, value in enumerate(self.N, start=1):
            if value < 4 or value % 2:
                raise ParameterError(f"N_{i} = {value} must be even and >= 4", field="N")

    @classmethod
    def constant(cls, M: int, N: int, n: int) -> "LaaksoParams":
        return cls(M, (N,) * (n + 1))

    @property
    def n(self) -> int:
        return len(self.N) - 1

    @cached_property
    def D(self) -> int:
        return math.prod(self.N)

    def prefix_product(self, i: int) -> int:
        """N_1···N_i, with the empty product at i = 0."""
        return math.prod(self.N[:i])

    def unit(self, i: int) -> int:
        """Grid length of a level-i interval; unit(0) = D."""
        if not 0 <= i <= self.n + 1:
            raise LevelRangeError(i, 0, self.n + 1)
        return self.D // self.prefix_product(i)

    def delta(self, i: int) -> Fraction:
        return Fraction(1, self.prefix_product(i))

    @property
    def is_constant(self) -> bool:
        return len(set(self.N)) == 1

    @cached_property
    def _geometric_N(self) -> float:
        return float(np.exp(np.mean(np.log(self.N))))

    @property
    def theta(self) -> float:
        """Scale ratio; for non-constant N this is the geometric-mean value."""
        if self.is_constant:
            return 1.0 / self.N[0]
        return 1.0 / self._geometric_N

    @property
    def s(self) -> float:
        base = self.N[0] if self.is_constant else self._geometric_N
        return 1.0 + math.log(self.M) / math.log(base)

    @property
    def dimension_is_approximate(self) -> bool:
        return not self.is_constant

    def level_of(self, idx: int) -> Optional[int]:
        """Wormhole level of height idx/D, or None at the ends 0 and 1."""
        if idx <= 0 or idx >= self.D:
            return None
        for i in range(1, self.n + 2):
            if idx % self.unit(i) == 0:
                return i
        return None  # pragma: no cover

    def vertex_count(self) -> int:
        wormhole_heights = self.prefix_product(self.n) - 1
        return (self.D + 1 - wormhole_heights) * self.M**self.n + wormhole_heights * self.M ** (self.n - 1)

    def edge_count(self) -> int:
        return self.D * self.M**self.n

    def wormhole_bracket(self, j: int, lo: int, hi: int) -> Tuple[Optional[int], Optional[int], Optional[int]]:
        """Nearest W_j points around [lo, hi]: (below, inside, above).

        `inside` is the least W_j point in [lo, hi]; when it exists the other two are None.
        """
        step, coarse = self.unit(j), self.unit(j - 1)

        def valid(c: int) -> bool:
            return 0 < c < self.D and c % coarse != 0

        c = -(-lo // step) * step
        if c % coarse == 0:
            c += step
        if valid(c) and c <= hi:
            return None, c, None
        below = (lo // step) * step
        if below % coarse == 0:
            below -= step
        above = -(-hi // step) * step
        if above % coarse == 0:
            above += step
        return (below if valid(below) else None), None, (above if valid(above) else None)

    def wormhole_distance(self, j: int, idx: int) -> int:
        """Grid distance from height idx to W_j."""
        below, inside, above = self.wormhole_bracket(j, idx, idx)
        if inside is not None:
            return 0
        candidates = [idx - below] if below is not None else []
        if above is not None:
            candidates.append(above - idx)
        return min(candidates)


def wormholes(params: LaaksoParams, i: int) -> List[Fraction]:
    """Sorted wormhole heights W_i^h of level i (1 <= i <= n+1)."""
    if not 1 <= i <= params.n + 1:
        raise LevelRangeError(i, 1, params.n + 1)
    step, coarse = params.unit(i), params.unit(i - 1)
    return [Fraction(k, params.D) for k in range(step, params.D, step) if k % coarse != 0]


# ── Cubes ───────────────────────────────────────────────────────────────────


@dataclass(frozen=True, order=True)
class Cube:
    """Q_{I,a}: interval I = [m δ_i, (m+1) δ_i] and digit prefix a of length i."""

    level: int
    m: int
    prefix: Digits


def _encode(words: np.ndarray, M: int) -> np.ndarray:
    """Base-M code of digit rows with entries in 1..M (lexicographic rank)."""
    if words.shape[1] == 0:
        return np.zeros(words.shape[0], dtype=np.int64)
    powers = M ** np.arange(words.shape[1] - 1, -1, -1, dtype=np.int64)
    return (words.astype(np.int64) - 1) @ powers


# ── Shortest paths ──────────────────────────────────────────────────────────


class ShortestPathGraph:
    """Integer-weighted undirected graph; distances are exact multiples of 1/scale."""

    matrix: sparse.csr_matrix
    scale: int

    def distances_from(
        self,
        sources: Union[int, Sequence[int], np.ndarray],
        limit: Optional[Union[Fraction, float]] = None,
        min_only: bool = False,
    ) -> np.ndarray:
        """Distances in grid units (multiply by 1/scale); np.inf beyond `limit`."""
        bound = np.inf
        if limit is not None:
            # distances are integers, the half keeps boundary points inside the ball
            bound = math.floor(limit * self.scale) + 0.5
        return csgraph.dijkstra(self.matrix, directed=False, indices=sources, limit=bound, min_only=min_only)

    def to_fraction(self, value: float) -> Fraction:
        return Fraction(int(round(value)), self.scale)

    def units(self, value: Union[Fraction, int]) -> Fraction:
        """Length expressed in grid units."""
        return Fraction(value) * self.scale


# ── Graph ───────────────────────────────────────────────────────────────────


class LaaksoGraph(ShortestPathGraph):
    """The metric graph G_n: vertices (height, digits), unit-grid edges, product measure."""

    def __init__(self, params: LaaksoParams):
        self.params = params
        M, n, D = params.M, params.n, params.D
        self.scale = D

        words = np.array(list(itertools.product(range(1, M + 1), repeat=n)), dtype=np.int64).reshape(-1, n)
        self._templates: Dict[int, np.ndarray] = {-1: words}
        self._codes: Dict[int, np.ndarray] = {-1: _encode(words, M)}
        for p in range(n):
            shorter = np.array(list(itertools.product(range(1, M + 1), repeat=n - 1)), dtype=np.int64)
            # at n = 1 this is the single empty word
            shorter = shorter.reshape(M ** (n - 1), n - 1)
            self._templates[p] = np.insert(shorter, p, WILDCARD, axis=1)
            self._codes[p] = _encode(np.delete(words, p, axis=1), M)

        self.wildcard_position = np.full(D + 1, -1, dtype=np.int64)
        for k in range(1, D):
            level = params.level_of(k)
            if level is not None and level <= n:
                self.wildcard_position[k] = level - 1

        sizes = np.array([len(self._templates[p]) for p in self.wildcard_position], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.num_vertices = int(self.offsets[-1])

        self.heights = np.repeat(np.arange(D + 1, dtype=np.int64), sizes)
        self.digits = np.concatenate([self._templates[p] for p in self.wildcard_position], axis=0)

        index = [self.offsets[k] + self._codes[self.wildcard_position[k]] for k in range(D + 1)]
        self.edge_u = np.concatenate(index[:-1])
        self.edge_v = np.concatenate(index[1:])
        self.edge_low = np.repeat(np.arange(D, dtype=np.int64), len(words))
        self.edge_word = np.tile(words, (D, 1))
        self.num_edges = len(self.edge_u)

        self.edge_length = Fraction(1, D)
        self.edge_measure = Fraction(1, D * M**n)
        self.edge_weight = np.full(self.num_edges, 1.0 / (D * M**n))

        self.matrix = sparse.csr_matrix(
            (np.ones(self.num_edges), (self.edge_u, self.edge_v)),
            shape=(self.num_vertices, self.num_vertices),
        )
        self._cube_labels: Dict[int, np.ndarray] = {}

    # ── vertices ──

    def index_of(self, vertex: VertexRef) -> int:
        if isinstance(vertex, (int, np.integer)):
            if not 0 <= vertex < self.num_vertices:
                raise VertexNotFoundError(int(vertex))
            return int(vertex)
        height, digits = vertex
        digits = tuple(int(d) for d in digits)
        p = self.params
        if not 0 <= height <= p.D or len(digits) != p.n:
            raise VertexNotFoundError((height, digits))
        wildcard = int(self.wildcard_position[height])
        for j, d in enumerate(digits):
            if (d == WILDCARD) != (j == wildcard) or not 0 <= d <= p.M:
                raise VertexNotFoundError((height, digits))
        row = np.array([d for j, d in enumerate(digits) if j != wildcard], dtype=np.int64).reshape(1, -1)
        return int(self.offsets[height] + _encode(row, p.M)[0])

    def vertex(self, index: int) -> LVertex:
        return LVertex(int(self.heights[index]), tuple(int(d) for d in self.digits[index]))

    def vertex_at(self, height: Fraction, digits: Sequence[int]) -> int:
        """Index of the vertex at a rational height."""
        scaled = Fraction(height) * self.params.D
        if scaled.denominator != 1:
            raise VertexNotFoundError((height, tuple(digits)))
        return self.index_of((int(scaled), tuple(digits)))

    def height(self, vertex: VertexRef) -> Fraction:
        return Fraction(int(self.heights[self.index_of(vertex)]), self.params.D)

    @cached_property
    def base_vertex(self) -> int:
        """Height 0, all digits 1."""
        return self.index_of((0, (1,) * self.params.n))

    @cached_property
    def vertex_measure(self) -> np.ndarray:
        """Half the weight of the incident edges; sums to 1."""
        half = self.edge_weight / 2
        return np.bincount(self.edge_u, half, self.num_vertices) + np.bincount(self.edge_v, half, self.num_vertices)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.bincount(self.edge_u, minlength=self.num_vertices) + np.bincount(
            self.edge_v, minlength=self.num_vertices
        )

    def compatible(self, prefix: Sequence[int]) -> np.ndarray:
        """Vertices whose leading digits match `prefix` up to wildcards."""
        mask = np.ones(self.num_vertices, dtype=bool)
        for j, d in enumerate(prefix):
            column = self.digits[:, j]
            mask &= (column == d) | (column == WILDCARD)
        return mask

    def distance_matrix(self) -> np.ndarray:
        """All-pairs distances in grid units; intended for small graphs."""
        return csgraph.dijkstra(self.matrix, directed=False)

    # ── cubes ──

    def _check_level(self, i: int) -> None:
        if not 0 <= i <= self.params.n:
            raise LevelRangeError(i, 0, self.params.n)

    def cube_count(self, i: int) -> int:
        self._check_level(i)
        return self.params.prefix_product(i) * self.params.M**i

    def cube_label(self, cube: Cube) -> int:
        self._check_level(cube.level)
        code = _encode(np.array(cube.prefix, dtype=np.int64).reshape(1, -1), self.params.M)[0]
        return int(cube.m * self.params.M**cube.level + code)

    def cube_from_label(self, i: int, label: int) -> Cube:
        M = self.params.M
        m, code = divmod(int(label), M**i)
        prefix = []
        for _ in range(i):
            code, r = divmod(code, M)
            prefix.append(r + 1)
        return Cube(i, m, tuple(reversed(prefix)))

    def cube_of_edges(self, i: int) -> np.ndarray:
        """Level-i cube label of every edge (each edge lies in exactly one cube)."""
        self._check_level(i)
        if i not in self._cube_labels:
            m = self.edge_low // self.params.unit(i)
            self._cube_labels[i] = m * self.params.M**i + _encode(self.edge_word[:, :i], self.params.M)
        return self._cube_labels[i]

    def cube_interval(self, cube: Cube) -> Tuple[int, int]:
        step = self.params.unit(cube.level)
        return cube.m * step, (cube.m + 1) * step

    def cube_measure(self, cube: Cube) -> Fraction:
        return Fraction(1, self.params.prefix_product(cube.level) * self.params.M**cube.level)

    def edges_in(self, cube: Cube) -> np.ndarray:
        return np.flatnonzero(self.cube_of_edges(cube.level) == self.cube_label(cube))

    def vertices_in(self, cube: Cube) -> np.ndarray:
        lo, hi = self.cube_interval(cube)
        mask = (self.heights >= lo) & (self.heights <= hi) & self.compatible(cube.prefix)
        return np.flatnonzero(mask)

    def boundary_vertices(self, cube: Cube) -> np.ndarray:
        """Vertices of the cube at interval endpoints strictly inside (0, 1)."""
        lo, hi = self.cube_interval(cube)
        members = self.vertices_in(cube)
        h = self.heights[members]
        on_boundary = ((h == lo) | (h == hi)) & (h > 0) & (h < self.params.D)
        return members[on_boundary]

    def level_boundary(self, i: int) -> np.ndarray:
        """Mask of vertices lying on the boundary of some level-i cube."""
        step = self.params.unit(i)
        return (self.heights % step == 0) & (self.heights > 0) & (self.heights < self.params.D)


def build_graph(params: LaaksoParams) -> LaaksoGraph:
    """Construct G_n exactly, refusing sizes above the configured vertex cap."""
    count = params.vertex_count()
    if count > settings.MAX_VERTICES:
        raise ParameterError(
            f"Graph would have {count} vertices (cap {settings.MAX_VERTICES})",
            field="n",
            details={"vertices": count, "cap": settings.MAX_VERTICES},
        )
    if 4 * params.D >= EXACT_LIMIT:
        raise ParameterError("Grid too fine for exact float distances", field="N")
    graph = LaaksoGraph(params)
    logger.debug(f"Built G_{params.n} with M={params.M}, N={params.N}: {graph.num_vertices} vertices")
    return graph


# ── Distances ───────────────────────────────────────────────────────────────


def dist(g: LaaksoGraph, x: VertexRef, y: VertexRef) -> Fraction:
    """Exact shortest-path distance."""
    i, j = g.index_of(x), g.index_of(y)
    if i == j:
        return Fraction(0)
    return g.to_fraction(g.distances_from(i)[j])


def differing_levels(a: Sequence[int], b: Sequence[int]) -> List[int]:
    """Digit levels where both words are defined and disagree."""
    return [j + 1 for j, (s, t) in enumerate(zip(a, b)) if s and t and s != t]


def dist_formula(g: LaaksoGraph, x: VertexRef, y: VertexRef) -> Fraction:
    """Closed-form distance 2ℓ − |h(x) − h(y)| with ℓ the shortest admissible interval."""
    vx, vy = g.vertex(g.index_of(x)), g.vertex(g.index_of(y))
    params = g.params
    lo, hi = sorted((vx.height, vy.height))
    levels = differing_levels(vx.digits, vy.digits)
    if len(levels) > settings.FORMULA_ENUMERATION_CAP:
        logger.debug(f"dist_formula: |Δ| = {len(levels)} above cap, using shortest paths")
        return dist(g, x, y)

    options: List[List[int]] = []
    for j in levels:
        below, inside, above = params.wormhole_bracket(j, lo, hi)
        if inside is None:
            options.append([c for c in (below, above) if c is not None])

    length = hi - lo
    if options:
        length = min(max(hi, *choice) - min(lo, *choice) for choice in itertools.product(*options))
    return Fraction(2 * length - (hi - lo), params.D)


# ── Cube listings ───────────────────────────────────────────────────────────


def cubes(g: LaaksoGraph, i: int) -> List[Cube]:
    """All level-i cubes, ordered by (interval, prefix)."""
    g._check_level(i)
    prefixes = list(itertools.product(range(1, g.params.M + 1), repeat=i))
    return [Cube(i, m, a) for m in range(g.params.prefix_product(i)) for a in prefixes]


def cube_shape_report(g: LaaksoGraph) -> List[Dict[str, object]]:
    """Per-level cube measure against θ^{is}; the ratio is exactly 1 for constant N."""
    rows = []
    p = g.params
    for i in range(p.n + 1):
        measure = g.cube_measure(Cube(i, 0, (1,) * i))
        expected = p.theta ** (i * p.s)
        rows.append(
            {
                "level": i,
                "cubes": g.cube_count(i),
                "measure": measure,
                "theta_power": expected,
                "ratio": float(measure) / expected,
                "approximate": p.dimension_is_approximate,
            }
        )
    return rows

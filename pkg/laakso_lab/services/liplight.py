"""
Lipschitz Light Service
r-components of height preimages in (X, d_η), the class partition of a cube interval,
and the empirical Lipschitz-light constant of the height map.
"""

import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from laakso_lab.core.errors import InvariantViolation, LevelRangeError, ParameterError
from laakso_lab.services.laakso import LaaksoParams, ShortestPathGraph, differing_levels
from laakso_lab.services.shortcuts import EtaGraph, member_array

logger = logging.getLogger(__name__)

Word = Tuple[int, ...]


class UnionFind:
    def __init__(self, size: int):
        self.parent = list(range(size))
        self.rank = [1] * size

    def find(self, u: int) -> int:
        root = u
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[u] != root:  # path compression
            self.parent[u], u = root, self.parent[u]
        return root

    def union(self, u: int, v: int) -> bool:
        root_u, root_v = self.find(u), self.find(v)
        if root_u == root_v:
            return False
        if self.rank[root_u] < self.rank[root_v]:
            root_u, root_v = root_v, root_u
        self.parent[root_v] = root_u
        if self.rank[root_u] == self.rank[root_v]:
            self.rank[root_u] += 1
        return True

    def labels(self) -> np.ndarray:
        return np.array([self.find(u) for u in range(len(self.parent))], dtype=np.int64)


@dataclass
class RComponent:
    members: np.ndarray
    diameter: Fraction


def _components(vertices: np.ndarray, pairwise: np.ndarray, threshold: float, metric: ShortestPathGraph) -> List[RComponent]:
    uf = UnionFind(len(vertices))
    rows, cols = np.nonzero(np.triu(pairwise <= threshold, k=1))
    for a, b in zip(rows, cols):
        uf.union(int(a), int(b))
    labels = uf.labels()
    result = []
    for label in np.unique(labels):
        local = np.flatnonzero(labels == label)
        diameter = metric.to_fraction(pairwise[np.ix_(local, local)].max())
        result.append(RComponent(vertices[local], diameter))
    return result


def r_components(eg: EtaGraph, vertices: Sequence[int], r: Union[Fraction, float], metric: str = "eta") -> List[RComponent]:
    """Classes of the r-chain relation on `vertices`, with diameters in the chosen metric."""
    if metric not in ("base", "eta"):
        raise ParameterError(f"Unknown metric {metric!r}", field="metric")
    if r <= 0:
        raise ParameterError(f"r = {r} must be positive", field="r")
    vertices = np.asarray(sorted(set(int(v) for v in vertices)), dtype=np.int64)
    if len(vertices) == 0:
        return []
    graph: ShortestPathGraph = eg if metric == "eta" else eg.base
    pairwise = graph.distances_from(vertices)[:, vertices]
    threshold = float(r * graph.scale) if isinstance(r, Fraction) else r * graph.scale * (1 + 1e-12)
    return _components(vertices, pairwise, threshold, graph)


# ── Class partition ─────────────────────────────────────────────────────────


def _jump_height(params: LaaksoParams, l: int, idx: int) -> bool:
    step = params.unit(l)
    if idx % step != step // 2:
        return False
    return 1 <= (idx // step) % params.N[l - 1] <= params.N[l - 1] - 2


@dataclass
class ClassPartition:
    level: int
    m: int
    interval: Tuple[Fraction, Fraction]
    wormhole_levels: Set[int]
    jump_levels: Set[int]
    classes: List[FrozenSet[Word]]
    vertex_sets: List[np.ndarray] = field(default_factory=list)
    separation: Optional[Fraction] = None
    max_diameter: Fraction = Fraction(0)

    @property
    def length(self) -> Fraction:
        return self.interval[1] - self.interval[0]


def _equivalent(a: Word, b: Word, allowed: Set[int], jumps: Set[int], wormholes: Set[int], k: int) -> bool:
    delta = set(differing_levels(a, b))
    if not delta <= allowed:
        return False
    jumped = delta & jumps
    if jumped:
        first = min(jumped)
        for j in range(first + 1, k):
            if j not in wormholes and (a[j - 1] != 1 or b[j - 1] != 1):
                return False
    return True


def class_partition(eg: EtaGraph, level: int, m: int) -> ClassPartition:
    """Partition of [M]^{k−1} for I = [mδ_k, (m+1)δ_k] and the vertex sets E_A over h⁻¹(I)."""
    g = eg.base
    p = g.params
    if not 2 <= level <= p.n + 1:
        raise LevelRangeError(level, 2, p.n + 1)
    if not 0 <= m < p.prefix_product(level):
        raise ParameterError(f"Interval index {m} out of range", field="m")
    step = p.unit(level)
    lo, hi = m * step, (m + 1) * step
    length = p.delta(level)

    wormholes = {p.level_of(t) for t in (lo, hi) if p.level_of(t) is not None and p.level_of(t) <= level - 1}
    jumps = {
        l
        for l in range(1, level)
        if any(_jump_height(p, l, t) for t in (lo, hi)) and eg.eta[l - 1] * p.delta(l) <= length
    }
    allowed = wormholes | jumps

    words = list(itertools.product(range(1, p.M + 1), repeat=level - 1))
    classes: List[FrozenSet[Word]] = []
    for a in words:
        members = frozenset(b for b in words if _equivalent(a, b, allowed, jumps, wormholes, level))
        if members not in classes:
            classes.append(members)
    covered = [sum(a in c for c in classes) for a in words]
    if any(count != 1 for count in covered):
        raise InvariantViolation("class_partition", f"classes do not partition the words for I = [{lo}, {hi}]/{p.D}")

    in_interval = (g.heights >= lo) & (g.heights <= hi)
    vertex_sets = []
    for members in classes:
        mask = np.zeros(g.num_vertices, dtype=bool)
        for a in members:
            mask |= g.compatible(a)
        vertex_sets.append(np.flatnonzero(mask & in_interval))

    separation: Optional[Fraction] = None
    for a, b in itertools.combinations(range(len(vertex_sets)), 2):
        gap = eg.to_fraction(eg.distances_from(vertex_sets[a], min_only=True)[vertex_sets[b]].min())
        separation = gap if separation is None else min(separation, gap)
    diameter = max(
        eg.to_fraction(eg.distances_from(v)[:, v].max()) for v in vertex_sets if len(v)
    )
    return ClassPartition(
        level,
        m,
        (Fraction(lo, p.D), Fraction(hi, p.D)),
        wormholes,
        jumps,
        classes,
        vertex_sets,
        separation,
        diameter,
    )


def component_containment(partition: ClassPartition, components: Sequence[RComponent]) -> bool:
    """Whether every component lies inside exactly one E_A."""
    sets = [set(int(v) for v in vs) for vs in partition.vertex_sets]
    for component in components:
        owners = [k for k, vs in enumerate(sets) if set(int(v) for v in component.members) <= vs]
        if len(owners) != 1:
            return False
    return True


# ── Separation and light constants ──────────────────────────────────────────


def basic_separation(eg: EtaGraph, pairs: Sequence[Tuple[int, int]]) -> Optional[Fraction]:
    """min over pairs and differing digit levels j of
    d_η(x,y) − ⅓·min(2d(h{x,y}, W_j), 2d({x,y}, ∪𝒥_j) + η_jδ_j)."""
    g = eg.base
    p = g.params
    near_jumps: Dict[int, np.ndarray] = {}
    for family in eg.families:
        near_jumps[family.level] = g.distances_from(member_array(family.sets).ravel(), min_only=True)
    worst: Optional[Fraction] = None
    for x, y in pairs:
        vx, vy = g.vertex(x), g.vertex(y)
        levels = differing_levels(vx.digits, vy.digits)
        if not levels:
            continue
        d_eta = eg.to_fraction(eg.distances_from(x)[y])
        for j in levels:
            to_wormhole = Fraction(min(p.wormhole_distance(j, vx.height), p.wormhole_distance(j, vy.height)), p.D)
            to_jumps = g.to_fraction(min(near_jumps[j][x], near_jumps[j][y]))
            bound = Fraction(1, 3) * min(2 * to_wormhole, 2 * to_jumps + eg.eta[j - 1] * p.delta(j))
            slack = d_eta - bound
            worst = slack if worst is None else min(worst, slack)
    return worst


@dataclass
class LightRow:
    level: int
    m: int
    r: float
    max_diameter: float
    ratio: float


@dataclass
class LightConstantReport:
    constant: float
    rows: List[LightRow]


def canonical_intervals(
    params: LaaksoParams,
    levels: Sequence[int],
    limit: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> List[Tuple[int, int]]:
    """(level, m) pairs from ℐ_k; a seeded sample of at most `limit` per level."""
    chosen = []
    for k in levels:
        if not 1 <= k <= params.n + 1:
            raise LevelRangeError(k, 1, params.n + 1)
        total = params.prefix_product(k)
        ms = np.arange(total)
        if limit is not None and limit < total:
            if rng is None:
                raise ParameterError("Sampling intervals needs a seeded generator", field="seed")
            ms = np.sort(rng.choice(total, size=limit, replace=False))
        chosen.extend((k, int(m)) for m in ms)
    return chosen


def light_constant(
    eg: EtaGraph,
    intervals: Sequence[Tuple[int, int]],
    exponent_step: float = 0.5,
    r_max: float = 2.0,
) -> LightConstantReport:
    """max over intervals I and r = |I|·2^{t·step} ≤ r_max of (max r-component diameter of h⁻¹(I)) / r."""
    if not intervals:
        raise ParameterError("Interval family must be nonempty", field="intervals")
    g = eg.base
    p = g.params
    rows: List[LightRow] = []
    for k, m in intervals:
        step = p.unit(k)
        lo, hi = m * step, (m + 1) * step
        vertices = np.flatnonzero((g.heights >= lo) & (g.heights <= hi))
        pairwise = eg.distances_from(vertices)[:, vertices]
        base_r = float(p.delta(k))
        t = 0
        while True:
            r = base_r * 2 ** (t * exponent_step)
            if r > r_max * (1 + 1e-12):
                break
            components = _components(vertices, pairwise, r * eg.scale * (1 + 1e-12), eg)
            largest = max(float(c.diameter) for c in components)
            rows.append(LightRow(k, m, r, largest, largest / r))
            t += 1
    constant = max(row.ratio for row in rows)
    logger.info(f"Lipschitz-light constant over {len(intervals)} intervals: {constant:.6g}")
    return LightConstantReport(constant, rows)


def union_components_bound(C1: float, C2: float) -> float:
    """Light constant for A₁ ∪ A₂ from constants of the parts."""
    C0 = max(C1, C2)
    return max(C0 * (2 * C0 + 3), 2 * C0**2 + 4 * C0 + 1)

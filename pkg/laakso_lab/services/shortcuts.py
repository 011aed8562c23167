"""
Shortcut Metric Service
Shortcut families 𝒥_i, the contracted metric d_η as an augmented shortest-path metric,
single-jump decompositions and shortcut-neighbourhood density profiles.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from laakso_lab.core.errors import LevelRangeError, ParameterError
from laakso_lab.services.laakso import (
    EXACT_LIMIT,
    WILDCARD,
    LaaksoGraph,
    ShortestPathGraph,
    VertexRef,
)

logger = logging.getLogger(__name__)

Rational = Union[Fraction, int, str]


# ── Shortcut families ───────────────────────────────────────────────────────


def jump_heights(N: Sequence[int], i: int) -> List[Fraction]:
    """Midpoints of level-i intervals whose endpoints are both level-i wormholes.

    Depends on N_1..N_i only; also used for diamond graphs.
    """
    if not 1 <= i <= len(N):
        raise LevelRangeError(i, 1, len(N))
    P = math.prod(N[:i])
    Ni = N[i - 1]
    return [Fraction(2 * m + 1, 2 * P) for m in range(P) if 1 <= m % Ni <= Ni - 2]


@dataclass(frozen=True)
class ShortcutSet:
    """M vertices q(t, a, c, 1…1), c ∈ [M], pairwise δ_i apart in the base metric."""

    level: int
    height: int
    prefix: Tuple[int, ...]
    members: Tuple[int, ...]


@dataclass
class ShortcutFamily:
    level: int
    heights: List[Fraction]
    sets: List[ShortcutSet]


def enumerate_shortcuts(g: LaaksoGraph) -> List[ShortcutFamily]:
    """Shortcut families of levels 1..n in (level, height, prefix) order."""
    p = g.params
    families = []
    for i in range(1, p.n + 1):
        heights = jump_heights(p.N, i)
        sets = []
        tail: Tuple[int, ...] = ()
        if i < p.n:
            tail = (WILDCARD,) + (1,) * (p.n - i - 1)
        for t in heights:
            idx = int(t * p.D)
            for a in itertools.product(range(1, p.M + 1), repeat=i - 1):
                members = tuple(g.index_of((idx, a + (c,) + tail)) for c in range(1, p.M + 1))
                sets.append(ShortcutSet(i, idx, a, members))
        families.append(ShortcutFamily(i, heights, sets))
        logger.debug(f"Level {i}: {len(heights)} jump heights, {len(sets)} shortcut sets")
    return families


def all_sets(families: Sequence[ShortcutFamily]) -> List[ShortcutSet]:
    return [s for family in families for s in family.sets]


def member_array(sets: Sequence[ShortcutSet]) -> np.ndarray:
    return np.array([s.members for s in sets], dtype=np.int64)


# ── η-schedules ─────────────────────────────────────────────────────────────


def parse_rational(value: Rational) -> Fraction:
    try:
        return Fraction(value)
    except (ValueError, ZeroDivisionError, TypeError) as e:
        raise ParameterError(f"Not a rational number: {value!r}", field="eta") from e


def validate_eta(eta: Sequence[Rational], levels: int) -> Tuple[Fraction, ...]:
    values = tuple(parse_rational(x) for x in eta)
    if len(values) < levels:
        raise ParameterError(f"η needs at least {levels} entries, got {len(values)}", field="eta")
    for i, x in enumerate(values, start=1):
        if not 0 < x <= 1:
            raise ParameterError(f"η_{i} = {x} outside (0, 1]", field="eta")
    return values


# ── Contracted metric ───────────────────────────────────────────────────────


@dataclass(frozen=True)
class Chord:
    set_index: int
    a: int
    b: int
    weight: Fraction


class EtaGraph(ShortestPathGraph):
    """Base Laakso graph plus one chord of weight η_iδ_i per member pair of each shortcut set."""

    def __init__(
        self,
        base: LaaksoGraph,
        eta: Sequence[Rational],
        families: Optional[List[ShortcutFamily]] = None,
        chord_weights: Optional[Sequence[Fraction]] = None,
    ):
        self.base = base
        p = base.params
        self.eta = validate_eta(eta, p.n)
        self.families = families if families is not None else enumerate_shortcuts(base)
        self.sets = all_sets(self.families)

        chords = []
        for k, s in enumerate(self.sets):
            weight = self.eta[s.level - 1] * p.delta(s.level)
            for a, b in itertools.combinations(range(p.M), 2):
                chords.append(Chord(k, a, b, weight))
        if chord_weights is not None:
            if len(chord_weights) != len(chords):
                raise ParameterError("chord_weights must give one weight per chord", field="chord_weights")
            chords = [Chord(c.set_index, c.a, c.b, Fraction(w)) for c, w in zip(chords, chord_weights)]
        self.chords = chords

        # integer units: one base edge = L, so chord weights become integers too
        self.base_factor = 1
        for c in chords:
            self.base_factor = math.lcm(self.base_factor, (c.weight * p.D).denominator)
        self.scale = p.D * self.base_factor
        if 4 * self.scale >= EXACT_LIMIT:
            raise ParameterError(
                "η denominators too large for exact distances",
                field="eta",
                details={"scale": self.scale},
            )

        ends_u = np.array([self.sets[c.set_index].members[c.a] for c in chords], dtype=np.int64)
        ends_v = np.array([self.sets[c.set_index].members[c.b] for c in chords], dtype=np.int64)
        units = np.array([float(c.weight * self.scale) for c in chords])

        # directed chords in (level, height, prefix, member pair) order
        order = []
        for k, s in enumerate(self.sets):
            for a, b in itertools.permutations(range(p.M), 2):
                order.append((k, a, b))
        self.jump_set = np.array([k for k, _, _ in order], dtype=np.int64)
        self.jump_from = np.array([self.sets[k].members[a] for k, a, _ in order], dtype=np.int64)
        self.jump_to = np.array([self.sets[k].members[b] for k, _, b in order], dtype=np.int64)
        lookup = {(c.set_index, c.a, c.b): c.weight for c in chords}
        self.jump_weight = np.array(
            [float(lookup[(k, min(a, b), max(a, b))] * self.scale) for k, a, b in order]
        )

        V = base.num_vertices
        rows = np.concatenate([base.edge_u, ends_u])
        cols = np.concatenate([base.edge_v, ends_v])
        data = np.concatenate([np.full(base.num_edges, float(self.base_factor)), units])
        self.matrix = sparse.csr_matrix((data, (rows, cols)), shape=(V, V))
        self.chord_u, self.chord_v, self.chord_units = ends_u, ends_v, units

    @property
    def params(self):
        return self.base.params

    def index_of(self, vertex: VertexRef) -> int:
        return self.base.index_of(vertex)

    def with_perturbed_chord(self, index: int = 0, factor: Fraction = Fraction(1, 100)) -> "EtaGraph":
        """Copy with one chord weight multiplied by `factor`."""
        weights = [c.weight for c in self.chords]
        weights[index] = weights[index] * factor
        logger.warning(f"Perturbing chord {index} by factor {factor}")
        return EtaGraph(self.base, self.eta, self.families, chord_weights=weights)

    def base_units(self, base_distances: np.ndarray) -> np.ndarray:
        """Base-graph distances rescaled to this graph's units."""
        return base_distances * self.base_factor


def build_eta_graph(g: LaaksoGraph, eta: Sequence[Rational]) -> EtaGraph:
    return EtaGraph(g, eta)


def dist_eta(eg: EtaGraph, x: VertexRef, y: VertexRef) -> Fraction:
    """Exact d_η: shortest path through base edges and shortcut chords."""
    i, j = eg.index_of(x), eg.index_of(y)
    if i == j:
        return Fraction(0)
    return eg.to_fraction(eg.distances_from(i)[j])


@dataclass
class JumpResult:
    p_minus: int
    p_plus: int
    shortcut: ShortcutSet
    cost: Fraction


def best_single_jump(eg: EtaGraph, x: VertexRef, y: VertexRef) -> Optional[JumpResult]:
    """Cheapest d(x,p−) + η_iδ_i + d(p+,y) over directed chords; None unless it beats d(x, y)."""
    i, j = eg.index_of(x), eg.index_of(y)
    dx = eg.base_units(eg.base.distances_from(i))
    dy = eg.base_units(eg.base.distances_from(j))
    if len(eg.jump_from) == 0:
        return None
    costs = dx[eg.jump_from] + eg.jump_weight + dy[eg.jump_to]
    k = int(np.argmin(costs))
    if costs[k] >= dx[j]:
        return None
    return JumpResult(
        p_minus=int(eg.jump_from[k]),
        p_plus=int(eg.jump_to[k]),
        shortcut=eg.sets[eg.jump_set[k]],
        cost=eg.to_fraction(costs[k]),
    )


def chain_distance(eg: EtaGraph, x: VertexRef, y: VertexRef, max_jumps: int = 2) -> Fraction:
    """Cheapest chain x → p−_1 ⇝ p+_1 → … → y with at most `max_jumps` chord hops.

    Built from base distances only; with max_jumps at least the number of member
    vertices it reproduces d_η.
    """
    i, j = eg.index_of(x), eg.index_of(y)
    dx = eg.base_units(eg.base.distances_from(i))
    dy = eg.base_units(eg.base.distances_from(j))
    best = dx[j]
    if max_jumps < 1 or len(eg.jump_from) == 0:
        return eg.to_fraction(best)

    members = np.unique(np.concatenate([eg.jump_from, eg.jump_to]))
    position = {int(v): k for k, v in enumerate(members)}
    between = eg.base_units(eg.base.distances_from(members))[:, members]
    start = np.array([position[int(v)] for v in eg.jump_from])
    end = np.array([position[int(v)] for v in eg.jump_to])

    arrive = dx[eg.jump_from] + eg.jump_weight
    best = min(best, float(np.min(arrive + dy[eg.jump_to])))
    for _ in range(max_jumps - 1):
        # cost of reaching the end of chord c, then walking to the start of chord c'
        relay = np.min(arrive[:, None] + between[end][:, start], axis=0)
        arrive = np.minimum(arrive, relay + eg.jump_weight)
        best = min(best, float(np.min(arrive + dy[eg.jump_to])))
    return eg.to_fraction(best)


# ── Shortcut constants ──────────────────────────────────────────────────────


def member_distance_defects(g: LaaksoGraph, families: Sequence[ShortcutFamily]) -> List[Tuple[ShortcutSet, Fraction]]:
    """Sets whose member pairs are not exactly δ_i apart."""
    defects = []
    for family in families:
        delta = g.params.delta(family.level)
        for s in family.sets:
            rows = g.distances_from(list(s.members))[:, list(s.members)]
            off = rows[~np.eye(len(s.members), dtype=bool)]
            for value in np.unique(off):
                if g.to_fraction(value) != delta:
                    defects.append((s, g.to_fraction(value)))
    return defects


def set_separation(metric: ShortestPathGraph, sets: Sequence[ShortcutSet], params) -> Optional[Fraction]:
    """min over distinct S (level i), S' (level j) of d(S, S') / δ_{max(i,j)}."""
    if len(sets) < 2:
        return None
    members = member_array(sets)
    levels = np.array([s.level for s in sets])
    worst: Optional[Fraction] = None
    for k, s in enumerate(sets):
        reach = metric.distances_from(list(s.members), min_only=True)
        gaps = reach[members[k + 1 :]].min(axis=1)
        for offset, gap in enumerate(gaps):
            other = k + 1 + offset
            delta = params.delta(max(s.level, int(levels[other])))
            ratio = metric.to_fraction(gap) / delta
            if worst is None or ratio < worst:
                worst = ratio
    return worst


def chord_diameter_bounds(eg: EtaGraph) -> Tuple[Fraction, Fraction]:
    """Smallest and largest d_η(z, w) / (η_iδ_i) over member pairs."""
    low: Optional[Fraction] = None
    high: Optional[Fraction] = None
    for s in eg.sets:
        target = eg.eta[s.level - 1] * eg.params.delta(s.level)
        rows = eg.distances_from(list(s.members))[:, list(s.members)]
        for a, b in itertools.combinations(range(len(s.members)), 2):
            ratio = eg.to_fraction(rows[a, b]) / target
            low = ratio if low is None else min(low, ratio)
            high = ratio if high is None else max(high, ratio)
    return low, high


def net_radius(g: LaaksoGraph, family: ShortcutFamily) -> Fraction:
    """max_x d(x, ∪𝒥_i)."""
    sources = member_array(family.sets).ravel()
    return g.to_fraction(np.max(g.distances_from(sources, min_only=True)))


def neighbourhood_inclusion(eg: EtaGraph, s: ShortcutSet, R: Fraction) -> bool:
    """Whether B_η(S, Rδ_i) ⊆ B(S, 9Rδ_i); meaningful for 0 < R < 1/6."""
    R = Fraction(R)
    if not 0 < R < Fraction(1, 6):
        raise ParameterError(f"R = {R} outside (0, 1/6)", field="R")
    radius = R * eg.params.delta(s.level)
    inner = np.isfinite(eg.distances_from(list(s.members), limit=radius, min_only=True))
    outer = np.isfinite(eg.base.distances_from(list(s.members), limit=9 * radius, min_only=True))
    return bool(np.all(outer[inner]))


@dataclass
class JumpBallPieces:
    pieces: List[np.ndarray]
    base_gap: Fraction
    eta_gap: Fraction


def jump_ball_pieces(eg: EtaGraph, s: ShortcutSet, r: Fraction) -> JumpBallPieces:
    """Split B_η(S, rδ_iη_i) by nearest member; report the smallest mutual piece distances."""
    r = Fraction(r)
    radius = r * eg.params.delta(s.level) * eg.eta[s.level - 1]
    reach = eg.distances_from(list(s.members), limit=radius)
    pieces = [np.flatnonzero(np.isfinite(row)) for row in reach]
    base_gap: Optional[Fraction] = None
    eta_gap: Optional[Fraction] = None
    for a, b in itertools.combinations(range(len(pieces)), 2):
        if len(pieces[a]) == 0 or len(pieces[b]) == 0:
            continue
        d_base = eg.base.distances_from(pieces[a], min_only=True)[pieces[b]].min()
        d_eta = eg.distances_from(pieces[a], min_only=True)[pieces[b]].min()
        gap = eg.base.to_fraction(d_base)
        base_gap = gap if base_gap is None else min(base_gap, gap)
        gap = eg.to_fraction(d_eta)
        eta_gap = gap if eta_gap is None else min(eta_gap, gap)
    return JumpBallPieces(pieces, base_gap or Fraction(0), eta_gap or Fraction(0))


def distortion(eg: EtaGraph) -> float:
    """max d / d_η over distinct vertex pairs; bounded by 1 / min η."""
    base = eg.base.distance_matrix() / eg.base.scale
    contracted = eg.distances_from(np.arange(eg.base.num_vertices)) / eg.scale
    off = ~np.eye(len(base), dtype=bool)
    return float(np.max(base[off] / contracted[off]))


# ── Density profiles ────────────────────────────────────────────────────────


@dataclass
class DensityProfile:
    metric: str
    alpha: List[float]
    per_level: List[float]
    cumulative: List[float] = field(default_factory=list)


def _covered(metric: ShortestPathGraph, sources: np.ndarray, radius: float, num_vertices: int) -> np.ndarray:
    if len(sources) == 0:
        return np.zeros(num_vertices, dtype=bool)
    bound = radius * metric.scale * (1 + 1e-12)
    reach = metric.distances_from(sources, limit=bound / metric.scale, min_only=True)
    return reach <= bound


def density_profile(eg: EtaGraph, alpha: Sequence[float], metric: str = "base") -> DensityProfile:
    """Measure of α_iδ_i-neighbourhoods of ∪𝒥_i per level, and of their unions over i ≥ i0."""
    if metric not in ("base", "eta"):
        raise ParameterError(f"Unknown metric {metric!r}", field="metric")
    g = eg.base
    n = g.params.n
    alpha = [float(a) for a in alpha]
    if len(alpha) < n or any(a < 0 for a in alpha):
        raise ParameterError(f"α needs {n} non-negative entries", field="alpha")
    graph = g if metric == "base" else eg
    measure = g.vertex_measure

    covered = []
    for family in eg.families:
        radius = alpha[family.level - 1] * float(g.params.delta(family.level))
        covered.append(_covered(graph, member_array(family.sets).ravel(), radius, g.num_vertices))

    per_level = [float(measure[mask].sum()) for mask in covered]
    cumulative = []
    union = np.zeros(g.num_vertices, dtype=bool)
    for mask in reversed(covered):
        union |= mask
        cumulative.append(float(measure[union].sum()))
    cumulative.reverse()
    return DensityProfile(metric, alpha[:n], per_level, cumulative)


def collect_sets(families: Sequence[ShortcutFamily], levels: Optional[Sequence[int]] = None) -> Dict[int, List[ShortcutSet]]:
    chosen = set(levels) if levels is not None else None
    return {f.level: f.sets for f in families if chosen is None or f.level in chosen}


@dataclass
class JumpSample:
    x: int
    y: int
    base: Fraction
    contracted: Fraction
    jump: Optional[JumpResult]

    @property
    def best_cost(self) -> Fraction:
        """min(d(x, y), best single-jump cost)."""
        return self.base if self.jump is None else min(self.base, self.jump.cost)


def single_jump_sweep(eg: EtaGraph, rng: np.random.Generator, pairs: int, max_attempts: Optional[int] = None) -> List[JumpSample]:
    """Random pairs with d_η < d and their best single jumps."""
    V = eg.base.num_vertices
    attempts = 50 * pairs if max_attempts is None else max_attempts
    samples: List[JumpSample] = []
    while len(samples) < pairs and attempts > 0:
        attempts -= 1
        x, y = (int(v) for v in rng.choice(V, size=2, replace=False))
        base = eg.base.to_fraction(eg.base.distances_from(x)[y])
        contracted = eg.to_fraction(eg.distances_from(x)[y])
        if contracted >= base:
            continue
        samples.append(JumpSample(x, y, base, contracted, best_single_jump(eg, x, y)))
    return samples

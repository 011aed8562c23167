"""
Diamond Graph Service
M-branching diamond (bundle) graphs Ĝ(M; N_1..N_n), x/y profiles and p_G, restrictions
Ĝ_I with their projections, and projections of Laakso graphs onto diamonds.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterator, List, Sequence, Tuple

import networkx as nx

from laakso_lab.core.errors import InvariantViolation, LevelRangeError, ParameterError
from laakso_lab.services.laakso import LaaksoGraph
from laakso_lab.services.shortcuts import ShortcutFamily, jump_heights

logger = logging.getLogger(__name__)

Node = Tuple[int, Tuple[int, ...]]


def _validate(M: int, N: Sequence[int]) -> Tuple[int, ...]:
    N = tuple(int(x) for x in N)
    if M < 2:
        raise ParameterError(f"M must be at least 2, got {M}", field="M")
    if not N:
        raise ParameterError("N must be nonempty", field="N")
    for i, value in enumerate(N, start=1):
        if value < 4 or value % 2:
            raise ParameterError(f"N_{i} = {value} must be even and >= 4", field="N")
    return N


def diamond_level(N: Sequence[int], idx: int) -> int:
    """j with idx/P ∈ Ŵ_j^h; the ends 0 and 1 belong to level 1."""
    P = math.prod(N)
    for j in range(1, len(N) + 1):
        if idx % (P // math.prod(N[:j])) == 0:
            return j
    raise ParameterError(f"Height {idx}/{P} is off the grid", field="t")


@dataclass
class DiamondGraph:
    M: int
    N: Tuple[int, ...]
    graph: nx.Graph

    @property
    def n(self) -> int:
        return len(self.N)

    @property
    def P(self) -> int:
        return math.prod(self.N)

    def distance(self, u: Node, v: Node) -> Fraction:
        """BFS hops times the common edge length."""
        return Fraction(nx.shortest_path_length(self.graph, u, v), self.P)


def build_diamond(M: int, N: Sequence[int]) -> DiamondGraph:
    """Vertices {t}×[M]^{w_t}, w_t = level(t) − 1; neighbours one grid step apart with prefix-related words."""
    N = _validate(M, N)
    P = math.prod(N)
    G = nx.Graph()
    fibers: List[List[Tuple[int, ...]]] = []
    for idx in range(P + 1):
        width = diamond_level(N, idx) - 1
        words = list(itertools.product(range(1, M + 1), repeat=width))
        fibers.append(words)
        G.add_nodes_from((idx, w) for w in words)
    for idx in range(P):
        low, high = fibers[idx], fibers[idx + 1]
        if len(low[0]) <= len(high[0]):
            G.add_edges_from(((idx, w[: len(low[0])]), (idx + 1, w)) for w in high)
        else:
            G.add_edges_from(((idx, w), (idx + 1, w[: len(high[0])])) for w in low)
    logger.debug(f"Diamond graph M={M}, N={N}: {G.number_of_nodes()} nodes, {G.number_of_edges()} edges")
    return DiamondGraph(M, N, G)


# ── Profiles ────────────────────────────────────────────────────────────────


def _grid_index(N: Sequence[int], t) -> int:
    P = math.prod(N)
    scaled = Fraction(t) * P
    if scaled.denominator != 1 or not 0 <= scaled <= P:
        raise ParameterError(f"t = {t} is off the grid of spacing 1/{P}", field="t")
    return int(scaled)


def _profile_units(N: Sequence[int], idx: int, l: int) -> Tuple[int, int]:
    P = math.prod(N)
    if l == 0:
        return 0, P
    if l >= len(N):
        return idx, idx
    step = P // math.prod(N[:l])
    return (idx // step) * step, -(-idx // step) * step


def xy_profile(N: Sequence[int], t, l: int) -> Tuple[Fraction, Fraction]:
    """(x(t,l), y(t,l)): nearest points of Ŵ_{≤l} at or below and at or above t."""
    if l < 0:
        raise LevelRangeError(l, 0, len(N))
    P = math.prod(N)
    x, y = _profile_units(N, _grid_index(N, t), l)
    return Fraction(x, P), Fraction(y, P)


def _midpoint_conditions(N: Sequence[int], p: int) -> bool:
    P = math.prod(N)
    n = len(N)
    for j in range(n):
        for idx in range(P + 1):
            x0, y0 = _profile_units(N, idx, j)
            x1, y1 = _profile_units(N, idx, min(j + p, n))
            twice = 2 * idx
            if twice < x0 + y0 and not 2 * y1 <= x0 + y0:
                return False
            if twice > x0 + y0 and not 2 * x1 >= x0 + y0:
                return False
    return True


def compute_p_G(N: Sequence[int]) -> int:
    """Least p such that p more levels always capture the midpoint on t's side."""
    N = _validate(2, N)
    for p in range(1, len(N) + 1):
        if _midpoint_conditions(N, p):
            return p
    raise InvariantViolation("p_G", f"no valid p for N = {N}")


def midpoint_parity_failures(N: Sequence[int]) -> List[Tuple[int, int]]:
    """(t, l) with t outside Ŵ_{≤l} whose midpoint (x+y)/2 is not in Ŵ_{l+1}."""
    N = _validate(2, N)
    P = math.prod(N)
    failures = []
    for l in range(len(N)):
        for idx in range(P + 1):
            if diamond_level(N, idx) <= l:
                continue
            x, y = _profile_units(N, idx, l)
            if (x + y) % 2 or diamond_level(N, (x + y) // 2) != l + 1:
                failures.append((idx, l))
    return failures


def digit_criterion_failures(N: Sequence[int]) -> List[Tuple[int, int]]:
    """(t, l) where `t > midpoint` disagrees with t_{l+1} ≥ N_{l+1}/2, for level(t) > l+1."""
    N = _validate(2, N)
    P = math.prod(N)
    failures = []
    for l in range(len(N)):
        step = P // math.prod(N[: l + 1])
        for idx in range(P + 1):
            if diamond_level(N, idx) <= l + 1:
                continue
            x, y = _profile_units(N, idx, l)
            digit = (idx // step) % N[l]
            if (2 * idx > x + y) != (digit >= N[l] // 2):
                failures.append((idx, l))
    return failures


# ── Restrictions ────────────────────────────────────────────────────────────


def restricted_N(N: Sequence[int], levels: Sequence[int]) -> Tuple[int, ...]:
    """N_{I,j} = ∏_{i_{j−1} < i ≤ i_j} N_i with i_{k+1} = n."""
    cuts = [0, *sorted(levels), len(N)]
    return tuple(math.prod(N[a:b]) for a, b in zip(cuts, cuts[1:]))


def _project_word(word: Tuple[int, ...], levels: Sequence[int]) -> Tuple[int, ...]:
    return tuple(word[i - 1] for i in levels if i <= len(word))


@dataclass
class Restriction:
    source: DiamondGraph
    levels: Tuple[int, ...]
    target: DiamondGraph
    projection: Dict[Node, Node]


def restrict(d: DiamondGraph, levels: Sequence[int]) -> Restriction:
    """Ĝ_I as the image of π_I, checked equal to Ĝ(M; N_I) by canonical labels."""
    chosen = tuple(sorted(set(int(i) for i in levels)))
    if not chosen:
        raise ParameterError("Level set I must be nonempty", field="levels")
    if chosen[0] < 1 or chosen[-1] > d.n - 1:
        raise ParameterError(f"I = {chosen} must lie in 1..{d.n - 1}", field="levels")

    projection = {node: (node[0], _project_word(node[1], chosen)) for node in d.graph.nodes}
    image = nx.Graph()
    image.add_nodes_from(projection.values())
    for u, v in d.graph.edges:
        a, b = projection[u], projection[v]
        if a != b:
            image.add_edge(a, b)

    target = build_diamond(d.M, restricted_N(d.N, chosen))
    same_nodes = set(image.nodes) == set(target.graph.nodes)
    same_edges = {frozenset(e) for e in image.edges} == {frozenset(e) for e in target.graph.edges}
    if not (same_nodes and same_edges):
        raise InvariantViolation("restriction", f"image of π_I differs from Ĝ(M; N_I) for I = {chosen}")
    return Restriction(d, chosen, target, projection)


def jump_height_inclusion(N: Sequence[int], levels: Sequence[int]) -> List[bool]:
    """For each j: 𝒥_{i_j}^h(N_1..N_{i_j}) ⊆ 𝒥_j^h(N_{I,1}..N_{I,j})."""
    chosen = sorted(levels)
    merged = restricted_N(N, chosen)
    return [
        set(jump_heights(N[:i], i)) <= set(jump_heights(merged[:j], j))
        for j, i in enumerate(chosen, start=1)
    ]


def jump_fibers(d: DiamondGraph, i: int) -> Iterator[Tuple[Node, ...]]:
    """Ĵ_i: at each level-i jump height, the fibers {t}×{a}×[M] over prefixes a ∈ [M]^{i−1}."""
    if not 1 <= i <= d.n - 1:
        raise LevelRangeError(i, 1, d.n - 1)
    for t in jump_heights(d.N, i):
        idx = int(t * d.P)
        width = diamond_level(d.N, idx) - 1
        tail = (1,) * (width - i)
        for a in itertools.product(range(1, d.M + 1), repeat=i - 1):
            yield tuple((idx, a + (c,) + tail) for c in range(1, d.M + 1))


def edge_list_rows(d: DiamondGraph) -> List[List[object]]:
    rows = []
    for u, v in sorted(d.graph.edges):
        rows.append([Fraction(u[0], d.P), "".join(map(str, u[1])), Fraction(v[0], d.P), "".join(map(str, v[1]))])
    return rows


# ── Laakso projections ──────────────────────────────────────────────────────


@dataclass
class LaaksoProjection:
    levels: Tuple[int, ...]
    target: DiamondGraph
    images: List[Node]
    non_edges: int
    jump_distances: List[Tuple[int, Fraction, Fraction]]

    @property
    def lipschitz(self) -> bool:
        return self.non_edges == 0

    def dichotomy_holds(self, params) -> bool:
        return all(
            observed == (params.delta(level) if level in self.levels else 0)
            for level, observed, _ in self.jump_distances
        )


def project_laakso(g: LaaksoGraph, levels: Sequence[int], families: Sequence[ShortcutFamily]) -> LaaksoProjection:
    """π̂_{n,I}: truncate each digit word to w_t, then apply π_I into Ĝ_{n,I}."""
    p = g.params
    chosen = tuple(sorted(set(int(i) for i in levels)))
    if not chosen or chosen[0] < 1 or chosen[-1] > p.n:
        raise ParameterError(f"I = {chosen} must be a nonempty subset of 1..{p.n}", field="levels")
    full = build_diamond(p.M, p.N)
    restriction = restrict(full, chosen)

    width = [diamond_level(p.N, idx) - 1 for idx in range(p.D + 1)]
    images: List[Node] = []
    for v in range(g.num_vertices):
        idx = int(g.heights[v])
        word = tuple(int(d) for d in g.digits[v][: width[idx]])
        images.append(restriction.projection[(idx, word)])

    graph = restriction.target.graph
    non_edges = 0
    for a, b in zip(g.edge_u, g.edge_v):
        u, w = images[a], images[b]
        if u != w and not graph.has_edge(u, w):
            non_edges += 1

    jumps = []
    for family in families:
        for s in family.sets:
            for a, b in itertools.combinations(s.members, 2):
                z, w = images[a], images[b]
                observed = restriction.target.distance(z, w) if z != w else Fraction(0)
                jumps.append((family.level, observed, p.delta(family.level)))
    logger.info(f"Projected G_{p.n} onto Ĝ_I for I = {chosen}: {non_edges} non-edges")
    return LaaksoProjection(chosen, restriction.target, images, non_edges, jumps)

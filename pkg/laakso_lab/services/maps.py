"""
Lipschitz Map Service
Piecewise-affine maps on G_n: tent building blocks, orthogonal induction steps in ℝ²,
block-ℓ_q maps, Lipschitz constants and shortcut oscillation reports.
"""

import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np

from laakso_lab.core.config import settings
from laakso_lab.core.errors import LevelRangeError, ParameterError, PreconditionError
from laakso_lab.services.laakso import LaaksoGraph, _encode
from laakso_lab.services.shortcuts import EtaGraph, ShortcutSet, member_array

logger = logging.getLogger(__name__)


# ── Norms ───────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class NormSpec:
    """Euclidean, or ℓ_q over all coordinates with an optional block structure."""

    kind: Literal["euclidean", "lq"] = "euclidean"
    q: float = 2.0
    blocks: Tuple[Tuple[int, ...], ...] = ()

    def norm(self, vectors: np.ndarray) -> np.ndarray:
        vectors = np.atleast_2d(vectors)
        if self.kind == "euclidean":
            return np.linalg.norm(vectors, axis=1)
        return np.sum(np.abs(vectors) ** self.q, axis=1) ** (1.0 / self.q)

    def block_norms(self, vectors: np.ndarray) -> np.ndarray:
        vectors = np.atleast_2d(vectors)
        columns = [NormSpec(self.kind, self.q).norm(vectors[:, list(block)]) for block in self.blocks]
        return np.stack(columns, axis=1) if columns else np.zeros((len(vectors), 0))


# ── Maps ────────────────────────────────────────────────────────────────────


@dataclass
class PAMap:
    """Map affine on every edge, stored by its vertex values (V × k)."""

    graph: LaaksoGraph
    values: np.ndarray
    norm: NormSpec = field(default_factory=NormSpec)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != self.graph.num_vertices:
            raise ParameterError("One value per vertex required", field="values")
        if not np.all(np.isfinite(values)):
            raise ParameterError("Map values must be finite", field="values")
        self.values = values

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def edge_increments(self) -> np.ndarray:
        return self.values[self.graph.edge_v] - self.values[self.graph.edge_u]

    def edge_slopes(self) -> np.ndarray:
        """‖Δf‖ / ℓ per edge."""
        return self.norm.norm(self.edge_increments()) * self.graph.params.D

    def block_lips(self) -> List[float]:
        slopes = self.norm.block_norms(self.edge_increments()) * self.graph.params.D
        return [float(col.max()) if len(col) else 0.0 for col in slopes.T]

    def value(self, vertex) -> np.ndarray:
        return self.values[self.graph.index_of(vertex)]

    def diameter_on(self, vertices: Sequence[int]) -> float:
        points = self.values[list(vertices)]
        best = 0.0
        for a, b in itertools.combinations(range(len(points)), 2):
            best = max(best, float(self.norm.norm(points[a] - points[b])[0]))
        return best

    def __add__(self, other: "PAMap") -> "PAMap":
        if other.graph is not self.graph or other.k != self.k:
            raise ParameterError("Maps live on different graphs or targets")
        return PAMap(self.graph, self.values + other.values, self.norm)

    def __sub__(self, other: "PAMap") -> "PAMap":
        if other.graph is not self.graph or other.k != self.k:
            raise ParameterError("Maps live on different graphs or targets")
        return PAMap(self.graph, self.values - other.values, self.norm)

    def scaled(self, factor: float) -> "PAMap":
        return PAMap(self.graph, self.values * factor, self.norm)


def constant_map(g: LaaksoGraph, value: Sequence[float] = (0.0,)) -> PAMap:
    return PAMap(g, np.tile(np.asarray(value, dtype=float), (g.num_vertices, 1)))


def height_map(g: LaaksoGraph) -> PAMap:
    """f = h."""
    return PAMap(g, g.heights / g.params.D)


def glue(maps: Sequence[PAMap]) -> PAMap:
    """Glued sum Σ f_m of maps sharing a graph and target."""
    if not maps:
        raise ParameterError("Nothing to glue")
    total = maps[0]
    for f in maps[1:]:
        total = total + f
    return total


def lip(f: PAMap) -> float:
    """Max edge slope; equals the Lipschitz constant of the affine extension."""
    return float(f.edge_slopes().max())


def lip_eta(f: PAMap, eg: EtaGraph) -> float:
    """Max of ‖Δf‖ / weight over base edges and shortcut chords."""
    if eg.base is not f.graph:
        raise ParameterError("Map and η-graph use different base graphs")
    best = lip(f)
    if len(eg.chord_u):
        jumps = f.norm.norm(f.values[eg.chord_v] - f.values[eg.chord_u]) / (eg.chord_units / eg.scale)
        best = max(best, float(jumps.max()))
    return best


# ── Tent blocks ─────────────────────────────────────────────────────────────


def _check_level(g: LaaksoGraph, i: int) -> None:
    if not 1 <= i <= g.params.n:
        raise LevelRangeError(i, 1, g.params.n)


def _symmetric_position(g: LaaksoGraph, i: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(interval index m, offset inside it, symmetric-interval flag) per vertex at level i."""
    step = g.params.unit(i)
    Ni = g.params.N[i - 1]
    m = g.heights // step
    offset = g.heights - m * step
    symmetric = (m % Ni >= 1) & (m % Ni <= Ni - 2)
    return m, offset, symmetric


def tent_values(g: LaaksoGraph, i: int) -> np.ndarray:
    """±(|I|/2 − |t − t₀|) on symmetric level-i intervals for digit i ∈ {M, 1}, else 0."""
    _check_level(g, i)
    step = g.params.unit(i)
    _, offset, symmetric = _symmetric_position(g, i)
    interior = symmetric & (offset != 0)
    magnitude = (step // 2 - np.abs(offset - step // 2)) / g.params.D
    digit = g.digits[:, i - 1]
    sign = np.where(digit == g.params.M, 1.0, np.where(digit == 1, -1.0, 0.0))
    return np.where(interior, sign * magnitude, 0.0)


def tent_block(g: LaaksoGraph, i: int) -> PAMap:
    """The real-valued building block of level i: LIP 1, diam δ_i on level-i shortcuts."""
    return PAMap(g, tent_values(g, i))


# ── Orthogonal induction ────────────────────────────────────────────────────


def _piece_keys(g: LaaksoGraph, i: int, m: np.ndarray, prefixes: np.ndarray) -> np.ndarray:
    return m * g.params.M ** (i - 1) + _encode(prefixes, g.params.M)


def orthogonal_step(f: PAMap, i: int, A: float, tolerance: Optional[float] = None) -> PAMap:
    """F = f + A·g·v_{I,a} with g the level-i tent and v_{I,a} ⊥ the affine piece of f.

    Requires f affine on each symmetric level-i interval per prefix of length i−1.
    """
    g = f.graph
    _check_level(g, i)
    if f.k != 2:
        raise ParameterError("orthogonal_step acts on ℝ²-valued maps", field="k")
    if A <= 0:
        raise ParameterError(f"A = {A} must be positive", field="A")
    tol = settings.COLLINEARITY_TOLERANCE if tolerance is None else tolerance
    p = g.params
    step = p.unit(i)
    Ni = p.N[i - 1]

    m_edge = g.edge_low // step
    r_edge = g.edge_low - m_edge * step
    in_piece = (m_edge % Ni >= 1) & (m_edge % Ni <= Ni - 2)
    keys = _piece_keys(g, i, m_edge, g.edge_word[:, : i - 1])
    size = p.prefix_product(i) * p.M ** (i - 1)

    start = np.zeros((size, 2))
    finish = np.zeros((size, 2))
    first = in_piece & (r_edge == 0)
    last = in_piece & (r_edge == step - 1)
    start[keys[first]] = f.values[g.edge_u[first]]
    finish[keys[last]] = f.values[g.edge_v[last]]

    # every vertex of a closed piece sits on one of its edges
    e = np.flatnonzero(in_piece)
    k = keys[e]
    lam_u = (r_edge[e] / step)[:, None]
    lam_v = ((r_edge[e] + 1) / step)[:, None]
    expected_u = start[k] + lam_u * (finish[k] - start[k])
    expected_v = start[k] + lam_v * (finish[k] - start[k])
    scale = max(1.0, float(np.abs(f.values).max()))
    defect = max(
        float(np.abs(f.values[g.edge_u[e]] - expected_u).max(initial=0.0)),
        float(np.abs(f.values[g.edge_v[e]] - expected_v).max(initial=0.0)),
    )
    if defect > tol * scale:
        raise PreconditionError(
            f"Map is not affine on the level-{i} pieces",
            details={"level": i, "defect": defect},
        )

    direction = finish - start
    length = np.linalg.norm(direction, axis=1)
    normal = np.zeros((size, 2))
    normal[:, 1] = 1.0
    moving = length > 0
    normal[moving, 0] = -direction[moving, 1] / length[moving]
    normal[moving, 1] = direction[moving, 0] / length[moving]

    m_vertex, offset, symmetric = _symmetric_position(g, i)
    interior = np.flatnonzero(symmetric & (offset != 0))
    vertex_keys = _piece_keys(g, i, m_vertex[interior], g.digits[interior, : i - 1])
    tent = tent_values(g, i)
    values = f.values.copy()
    values[interior] += A * tent[interior, None] * normal[vertex_keys]
    return PAMap(g, values, f.norm)


def orthogonality_defect(f: PAMap, F: PAMap, i: int, A: float) -> float:
    """max over level-i symmetric edges of |‖ΔF‖² − ‖Δf‖² − A²Δg²|."""
    g = f.graph
    step = g.params.unit(i)
    Ni = g.params.N[i - 1]
    m = g.edge_low // step
    inside = (m % Ni >= 1) & (m % Ni <= Ni - 2)
    tent = tent_values(g, i)
    dg = tent[g.edge_v] - tent[g.edge_u]
    dF = np.sum(F.edge_increments() ** 2, axis=1)
    df = np.sum(f.edge_increments() ** 2, axis=1)
    gap = np.abs(dF - df - A**2 * dg**2)[inside]
    return float(gap.max(initial=0.0))


def bad_map_r2(g: LaaksoGraph, levels: Sequence[int], eta: Sequence[Fraction]) -> PAMap:
    """Orthogonal steps with A = η_i over the levels in ascending order, from f ≡ 0."""
    chosen = sorted(set(int(i) for i in levels))
    if not chosen:
        raise ParameterError("Level set must be nonempty", field="levels")
    f = PAMap(g, np.zeros((g.num_vertices, 2)))
    for i in chosen:
        _check_level(g, i)
        f = orthogonal_step(f, i, float(eta[i - 1]))
    logger.debug(f"bad_map_r2 over levels {chosen}: LIP = {lip(f):.6g}")
    return f


def bad_map_blocked_lq(
    g: LaaksoGraph,
    blocks: Sequence[Sequence[int]],
    eta: Sequence[Fraction],
    q: float,
) -> PAMap:
    """Coordinates η_i·tent_i grouped by block; target norm ℓ_q with per-block Lipschitz constants."""
    if q < 1:
        raise ParameterError(f"q = {q} must be at least 1", field="q")
    seen: set = set()
    for block in blocks:
        for i in block:
            if i in seen:
                raise ParameterError(f"Level {i} appears in two blocks", field="blocks")
            seen.add(i)
            _check_level(g, i)
    columns = []
    layout = []
    for block in blocks:
        indices = []
        for i in sorted(block):
            indices.append(len(columns))
            columns.append(float(eta[i - 1]) * tent_values(g, i))
        layout.append(tuple(indices))
    if not columns:
        raise ParameterError("Blocks must contain levels", field="blocks")
    return PAMap(g, np.stack(columns, axis=1), NormSpec("lq", q, tuple(layout)))


def gluing_bound(f: PAMap, parts: Sequence[PAMap], eg: EtaGraph) -> Tuple[float, float]:
    """(lip_eta of the sum, 3·Σ LIP(f_m) + max chord ratio of the sum)."""
    chord_ratio = 0.0
    if len(eg.chord_u):
        jumps = f.norm.norm(f.values[eg.chord_v] - f.values[eg.chord_u]) / (eg.chord_units / eg.scale)
        chord_ratio = float(jumps.max())
    return lip_eta(f, eg), 3 * sum(lip(part) for part in parts) + chord_ratio


# ── Oscillation ─────────────────────────────────────────────────────────────


@dataclass
class ShortcutOscillation:
    level: int
    set_index: int
    height: Fraction
    diam_f: float
    diam_eta: Optional[Fraction]
    ratio: Optional[float]


@dataclass
class OscillationReport:
    entries: List[ShortcutOscillation]
    classified: Dict[float, Dict[int, List[int]]]
    bad_density: Dict[float, float]


def set_diameters(f: PAMap, sets: Sequence[ShortcutSet]) -> np.ndarray:
    if not sets:
        return np.zeros(0)
    members = member_array(sets)
    values = f.values[members]
    best = np.zeros(len(sets))
    for a, b in itertools.combinations(range(members.shape[1]), 2):
        best = np.maximum(best, f.norm.norm(values[:, a] - values[:, b]))
    return best


def oscillation_report(
    f: PAMap,
    eg: EtaGraph,
    eps: Sequence[float],
    levels: Optional[Sequence[int]] = None,
    with_eta_diameters: bool = True,
) -> OscillationReport:
    """Classify shortcut sets by diam f(S) ≥ εη_iδ_i and measure the d_η-neighbourhoods
    of radius η_iδ_i/ε around the classified sets."""
    g = f.graph
    if any(e <= 0 for e in eps):
        raise ParameterError("ε must be positive", field="eps")
    chosen = set(levels) if levels is not None else set(range(1, g.params.n + 1))
    entries: List[ShortcutOscillation] = []
    sets_by_level: Dict[int, List[int]] = {}
    diameters = set_diameters(f, eg.sets)
    for k, s in enumerate(eg.sets):
        if s.level not in chosen:
            continue
        sets_by_level.setdefault(s.level, []).append(k)
        diam_eta: Optional[Fraction] = None
        ratio: Optional[float] = None
        if with_eta_diameters:
            rows = eg.distances_from(list(s.members))[:, list(s.members)]
            diam_eta = eg.to_fraction(rows.max())
            ratio = float(diameters[k]) / float(diam_eta)
        entries.append(
            ShortcutOscillation(s.level, k, Fraction(s.height, g.params.D), float(diameters[k]), diam_eta, ratio)
        )

    classified: Dict[float, Dict[int, List[int]]] = {}
    density: Dict[float, float] = {}
    for e in eps:
        by_level: Dict[int, List[int]] = {}
        covered = np.zeros(g.num_vertices, dtype=bool)
        for level, indices in sorted(sets_by_level.items()):
            threshold = e * float(eg.eta[level - 1] * g.params.delta(level))
            hits = [k for k in indices if diameters[k] >= threshold * (1 - 1e-12)]
            by_level[level] = hits
            if hits:
                radius = float(eg.eta[level - 1] * g.params.delta(level)) / e
                sources = member_array([eg.sets[k] for k in hits]).ravel()
                bound = radius * eg.scale * (1 + 1e-12)
                reach = eg.distances_from(sources, limit=bound / eg.scale, min_only=True)
                covered |= reach <= bound
        classified[e] = by_level
        density[e] = float(g.vertex_measure[covered].sum())
    return OscillationReport(entries, classified, density)


def bad_density(f: PAMap, eg: EtaGraph, eps: float, levels: Optional[Sequence[int]] = None) -> float:
    report = oscillation_report(f, eg, [eps], levels, with_eta_diameters=False)
    return report.bad_density[eps]


# ── Random maps and serialisation ───────────────────────────────────────────


def random_lipschitz_map(g: LaaksoGraph, rng: np.random.Generator, anchors: int = 4) -> PAMap:
    """McShane-type 1-Lipschitz map min_j(c_j + d(·, p_j)), zero at the base vertex."""
    count = min(max(1, anchors), g.num_vertices)
    points = rng.choice(g.num_vertices, size=count, replace=False)
    offsets = rng.uniform(0.0, 0.5, size=count)
    reach = g.distances_from(points) / g.params.D
    values = np.min(offsets[:, None] + reach, axis=0)
    values -= values[g.base_vertex]
    return PAMap(g, values)


def map_rows(f: PAMap) -> Iterator[List[object]]:
    """CSV rows: vertex id, height, digits, value vector."""
    g = f.graph
    for v in range(g.num_vertices):
        digits = "".join(str(int(d)) for d in g.digits[v])
        yield [v, Fraction(int(g.heights[v]), g.params.D), digits, *[float(x) for x in f.values[v]]]


def map_header(f: PAMap) -> List[str]:
    return ["vertex", "height", "digits", *[f"value_{c}" for c in range(f.k)]]

"""
Harmonic Energy Service
q-energies on cubes, Dirichlet minimisers, the harmonic cascade F_0..F_{n+1},
its telescoping bound, the collapse-at-gates sum and the capacitary probe.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from laakso_lab.core.config import settings
from laakso_lab.core.errors import (
    ConvergenceError,
    LevelRangeError,
    ParameterError,
    UndefinedRatioError,
)
from laakso_lab.services.laakso import Cube, LaaksoGraph, VertexRef
from laakso_lab.services.maps import PAMap, lip, set_diameters
from laakso_lab.services.shortcuts import ShortcutSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnergyConfig:
    q: float = 2.0
    K: float = 1.0
    tolerance: float = field(default_factory=lambda: settings.SOLVER_TOLERANCE)
    max_iterations: int = field(default_factory=lambda: settings.SOLVER_MAX_ITERATIONS)
    epsilon: float = field(default_factory=lambda: settings.IRLS_EPSILON)

    def __post_init__(self):
        if self.q < 2:
            raise ParameterError(f"q = {self.q} must be at least 2", field="q")
        if self.K < 1:
            raise ParameterError(f"K = {self.K} must be at least 1", field="K")
        if self.tolerance <= 0 or self.epsilon <= 0:
            raise ParameterError("Solver tolerance and ε must be positive", field="tolerance")
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be at least 1", field="max_iterations")


# ── Energies ────────────────────────────────────────────────────────────────


def edge_energies(u: PAMap, q: float) -> np.ndarray:
    """w(e)·(‖Δu‖/ℓ)^q per edge."""
    return u.graph.edge_weight * u.edge_slopes() ** q


def _check_cube(g: LaaksoGraph, cube: Cube) -> None:
    p = g.params
    if not 0 <= cube.level <= p.n:
        raise LevelRangeError(cube.level, 0, p.n)
    if not 0 <= cube.m < p.prefix_product(cube.level) or len(cube.prefix) != cube.level:
        raise ParameterError(f"Cube {cube} does not belong to this graph", field="cube")
    if any(not 1 <= d <= p.M for d in cube.prefix):
        raise ParameterError(f"Cube {cube} does not belong to this graph", field="cube")


def energy(u: PAMap, cube: Cube, q: float) -> float:
    """E_q(u, Q): sum over the edges whose interiors lie in Q."""
    _check_cube(u.graph, cube)
    return float(edge_energies(u, q)[u.graph.edges_in(cube)].sum())


def cube_energies(u: PAMap, level: int, q: float) -> np.ndarray:
    """E_q(u, Q) for every level-`level` cube, indexed by cube label."""
    g = u.graph
    return np.bincount(g.cube_of_edges(level), edge_energies(u, q), minlength=g.cube_count(level))


def strong_convexity_gap(u: PAMap, v: PAMap, cube: Cube, q: float, K: float = 1.0) -> float:
    """E(u) + E(v) − 2E((u+v)/2) − 2K^{-q}E((u−v)/2); non-negative for q-uniformly convex targets."""
    mid = (u + v).scaled(0.5)
    half = (u - v).scaled(0.5)
    return energy(u, cube, q) + energy(v, cube, q) - 2 * energy(mid, cube, q) - 2 * K ** (-q) * energy(half, cube, q)


# ── Dirichlet solves ────────────────────────────────────────────────────────


def _dirichlet(
    g: LaaksoGraph,
    values: np.ndarray,
    fixed: np.ndarray,
    edges: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Minimise Σ c_e |Δu|² over `edges`, keeping `fixed` vertices at `values`.

    Only vertices touched by `edges` move; the rest keep their input values.
    """
    V = g.num_vertices
    u, v = g.edge_u[edges], g.edge_v[edges]
    c = np.ones(len(edges)) if weights is None else weights
    W = sparse.coo_matrix((c, (u, v)), shape=(V, V)).tocsr()
    W = W + W.T
    laplacian = (sparse.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()

    touched = np.zeros(V, dtype=bool)
    touched[u] = True
    touched[v] = True
    free = np.flatnonzero(touched & ~fixed)
    bound = np.flatnonzero(touched & fixed)
    out = values.copy()
    if len(free) == 0:
        return out
    rows = laplacian[free]
    rhs = -(rows[:, bound] @ values[bound])
    system = rows[:, free].tocsc()
    out[free] = splu(system).solve(np.ascontiguousarray(rhs))
    return out


def _irls(
    g: LaaksoGraph,
    values: np.ndarray,
    fixed: np.ndarray,
    edges: np.ndarray,
    cfg: EnergyConfig,
) -> np.ndarray:
    """q > 2: reweighted Dirichlet solves with weights (slope² + ε²)^{(q−2)/2}."""
    if values.shape[1] != 1:
        raise ParameterError("q > 2 is supported for scalar targets only", field="q")
    D = g.params.D
    w = g.edge_weight[edges]

    def total(x: np.ndarray) -> float:
        slope = np.abs(x[g.edge_v[edges], 0] - x[g.edge_u[edges], 0]) * D
        return float(np.sum(w * slope**cfg.q))

    best, best_energy = values, total(values)
    current = _dirichlet(g, values, fixed, edges)
    previous = total(current)
    if previous < best_energy:
        best, best_energy = current, previous
    residual = np.inf
    for iteration in range(1, cfg.max_iterations + 1):
        if previous <= 0:
            return best
        slope = np.abs(current[g.edge_v[edges], 0] - current[g.edge_u[edges], 0]) * D
        weights = (slope**2 + cfg.epsilon**2) ** ((cfg.q - 2) / 2)
        current = _dirichlet(g, values, fixed, edges, weights)
        value = total(current)
        if value < best_energy:
            best, best_energy = current, value
        residual = abs(previous - value) / previous
        if residual < cfg.tolerance:
            logger.debug(f"IRLS converged after {iteration} iterations (q={cfg.q})")
            return best
        previous = value
    raise ConvergenceError(
        f"IRLS did not reach tolerance {cfg.tolerance} for q = {cfg.q}",
        residual=float(residual),
        iterations=cfg.max_iterations,
    )


def _solve(g: LaaksoGraph, values: np.ndarray, fixed: np.ndarray, edges: np.ndarray, cfg: EnergyConfig) -> np.ndarray:
    if cfg.q == 2:
        return _dirichlet(g, values, fixed, edges)
    return _irls(g, values, fixed, edges, cfg)


def symmetry_representatives(g: LaaksoGraph, i: int) -> np.ndarray:
    """rep[v]: digit i set to 1 on interiors of symmetric level-i intervals, identity elsewhere."""
    p = g.params
    step = p.unit(i)
    Ni = p.N[i - 1]
    m = g.heights // step
    offset = g.heights - m * step
    symmetric = (m % Ni >= 1) & (m % Ni <= Ni - 2) & (offset != 0)
    # positions after i−1 that carry a real digit (a wildcard drops one)
    later = (p.n - i) - (g.wildcard_position[g.heights] > i - 1).astype(np.int64)
    shift = (g.digits[:, i - 1] - 1) * p.M**later
    rep = np.arange(g.num_vertices, dtype=np.int64)
    rep[symmetric] -= shift[symmetric]
    return rep


def _quotient_edges(g: LaaksoGraph, rep: np.ndarray, edges: np.ndarray) -> np.ndarray:
    keep = (rep[g.edge_u[edges]] == g.edge_u[edges]) & (rep[g.edge_v[edges]] == g.edge_v[edges])
    return edges[keep]


def minimize_piece(f: PAMap, cube: Cube, cfg: EnergyConfig) -> PAMap:
    """Minimiser of E_q on Q among maps equal to f on ∂Q; vertices outside Q keep f's values."""
    g = f.graph
    _check_cube(g, cube)
    boundary = g.boundary_vertices(cube)
    if len(boundary) == 0:
        values = f.values.copy()
        values[g.vertices_in(cube)] = f.values[g.base_vertex]
        return PAMap(g, values, f.norm)
    fixed = np.zeros(g.num_vertices, dtype=bool)
    fixed[boundary] = True
    return PAMap(g, _solve(g, f.values, fixed, g.edges_in(cube), cfg), f.norm)


def level_solution(f: PAMap, i: int, cfg: EnergyConfig, symmetrize: bool = False) -> PAMap:
    """F_i: per-cube minimisers over the level-i cover, glued along shared boundaries."""
    g = f.graph
    n = g.params.n
    if not 0 <= i <= n + 1:
        raise LevelRangeError(i, 0, n + 1)
    if i == 0:
        return PAMap(g, np.tile(f.values[g.base_vertex], (g.num_vertices, 1)), f.norm)
    if i == n + 1:
        return PAMap(g, f.values.copy(), f.norm)
    fixed = g.level_boundary(i)
    edges = np.arange(g.num_edges)
    if not symmetrize:
        return PAMap(g, _solve(g, f.values, fixed, edges, cfg), f.norm)
    rep = symmetry_representatives(g, i)
    solved = _solve(g, f.values, fixed, _quotient_edges(g, rep, edges), cfg)
    return PAMap(g, solved[rep], f.norm)


# ── Cascade ─────────────────────────────────────────────────────────────────


@dataclass
class EnergyCascade:
    source: PAMap
    config: EnergyConfig
    symmetrized: bool
    levels: List[PAMap]
    diff_edge_energies: List[np.ndarray]
    lipschitz: List[float]

    @property
    def graph(self) -> LaaksoGraph:
        return self.source.graph

    def diff_cube_energies(self, i: int, level: int) -> np.ndarray:
        """E_q(F_{i+1} − F_i, Q) for the cubes of `level`."""
        g = self.graph
        return np.bincount(g.cube_of_edges(level), self.diff_edge_energies[i], minlength=g.cube_count(level))

    def total_diff_energy(self) -> float:
        return float(sum(e.sum() for e in self.diff_edge_energies))


def cascade(f: PAMap, cfg: Optional[EnergyConfig] = None, symmetrize: bool = False) -> EnergyCascade:
    """F_0 (constant), F_1..F_n (level minimisers) and F_{n+1} = f."""
    cfg = cfg or EnergyConfig()
    g = f.graph
    levels = [level_solution(f, i, cfg, symmetrize) for i in range(g.params.n + 2)]
    diffs = [edge_energies(levels[i + 1] - levels[i], cfg.q) for i in range(g.params.n + 1)]
    logger.info(
        f"Cascade on G_{g.params.n}: q={cfg.q}, symmetrize={symmetrize}, "
        f"Σ diff energy = {sum(d.sum() for d in diffs):.6g}"
    )
    return EnergyCascade(f, cfg, symmetrize, levels, diffs, [lip(F) for F in levels])


@dataclass
class TelescopingRow:
    cube_level: int
    start_level: int
    cube: int
    cumulative: float
    bound: float


def telescoping_table(c: EnergyCascade, L: Optional[float] = None) -> List[TelescopingRow]:
    """Σ_{i ≥ i0} E_q(F_{i+1} − F_i, Q₀) against ½(2KL)^q μ(Q₀), for every cube Q₀ and i0 ≥ level(Q₀)."""
    g = c.graph
    n = g.params.n
    L = lip(c.source) if L is None else L
    rows = []
    for j in range(n + 1):
        measure = float(g.cube_measure(Cube(j, 0, (1,) * j)))
        bound = 0.5 * (2 * c.config.K * L) ** c.config.q * measure
        per_level = np.stack([c.diff_cube_energies(i, j) for i in range(j, n + 1)])
        tails = np.cumsum(per_level[::-1], axis=0)[::-1]
        for offset, tail in enumerate(tails):
            for label, value in enumerate(tail):
                rows.append(TelescopingRow(j, j + offset, label, float(value), bound))
    return rows


def cascade_rows(c: EnergyCascade) -> List[List[object]]:
    """CSV rows (level, cube, diff_energy, cumulative, bound, lip)."""
    g = c.graph
    n = g.params.n
    L = lip(c.source)
    rows = []
    for i in range(n + 1):
        measure = float(g.cube_measure(Cube(i, 0, (1,) * i)))
        bound = 0.5 * (2 * c.config.K * L) ** c.config.q * measure
        own = c.diff_cube_energies(i, i)
        cumulative = sum(c.diff_cube_energies(k, i) for k in range(i, n + 1))
        for label in range(g.cube_count(i)):
            rows.append([i, label, float(own[label]), float(cumulative[label]), bound, c.lipschitz[i]])
    return rows


# ── Cascade checks ──────────────────────────────────────────────────────────


def symmetry_defect(c: EnergyCascade) -> float:
    """max |F_i(v) − F_i(rep_i v)| over levels 1..n."""
    g = c.graph
    worst = 0.0
    for i in range(1, g.params.n + 1):
        rep = symmetry_representatives(g, i)
        values = c.levels[i].values
        worst = max(worst, float(np.abs(values - values[rep]).max()))
    return worst


def gate_defect(c: EnergyCascade, sets: Sequence[ShortcutSet]) -> float:
    """max |diam(F_{i+1} − F_i)(S) − diam f(S)| over level-i shortcut sets."""
    worst = 0.0
    for i in range(1, c.graph.params.n + 1):
        level_sets = [s for s in sets if s.level == i]
        if not level_sets:
            continue
        diff = c.levels[i + 1] - c.levels[i]
        gap = np.abs(set_diameters(diff, level_sets) - set_diameters(c.source, level_sets))
        worst = max(worst, float(gap.max()))
    return worst


def monotonicity_defect(c: EnergyCascade) -> float:
    """Largest decrease of E_q(F_i, Q₀) in i ≥ level(Q₀)."""
    g = c.graph
    worst = 0.0
    for j in range(g.params.n + 1):
        series = np.stack([cube_energies(c.levels[i], j, c.config.q) for i in range(j, g.params.n + 2)])
        if len(series) > 1:
            worst = max(worst, float(np.max(series[:-1] - series[1:])))
    return worst


def variational_gap(c: EnergyCascade, i: int, rng: np.random.Generator, samples: int = 20, scale: float = 0.05) -> float:
    """max over random admissible v and level-i cubes of E(u) + 2(2K)^{-q}E(u − v) − E(v)."""
    g = c.graph
    if not 0 <= i <= g.params.n:
        raise LevelRangeError(i, 0, g.params.n)
    u = c.levels[i]
    q, K = c.config.q, c.config.K
    free = ~g.level_boundary(i) if i > 0 else np.ones(g.num_vertices, dtype=bool)
    base = cube_energies(u, i, q)
    worst = -np.inf
    for _ in range(samples):
        noise = rng.normal(0.0, scale, size=u.values.shape) / g.params.D
        noise[~free] = 0.0
        v = PAMap(g, u.values + noise, u.norm)
        gap = base + 2 * (2 * K) ** (-q) * cube_energies(u - v, i, q) - cube_energies(v, i, q)
        worst = max(worst, float(gap.max()))
    return worst


# ── Collapse and capacity ───────────────────────────────────────────────────


def sets_inside(g: LaaksoGraph, cube: Cube, sets: Sequence[ShortcutSet]) -> List[ShortcutSet]:
    lo, hi = g.cube_interval(cube)
    return [
        s
        for s in sets
        if s.level > cube.level and lo <= s.height <= hi and s.prefix[: cube.level] == tuple(cube.prefix)
    ]


@dataclass
class CollapseResult:
    total: float
    ratio: float
    sets: int


def collapse_sum(f: PAMap, cube: Cube, sets: Sequence[ShortcutSet], s: Optional[float] = None) -> CollapseResult:
    """Σ_{S ⊆ Q} (diam f(S))^s and its ratio to LIP(f)^s μ(Q)."""
    g = f.graph
    _check_cube(g, cube)
    s = g.params.s if s is None else s
    inside = sets_inside(g, cube, sets)
    total = float(np.sum(set_diameters(f, inside) ** s)) if inside else 0.0
    L = lip(f)
    if L == 0:
        return CollapseResult(total, 0.0, len(inside))
    return CollapseResult(total, total / (L**s * float(g.cube_measure(cube))), len(inside))


def capacity_ratio(f: PAMap, x: VertexRef, y: VertexRef, p: float, lam: Optional[float] = None) -> float:
    """‖f(x) − f(y)‖^s / (L^{s−p} Σ_{e ⊆ B(x, 2λd(x,y))} w(e)(‖Δf‖/ℓ)^p)."""
    g = f.graph
    s = g.params.s
    if not 1 <= p < s:
        raise ParameterError(f"p = {p} must satisfy 1 <= p < s = {s:.6g}", field="p")
    lam = settings.CAPACITY_LAMBDA if lam is None else lam
    i, j = g.index_of(x), g.index_of(y)
    if i == j:
        raise UndefinedRatioError()
    reach = g.distances_from(i)
    radius = 2 * lam * reach[j]
    inside = (reach[g.edge_u] <= radius) & (reach[g.edge_v] <= radius)
    numerator = float(f.norm.norm(f.values[i] - f.values[j])[0]) ** s
    if numerator == 0:
        return 0.0
    denominator = lip(f) ** (s - p) * float(np.sum(g.edge_weight[inside] * f.edge_slopes()[inside] ** p))
    return numerator / denominator


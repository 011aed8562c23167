"""
Invariant Verification Suite
Numbered pass/fail checks over every service at small default parameters.
Exit status is nonzero iff a check fails.
"""

import hashlib
import itertools
import json
import logging
import tempfile
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from laakso_lab import experiments
from laakso_lab.core.config import settings
from laakso_lab.core.errors import ScheduleError
from laakso_lab.core.rng import make_rng
from laakso_lab.schemas.experiment import ExperimentConfig
from laakso_lab.schemas.reports import CheckResult, VerifySummary
from laakso_lab.services import diamond, energy, liplight, maps, schedules, shortcuts
from laakso_lab.services.laakso import Cube, LaaksoGraph, LaaksoParams, build_graph, dist_formula

logger = logging.getLogger(__name__)

FAULTS = ("chord",)
Measured = Dict[str, Any]


class CheckFailed(Exception):
    """A verification check measured a value outside its bound"""


def expect(condition: bool, message: str) -> None:
    if not condition:
        raise CheckFailed(message)


@dataclass
class Suite:
    depth: int
    seed: int
    fault: Optional[str] = None

    def rng(self, stream: int) -> np.random.Generator:
        # one independent stream per check keeps checks reorderable
        return make_rng(self.seed + stream)

    def graph_at(self, n: int) -> LaaksoGraph:
        return build_graph(LaaksoParams.constant(2, 4, n))

    @cached_property
    def tiny(self) -> LaaksoGraph:
        return self.graph_at(1)

    @cached_property
    def small(self) -> LaaksoGraph:
        return self.graph_at(min(self.depth, 2))

    @cached_property
    def deep(self) -> LaaksoGraph:
        return self.graph_at(self.depth)

    def eta_graph(self, g: LaaksoGraph) -> shortcuts.EtaGraph:
        return shortcuts.EtaGraph(g, schedules.eta_geometric(g.params.n, 0.5))

    @cached_property
    def deep_eta(self) -> shortcuts.EtaGraph:
        return self.eta_graph(self.deep)

    @cached_property
    def small_eta(self) -> shortcuts.EtaGraph:
        return self.eta_graph(self.small)


# ── Laakso graphs ───────────────────────────────────────────────────────────


def check_construction(suite: Suite) -> Measured:
    g = suite.tiny
    expect(g.num_vertices == 31 and g.num_edges == 32, f"G_1(2; 4, 4) has {g.num_vertices} vertices, {g.num_edges} edges")
    deep = suite.deep
    expect(deep.num_vertices == deep.params.vertex_count(), "vertex count disagrees with the closed form")
    expect(deep.num_edges == deep.params.edge_count(), "edge count disagrees with the closed form")
    expect(abs(float(deep.vertex_measure.sum()) - 1) <= settings.FLOAT_SLACK, "vertex measure is not a probability")
    return {"vertices": deep.num_vertices, "edges": deep.num_edges}


def check_formula_all_pairs(suite: Suite) -> Measured:
    g = suite.small
    table = g.distance_matrix()
    bad = [
        (x, y)
        for x, y in itertools.combinations(range(g.num_vertices), 2)
        if g.to_fraction(table[x, y]) != dist_formula(g, x, y)
    ]
    expect(not bad, f"{len(bad)} pairs disagree, first {bad[:3]}")
    return {"n": g.params.n, "pairs": g.num_vertices * (g.num_vertices - 1) // 2}


def check_formula_sampled(suite: Suite) -> Measured:
    g = suite.deep
    rng = suite.rng(3)
    pairs = rng.choice(g.num_vertices, size=(500, 2))
    bad = 0
    for x, y in pairs:
        bad += g.to_fraction(g.distances_from(int(x))[int(y)]) != dist_formula(g, int(x), int(y))
    expect(bad == 0, f"{bad} of {len(pairs)} sampled pairs disagree")
    return {"n": g.params.n, "pairs": len(pairs)}


def check_metric_axioms(suite: Suite) -> Measured:
    g = suite.small
    table = g.distance_matrix()
    expect(np.array_equal(table, table.T), "distance matrix is not symmetric")
    off = ~np.eye(g.num_vertices, dtype=bool)
    expect(bool(np.all(table[off] > 0)), "distinct vertices at distance 0")
    rng = suite.rng(4)
    triples = rng.choice(g.num_vertices, size=(2000, 3))
    x, y, z = triples.T
    expect(bool(np.all(table[x, z] <= table[x, y] + table[y, z])), "triangle inequality fails")
    return {"triples": len(triples)}


def check_cube_partition(suite: Suite) -> Measured:
    g = suite.deep
    for level in range(g.params.n + 1):
        mass = np.bincount(g.cube_of_edges(level), g.edge_weight, minlength=g.cube_count(level))
        expected = float(g.cube_measure(Cube(level, 0, (1,) * level)))
        expect(float(np.abs(mass - expected).max()) <= settings.FLOAT_SLACK, f"cube masses uneven at level {level}")
    return {"levels": g.params.n + 1, "theta": g.params.theta}


# ── Shortcut metric ─────────────────────────────────────────────────────────


def check_member_distances(suite: Suite) -> Measured:
    eg = suite.deep_eta
    defects = shortcuts.member_distance_defects(suite.deep, eg.families)
    expect(not defects, f"{len(defects)} member pairs not δ_i apart")
    return {"sets": len(eg.sets)}


def check_net_radius(suite: Suite) -> Measured:
    g = suite.deep
    measured = {}
    for family in suite.deep_eta.families:
        radius = shortcuts.net_radius(g, family)
        expect(radius <= Fraction(3, 2) * g.params.delta(family.level), f"level {family.level} net radius {radius}")
        measured[f"level_{family.level}"] = str(radius / g.params.delta(family.level))
    return measured


def check_separation(suite: Suite) -> Measured:
    eg = suite.deep_eta
    if suite.fault == "chord":
        eg = eg.with_perturbed_chord()
    low, high = shortcuts.chord_diameter_bounds(eg)
    expect(low >= Fraction(1, 3), f"chord diameter ratio {low} below 1/3")
    expect(high <= 1, f"chord diameter ratio {high} above 1")

    g = suite.graph_at(min(suite.depth, 3))
    n = g.params.n
    sets = shortcuts.all_sets(shortcuts.enumerate_shortcuts(g))
    base = shortcuts.set_separation(g, sets, g.params)
    expect(_at_least(base, Fraction(1, 2)), f"base separation {base} below δ/2")
    measured = {"low": str(low), "high": str(high), "base": str(base)}
    for name, eta in (("ones", (Fraction(1),) * n), ("geometric", schedules.eta_geometric(n, 0.5))):
        contracted = shortcuts.EtaGraph(g, eta)
        if suite.fault == "chord":
            contracted = contracted.with_perturbed_chord()
        separation = shortcuts.set_separation(contracted, contracted.sets, g.params)
        expect(_at_least(separation, Fraction(1, 6)), f"{name} d_η separation {separation} below δ/6")
        measured[name] = str(separation)
    return measured


def _at_least(value: Optional[Fraction], bound: Fraction) -> bool:
    return value is None or value >= bound


def check_single_jump(suite: Suite) -> Measured:
    eg = suite.deep_eta if suite.depth <= 3 else suite.eta_graph(suite.graph_at(3))
    pairs = 1000 if eg.params.n >= 3 else 200
    samples = shortcuts.single_jump_sweep(eg, suite.rng(9), pairs)
    worst = max((s.best_cost / s.contracted for s in samples), default=Fraction(0))
    expect(worst <= 3, f"single-jump ratio {worst}")
    return {"n": eg.params.n, "pairs": len(samples), "ratio": str(worst)}


def check_chain_oracle(suite: Suite) -> Measured:
    eg = shortcuts.EtaGraph(suite.tiny, (Fraction(1, 2),))
    bad = [
        (x, y)
        for x, y in itertools.combinations(range(suite.tiny.num_vertices), 2)
        if shortcuts.chain_distance(eg, x, y, max_jumps=2) != shortcuts.dist_eta(eg, x, y)
    ]
    expect(not bad, f"{len(bad)} pairs where two jumps do not realise d_η")
    return {"pairs": suite.tiny.num_vertices * (suite.tiny.num_vertices - 1) // 2}


def check_neighbourhoods(suite: Suite) -> Measured:
    eg = suite.deep_eta
    failing = [k for k, s in enumerate(eg.sets) if not shortcuts.neighbourhood_inclusion(eg, s, Fraction(1, 8))]
    expect(not failing, f"{len(failing)} sets with B_η(S, δ/8) ⊄ B(S, 9δ/8)")
    return {"sets": len(eg.sets)}


def check_distortion(suite: Suite) -> Measured:
    eg = suite.deep_eta
    measured = shortcuts.distortion(eg)
    bound = 1 / float(min(eg.eta))
    expect(measured <= bound * (1 + settings.FLOAT_SLACK), f"distortion {measured:.6g} above {bound:.6g}")
    return {"distortion": measured, "bound": bound}


def check_schedule(suite: Suite) -> Measured:
    alpha = schedules.alpha_sequence("power", 1000)
    report = schedules.schedule_blocks(alpha, p=2.0, sigma=1.0)
    expect(report.total_power <= 1, f"Σ block powers {report.total_power:.6g} above 1")
    expect(report.diverging(alpha), "selected mass does not keep growing")
    geometric = schedules.alpha_sequence("geometric", 200, ratio=0.5)
    expect(not schedules.schedule_blocks(geometric, p=2.0, sigma=1.0).diverging(geometric), "summable α reported as diverging")
    try:
        schedules.schedule_blocks(np.ones(100), p=2.0, sigma=1.0)
    except ScheduleError:
        pass
    else:
        raise CheckFailed("constant α was scheduled")
    return {"blocks": len(report.blocks), "total_power": report.total_power}


# ── Maps and energies ───────────────────────────────────────────────────────


def check_orthogonal_steps(suite: Suite) -> Measured:
    g = suite.small
    eta = schedules.eta_geometric(g.params.n, 0.5)
    f = maps.PAMap(g, np.zeros((g.num_vertices, 2)))
    worst = 0.0
    for i in range(1, g.params.n + 1):
        F = maps.orthogonal_step(f, i, float(eta[i - 1]))
        worst = max(worst, maps.orthogonality_defect(f, F, i, float(eta[i - 1])))
        f = F
    expect(worst <= settings.FLOAT_SLACK, f"orthogonality defect {worst:.3g}")
    return {"defect": worst, "lip": maps.lip(f)}


def check_cascade(suite: Suite) -> Measured:
    g = suite.graph_at(4) if suite.depth >= 3 else suite.deep
    count = 20 if suite.depth >= 3 else 3
    rng = suite.rng(15)
    slack = settings.FLOAT_SLACK
    worst_gap = -np.inf
    for _ in range(count):
        f = maps.random_lipschitz_map(g, rng, anchors=4)
        result = energy.cascade(f, energy.EnergyConfig(q=2.0, K=1.0))
        over = [r for r in energy.telescoping_table(result) if r.cumulative > r.bound * (1 + slack) + slack]
        expect(not over, f"{len(over)} telescoping rows above the bound")
        for i in range(g.params.n + 1):
            gap = energy.variational_gap(result, i, rng, samples=5)
            expect(gap <= slack, f"variational gap {gap:.3g} at level {i}")
            worst_gap = max(worst_gap, gap)
    return {"n": g.params.n, "maps": count, "variational_gap": worst_gap}


def check_symmetrized_cascade(suite: Suite) -> Measured:
    g = suite.small
    f = maps.random_lipschitz_map(g, suite.rng(17), anchors=3)
    result = energy.cascade(f, energy.EnergyConfig(q=2.0), symmetrize=True)
    defect = energy.symmetry_defect(result)
    expect(defect <= 1e-8, f"symmetry defect {defect:.3g}")
    gate = energy.gate_defect(result, suite.small_eta.sets)
    expect(gate <= 1e-9, f"gate defect {gate:.3g}")
    return {"symmetry_defect": defect, "gate_defect": gate}


def check_collapse_stability(suite: Suite) -> Measured:
    depths = list(range(max(2, suite.depth - 2), suite.depth + 1)) if suite.depth >= 2 else [suite.depth]
    worst = {}
    for n in depths:
        g = suite.graph_at(n)
        sets = shortcuts.all_sets(shortcuts.enumerate_shortcuts(g))
        rng = suite.rng(19)
        worst[n] = max(
            energy.collapse_sum(maps.random_lipschitz_map(g, rng), Cube(0, 0, ()), sets).ratio for _ in range(20)
        )
    first, last = worst[depths[0]], worst[depths[-1]]
    expect(last <= 2 * first, f"collapse ratio grows from {first:.4g} at n={depths[0]} to {last:.4g} at n={depths[-1]}")
    return {f"n_{n}": ratio for n, ratio in worst.items()}


def check_convexity(suite: Suite) -> Measured:
    g = suite.small
    rng = suite.rng(18)
    u = maps.random_lipschitz_map(g, rng)
    v = maps.random_lipschitz_map(g, rng)
    gap = energy.strong_convexity_gap(u, v, Cube(0, 0, ()), q=2.0, K=1.0)
    expect(abs(gap) <= settings.FLOAT_SLACK, f"parallelogram gap {gap:.3g}")
    return {"gap": gap}


# ── Diamonds and Lipschitz-light maps ───────────────────────────────────────


def check_diamond(suite: Suite) -> Measured:
    N = suite.small.params.N
    p_G = diamond.compute_p_G(N)
    expect(p_G == 1, f"p_G = {p_G}")
    expect(not diamond.midpoint_parity_failures(N), "midpoint parity fails")
    expect(not diamond.digit_criterion_failures(N), "digit criterion fails")
    expect(diamond.restricted_N((4, 4, 4), [1]) == (4, 16), "restricted N for I = {1}")
    return {"p_G": p_G}


def check_projections(suite: Suite) -> Measured:
    g = suite.small
    families = suite.small_eta.families
    for i in range(1, g.params.n + 1):
        projection = diamond.project_laakso(g, [i], families)
        expect(projection.lipschitz, f"projection for I = {{{i}}} maps {projection.non_edges} edges to non-edges")
        expect(projection.dichotomy_holds(g.params), f"jump dichotomy fails for I = {{{i}}}")
    return {"levels": g.params.n}


def check_class_partitions(suite: Suite) -> Measured:
    g = suite.graph_at(min(suite.depth, 3))
    p = g.params
    schedules_by_name = {
        "ones": (Fraction(1),) * p.n,
        "geometric": schedules.eta_geometric(p.n, 0.5),
        "power": schedules.eta_power(p.n),
    }
    intervals = liplight.canonical_intervals(p, range(2, p.n + 2), limit=16, rng=suite.rng(20))
    checked = 0
    for name, eta in schedules_by_name.items():
        eg = shortcuts.EtaGraph(g, eta)
        for k, m in intervals:
            partition = liplight.class_partition(eg, k, m)
            where = f"{name} η at k={k}, m={m}"
            expect(partition.max_diameter <= 5 * partition.length, f"class diameter {partition.max_diameter} above 5|I| for {where}")
            if partition.separation is None:
                continue
            expect(partition.separation >= partition.length / 3, f"class separation {partition.separation} below |I|/3 for {where}")
            components = liplight.r_components(eg, np.concatenate(partition.vertex_sets), partition.separation / 2)
            expect(liplight.component_containment(partition, components), f"component crosses classes for {where}")
            checked += 1
    return {"n": p.n, "partitions": checked}


def check_light_constant(suite: Suite) -> Measured:
    constants = {}
    for n in range(2, min(suite.depth, 4) + 1):
        eg = suite.eta_graph(suite.graph_at(n))
        intervals = liplight.canonical_intervals(eg.params, [2], limit=6, rng=suite.rng(21))
        report = liplight.light_constant(eg, intervals)
        expect(np.isfinite(report.constant) and report.constant > 0, f"light constant at n={n} is not finite")
        constants[n] = report.constant
    if not constants:
        eg = suite.small_eta
        intervals = liplight.canonical_intervals(eg.params, [eg.params.n + 1], limit=8, rng=suite.rng(21))
        constants[eg.params.n] = liplight.light_constant(eg, intervals).constant
    values = list(constants.values())
    expect(max(values) <= 2 * min(values), f"light constant varies with depth: {constants}")
    return {f"n_{n}": value for n, value in constants.items()}


def check_density(suite: Suite) -> Measured:
    eg = suite.deep_eta
    n = eg.params.n
    profile = shortcuts.density_profile(eg, [1.0 / i for i in range(1, n + 1)])
    tails = np.array(profile.cumulative)
    expect(bool(np.all(np.diff(tails) <= settings.FLOAT_SLACK)), "tail densities increase")
    expect(float(tails.max()) <= 1 + settings.FLOAT_SLACK, "density above 1")
    divergent = shortcuts.density_profile(eg, schedules.alpha_sequence("constant", n, value=1.0))
    convergent = shortcuts.density_profile(eg, schedules.alpha_sequence("geometric", n, ratio=0.5))
    dominated = [i for i, (a, b) in enumerate(zip(divergent.cumulative, convergent.cumulative), start=1) if a <= b]
    expect(not dominated, f"divergent α does not dominate at levels {dominated}")
    return {"first": profile.cumulative[0], "last": profile.cumulative[-1], "divergent_last": divergent.cumulative[-1]}



# ── Harness ─────────────────────────────────────────────────────────────────


def check_reproducible(suite: Suite) -> Measured:
    config = ExperimentConfig.model_validate(
        {"experiment": "verify-shortcuts", "params": {"M": 2, "N": 4, "n": 2}, "seed": suite.seed}
    )
    digests = []
    with tempfile.TemporaryDirectory() as tmp:
        for attempt in range(2):
            directory = experiments.run(config, Path(tmp) / f"run{attempt}")
            digests.append(
                {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.glob("*.csv"))}
            )
    expect(digests[0] == digests[1], "repeated runs differ")
    return {"files": len(digests[0])}


CHECKS: List[Tuple[str, Callable[[Suite], Measured]]] = [
    ("Laakso graph construction", check_construction),
    ("Distance formula on all pairs", check_formula_all_pairs),
    ("Distance formula on sampled pairs", check_formula_sampled),
    ("Metric axioms", check_metric_axioms),
    ("Cube partition and measures", check_cube_partition),
    ("Shortcut member distances", check_member_distances),
    ("Shortcut net radius", check_net_radius),
    ("Contracted separation and chord diameter", check_separation),
    ("Single-jump decomposition", check_single_jump),
    ("Two-jump chain oracle", check_chain_oracle),
    ("Shortcut neighbourhood inclusion", check_neighbourhoods),
    ("Distortion bound", check_distortion),
    ("Block schedule", check_schedule),
    ("Orthogonal steps", check_orthogonal_steps),
    ("Harmonic cascade telescoping", check_cascade),
    ("Symmetrized cascade", check_symmetrized_cascade),
    ("Collapse sum depth stability", check_collapse_stability),
    ("Parallelogram energy identity", check_convexity),
    ("Diamond profiles and restrictions", check_diamond),
    ("Laakso to diamond projections", check_projections),
    ("Class partitions", check_class_partitions),
    ("Lipschitz-light constant", check_light_constant),
    ("Shortcut density profile", check_density),
    ("Reproducible artifacts", check_reproducible),
]


def verify_all(
    depth: Optional[int] = None,
    seed: Optional[int] = None,
    fault: Optional[str] = None,
    output: Optional[Path] = None,
) -> VerifySummary:
    depth = settings.VERIFY_DEPTH if depth is None else depth
    seed = settings.DEFAULT_SEED if seed is None else seed
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"Unknown fault {fault!r}")
    suite = Suite(depth, seed, fault)
    summary = VerifySummary(depth=depth, seed=seed, fault=fault)
    total = len(CHECKS)

    print("=" * 60)
    print(f"  Invariant Verification (depth {depth}, seed {seed})")
    print("=" * 60)
    for number, (name, check) in enumerate(CHECKS, start=1):
        print(f"[{number}/{total}] {name}...", end=" ", flush=True)
        try:
            measured = check(suite)
            print("OK ✓")
            summary.checks.append(CheckResult(number=number, name=name, passed=True, measured=measured))
        except Exception as e:
            print(f"FAIL ✗  → {e}")
            logger.debug(f"Check {name} raised", exc_info=True)
            summary.checks.append(CheckResult(number=number, name=name, passed=False, detail=str(e)))

    print("\n" + "=" * 60)
    print(f"  Results: {summary.passed} passed, {summary.failed} failed")
    print("=" * 60)

    if output is not None:
        directory = Path(output)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "verify.json").write_text(
            json.dumps(summary.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
        )
    return summary

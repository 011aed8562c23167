"""
Experiment Runner
Dispatches a validated ExperimentConfig to one experiment, writes its CSV tables and
the run manifest. Identical config and seed give byte-identical CSV output.
"""

import json
import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from laakso_lab.contracts.artifacts import ArtifactWriter
from laakso_lab.core.config import settings
from laakso_lab.core.errors import ConfigError, InvariantViolation, LabError
from laakso_lab.core.rng import make_rng
from laakso_lab.schemas.experiment import ExperimentConfig, ExperimentOptions
from laakso_lab.services import diamond, energy, liplight, maps, schedules, shortcuts
from laakso_lab.services.laakso import (
    Cube,
    LaaksoGraph,
    LaaksoParams,
    build_graph,
    cube_shape_report,
    cubes,
    dist_formula,
)

logger = logging.getLogger(__name__)

Summary = Dict[str, Any]


@dataclass
class RunContext:
    """Lazily built objects shared by one experiment run"""

    config: ExperimentConfig
    writer: ArtifactWriter
    rng: Optional[np.random.Generator] = None
    failures: List[str] = field(default_factory=list)

    @property
    def options(self) -> ExperimentOptions:
        return self.config.options

    @cached_property
    def params(self) -> LaaksoParams:
        return self.config.params.to_params()

    @cached_property
    def graph(self) -> LaaksoGraph:
        return build_graph(self.params)

    @cached_property
    def eta(self) -> Tuple[Fraction, ...]:
        return shortcuts.validate_eta(self.config.eta.resolve(self.params.n), self.params.n)

    @cached_property
    def eta_graph(self) -> shortcuts.EtaGraph:
        return shortcuts.EtaGraph(self.graph, self.eta)

    def levels(self, low: int, high: int) -> List[int]:
        chosen = self.options.levels if self.options.levels is not None else list(range(low, high + 1))
        return sorted(set(chosen))

    def energy_config(self) -> energy.EnergyConfig:
        overrides = {}
        if self.options.tolerance is not None:
            overrides["tolerance"] = self.options.tolerance
        if self.options.max_iterations is not None:
            overrides["max_iterations"] = self.options.max_iterations
        return energy.EnergyConfig(q=self.options.q, K=self.options.K, **overrides)

    def check(self, name: str, passed: bool, detail: str = "") -> bool:
        if not passed:
            self.failures.append(f"{name} {detail}".strip())
            logger.warning(f"Check failed: {name} {detail}")
        return passed


# ── Experiments ─────────────────────────────────────────────────────────────


def run_verify_metric(ctx: RunContext) -> Summary:
    g = ctx.graph
    table = g.distance_matrix()
    rows = []
    mismatches = 0
    for x in range(g.num_vertices):
        for y in range(x + 1, g.num_vertices):
            exact = g.to_fraction(table[x, y])
            formula = dist_formula(g, x, y)
            mismatches += exact != formula
            rows.append([x, y, exact, formula, exact == formula])
    ctx.writer.write_csv("distances.csv", ["x", "y", "dist", "dist_formula", "equal"], rows)
    ctx.check("distance formula", mismatches == 0, f"{mismatches} mismatched pairs")
    return {"vertices": g.num_vertices, "pairs": len(rows), "mismatches": mismatches}


def run_verify_shortcuts(ctx: RunContext) -> Summary:
    g, eg, p = ctx.graph, ctx.eta_graph, ctx.params

    set_rows = []
    for k, s in enumerate(eg.sets):
        members = list(s.members)
        base = g.distances_from(members)[:, members].max()
        contracted = eg.distances_from(members)[:, members].max()
        set_rows.append(
            [
                s.level,
                k,
                Fraction(s.height, p.D),
                "".join(map(str, s.prefix)),
                g.to_fraction(base),
                eg.to_fraction(contracted),
                eg.eta[s.level - 1] * p.delta(s.level),
            ]
        )
    ctx.writer.write_csv(
        "shortcut_sets.csv",
        ["level", "set", "height", "prefix", "base_diameter", "eta_diameter", "chord_weight"],
        set_rows,
    )

    constants = []
    defects = shortcuts.member_distance_defects(g, eg.families)
    constants.append(["member_defects", len(defects), 0, ctx.check("member distances", not defects)])
    low, high = shortcuts.chord_diameter_bounds(eg) if eg.sets else (Fraction(1), Fraction(1))
    constants.append(["chord_diameter_low", low, Fraction(1, 3), ctx.check("chord diameter low", low >= Fraction(1, 3))])
    constants.append(["chord_diameter_high", high, Fraction(1), ctx.check("chord diameter high", high <= 1)])
    base_sep = shortcuts.set_separation(g, eg.sets, p)
    eta_sep = shortcuts.set_separation(eg, eg.sets, p)
    base_ok = base_sep is None or base_sep >= Fraction(1, 2)
    eta_ok = eta_sep is None or eta_sep >= Fraction(1, 6)
    constants.append(["base_separation", base_sep, Fraction(1, 2), ctx.check("base separation", base_ok)])
    constants.append(["eta_separation", eta_sep, Fraction(1, 6), ctx.check("eta separation", eta_ok)])
    for family in eg.families:
        radius = shortcuts.net_radius(g, family)
        bound = Fraction(3, 2) * p.delta(family.level)
        constants.append([f"net_radius_{family.level}", radius, bound, ctx.check(f"net radius {family.level}", radius <= bound)])

    samples = shortcuts.single_jump_sweep(eg, ctx.rng, ctx.options.samples)
    jump_rows = []
    worst = Fraction(0)
    for sample in samples:
        ratio = sample.best_cost / sample.contracted
        worst = max(worst, ratio)
        jump_rows.append(
            [sample.x, sample.y, sample.base, sample.contracted, sample.jump.cost if sample.jump else None, ratio]
        )
    ctx.writer.write_csv("single_jumps.csv", ["x", "y", "dist", "dist_eta", "jump_cost", "ratio"], jump_rows)
    constants.append(["single_jump_ratio", worst, 3, ctx.check("single jump", worst <= 3)])

    bound = 1 / float(min(eg.eta))
    measured = shortcuts.distortion(eg)
    ok = measured <= bound * (1 + settings.FLOAT_SLACK)
    constants.append(["distortion", measured, bound, ctx.check("distortion", ok)])
    ctx.writer.write_csv("constants.csv", ["name", "value", "bound", "passed"], constants)
    return {"sets": len(eg.sets), "contracted_pairs": len(samples), "single_jump_ratio": worst, "distortion": measured}


def run_schedule(ctx: RunContext) -> Summary:
    alpha = np.asarray(ctx.options.alpha.resolve())
    report = schedules.schedule_blocks(alpha, ctx.options.p, ctx.options.sigma)
    rows = [
        [m, int(block[0]), int(block[-1]), len(block), total, power]
        for m, (block, total, power) in enumerate(zip(report.blocks, report.block_sums, report.power_sums), start=1)
    ]
    ctx.writer.write_csv("blocks.csv", ["block", "first", "last", "count", "alpha_sum", "power_sum"], rows)
    ctx.writer.write_csv("targets.csv", ["group", "count", "size"], report.targets)
    return {
        "blocks": len(report.blocks),
        "total_sum": report.total_sum,
        "total_power": report.total_power,
        "subsequence_power": report.subsequence_power,
        "tail_infimum": report.tail_infimum,
        "diverging": report.diverging(alpha),
    }


def run_bad_maps(ctx: RunContext) -> Summary:
    g, eg = ctx.graph, ctx.eta_graph
    levels = ctx.levels(1, ctx.params.n)
    f = maps.bad_map_r2(g, levels, ctx.eta)
    ctx.writer.write_csv("map.csv", maps.map_header(f), maps.map_rows(f))

    report = maps.oscillation_report(f, eg, ctx.options.eps, levels)
    ctx.writer.write_csv(
        "oscillation.csv",
        ["level", "set", "height", "diam_f", "diam_eta", "ratio"],
        ([e.level, e.set_index, e.height, e.diam_f, e.diam_eta, e.ratio] for e in report.entries),
    )
    ctx.writer.write_csv(
        "bad_density.csv",
        ["eps", "level", "bad_sets", "density"],
        (
            [e, level, len(hits), report.bad_density[e]]
            for e in ctx.options.eps
            for level, hits in sorted(report.classified[e].items())
        ),
    )
    summary: Summary = {
        "lip": maps.lip(f),
        "lip_eta": maps.lip_eta(f, eg),
        "eta_square_sum": float(sum(ctx.eta[i - 1] ** 2 for i in levels)),
    }

    if ctx.options.blocks:
        blocked = maps.bad_map_blocked_lq(g, ctx.options.blocks, ctx.eta, ctx.options.q)
        ctx.writer.write_csv(
            "blocks.csv",
            ["block", "levels", "lip"],
            (
                [m, " ".join(map(str, sorted(block))), value]
                for m, (block, value) in enumerate(zip(ctx.options.blocks, blocked.block_lips()), start=1)
            ),
        )
        summary["blocked_lip"] = maps.lip(blocked)
        summary["blocked_lip_eta"] = maps.lip_eta(blocked, eg)
    return summary


def run_cascade(ctx: RunContext) -> Summary:
    f = maps.random_lipschitz_map(ctx.graph, ctx.rng, ctx.options.anchors)
    result = energy.cascade(f, ctx.energy_config(), ctx.options.symmetrize)
    rows = energy.cascade_rows(result)
    ctx.writer.write_csv("cascade.csv", ["level", "cube", "diff_energy", "cumulative", "bound", "lip"], rows)
    table = energy.telescoping_table(result)
    ctx.writer.write_csv(
        "telescoping.csv",
        ["cube_level", "start_level", "cube", "cumulative", "bound"],
        ([r.cube_level, r.start_level, r.cube, r.cumulative, r.bound] for r in table),
    )
    slack = settings.FLOAT_SLACK
    over = [r for r in table if r.cumulative > r.bound * (1 + slack) + slack]
    ctx.check("telescoping bound", not over, f"{len(over)} rows above the bound")
    return {
        "lip": maps.lip(f),
        "total_diff_energy": result.total_diff_energy(),
        "monotonicity_defect": energy.monotonicity_defect(result),
        "rows_over_bound": len(over),
    }


def run_collapse(ctx: RunContext) -> Summary:
    g, eg = ctx.graph, ctx.eta_graph
    rows = []
    worst = 0.0
    for sample in range(ctx.options.samples):
        f = maps.random_lipschitz_map(g, ctx.rng, ctx.options.anchors)
        for level in range(g.params.n):
            for cube in cubes(g, level):
                result = energy.collapse_sum(f, cube, eg.sets)
                worst = max(worst, result.ratio)
                rows.append([sample, level, g.cube_label(cube), result.sets, result.total, result.ratio])
    ctx.writer.write_csv("collapse.csv", ["sample", "level", "cube", "sets", "sum", "ratio"], rows)
    return {"samples": ctx.options.samples, "s": g.params.s, "max_ratio": worst}


def run_diamond(ctx: RunContext) -> Summary:
    p = ctx.params
    d = diamond.build_diamond(p.M, p.N)
    ctx.writer.write_csv("edges.csv", ["t_from", "word_from", "t_to", "word_to"], diamond.edge_list_rows(d))

    profile = []
    for idx in range(d.P + 1):
        t = Fraction(idx, d.P)
        for l in range(d.n + 1):
            x, y = diamond.xy_profile(p.N, t, l)
            profile.append([t, l, x, y])
    ctx.writer.write_csv("profile.csv", ["t", "l", "x", "y"], profile)

    p_G = diamond.compute_p_G(p.N)
    parity = diamond.midpoint_parity_failures(p.N)
    digits = diamond.digit_criterion_failures(p.N)
    ctx.check("p_G", p_G == 1, f"p_G = {p_G}")
    ctx.check("midpoint parity", not parity, f"{len(parity)} failures")
    ctx.check("digit criterion", not digits, f"{len(digits)} failures")

    level_sets = [ctx.options.levels] if ctx.options.levels else [[i] for i in range(1, p.n + 1)]
    families = shortcuts.enumerate_shortcuts(ctx.graph)
    rows = []
    for levels in level_sets:
        restriction = diamond.restrict(d, levels)
        projection = diamond.project_laakso(ctx.graph, levels, families)
        inclusion = all(diamond.jump_height_inclusion(p.N, levels))
        dichotomy = projection.dichotomy_holds(p)
        label = " ".join(map(str, restriction.levels))
        ctx.check(f"projection I={label}", projection.lipschitz and dichotomy and inclusion)
        rows.append(
            [
                label,
                " ".join(map(str, restriction.target.N)),
                restriction.target.graph.number_of_nodes(),
                projection.non_edges,
                inclusion,
                dichotomy,
            ]
        )
    ctx.writer.write_csv(
        "restrictions.csv", ["levels", "N_I", "nodes", "non_edges", "jump_inclusion", "dichotomy"], rows
    )
    return {"p_G": p_G, "nodes": d.graph.number_of_nodes(), "restrictions": len(rows)}


def run_liplight(ctx: RunContext) -> Summary:
    eg, p = ctx.eta_graph, ctx.params
    levels = ctx.levels(2, p.n + 1)
    intervals = liplight.canonical_intervals(p, levels, ctx.options.intervals_per_level, ctx.rng)
    rows = []
    for k, m in intervals:
        partition = liplight.class_partition(eg, k, m)
        contained: Optional[bool] = None
        if partition.separation is not None and partition.separation > 0:
            vertices = np.concatenate(partition.vertex_sets)
            components = liplight.r_components(eg, vertices, partition.separation / 2)
            contained = liplight.component_containment(partition, components)
            ctx.check(f"components in classes k={k} m={m}", contained)
        rows.append(
            [
                k,
                m,
                partition.interval[0],
                partition.interval[1],
                " ".join(map(str, sorted(partition.wormhole_levels))),
                " ".join(map(str, sorted(partition.jump_levels))),
                len(partition.classes),
                partition.separation,
                partition.max_diameter,
                contained,
            ]
        )
    ctx.writer.write_csv(
        "partitions.csv",
        ["level", "m", "low", "high", "wormhole_levels", "jump_levels", "classes", "separation", "max_diameter", "contained"],
        rows,
    )
    light = liplight.light_constant(eg, intervals, exponent_step=ctx.options.r_grid_exponent)
    ctx.writer.write_csv(
        "light.csv",
        ["level", "m", "r", "max_diameter", "ratio"],
        ([r.level, r.m, r.r, r.max_diameter, r.ratio] for r in light.rows),
    )
    return {
        "intervals": len(intervals),
        "light_constant": light.constant,
        "union_constant": liplight.union_components_bound(light.constant, light.constant),
    }


def run_density(ctx: RunContext) -> Summary:
    eg, n = ctx.eta_graph, ctx.params.n
    schedules_by_name = {"alpha": ctx.options.alpha}
    if ctx.options.compare_alpha is not None:
        schedules_by_name["compare"] = ctx.options.compare_alpha
    rows = []
    summary: Summary = {}
    for name, config in schedules_by_name.items():
        alpha = config.resolve(n)
        profile = shortcuts.density_profile(eg, alpha, ctx.options.metric)
        for level, (a, own, tail) in enumerate(zip(profile.alpha, profile.per_level, profile.cumulative), start=1):
            rows.append([name, level, a, own, tail])
        summary[f"{name}_first"] = profile.cumulative[0]
        summary[f"{name}_last"] = profile.cumulative[-1]
    ctx.writer.write_csv("density.csv", ["schedule", "level", "alpha", "per_level", "cumulative"], rows)
    return summary


def run_verify_cubes(ctx: RunContext) -> Summary:
    g = ctx.graph
    rows = []
    for entry in cube_shape_report(g):
        level = entry["level"]
        mass = np.bincount(g.cube_of_edges(level), g.edge_weight, minlength=g.cube_count(level))
        expected = float(g.cube_measure(Cube(level, 0, (1,) * level)))
        spread = float(np.abs(mass - expected).max())
        ctx.check(f"cube masses level {level}", spread <= settings.FLOAT_SLACK, f"spread {spread:.3g}")
        rows.append(
            [
                level,
                entry["cubes"],
                entry["measure"],
                entry["theta_power"],
                entry["ratio"],
                entry["approximate"],
                float(mass.min()),
                float(mass.max()),
            ]
        )
    ctx.writer.write_csv(
        "cubes.csv", ["level", "cubes", "measure", "theta_power", "ratio", "approximate", "min_mass", "max_mass"], rows
    )
    return {"levels": len(rows), "theta": g.params.theta, "s": g.params.s}


def run_distortion(ctx: RunContext) -> Summary:
    rows = []
    worst = 0.0
    for step in range(4):
        factor = 2.0**-step
        eta = tuple(schedules.dyadic(float(x) * factor) for x in ctx.eta)
        eg = shortcuts.EtaGraph(ctx.graph, eta, ctx.eta_graph.families)
        measured = shortcuts.distortion(eg)
        bound = 1 / float(min(eta))
        ctx.check(f"distortion factor {factor}", measured <= bound * (1 + settings.FLOAT_SLACK))
        worst = max(worst, measured)
        rows.append([factor, min(eta), measured, bound])
    ctx.writer.write_csv("distortion.csv", ["factor", "min_eta", "distortion", "bound"], rows)
    return {"max_distortion": worst}


def run_energy_probe(ctx: RunContext) -> Summary:
    g = ctx.graph
    lam = ctx.options.lam if ctx.options.lam is not None else settings.CAPACITY_LAMBDA
    f = maps.random_lipschitz_map(g, ctx.rng, ctx.options.anchors)
    rows = []
    for _ in range(ctx.options.samples):
        x, y = (int(v) for v in ctx.rng.choice(g.num_vertices, size=2, replace=False))
        distance = g.to_fraction(g.distances_from(x)[y])
        rows.append(
            [
                x,
                y,
                distance,
                energy.capacity_ratio(f, x, y, ctx.options.p, lam),
                energy.capacity_ratio(f, x, y, ctx.options.p, 2 * lam),
            ]
        )
    ctx.writer.write_csv("capacity.csv", ["x", "y", "dist", "ratio_lambda", "ratio_2lambda"], rows)
    return {"p": ctx.options.p, "lambda": lam, "max_ratio": max(float(r[3]) for r in rows)}


EXPERIMENTS: Dict[str, Callable[[RunContext], Summary]] = {
    "verify-metric": run_verify_metric,
    "verify-shortcuts": run_verify_shortcuts,
    "schedule": run_schedule,
    "bad-maps": run_bad_maps,
    "cascade": run_cascade,
    "collapse": run_collapse,
    "diamond": run_diamond,
    "liplight": run_liplight,
    "density": run_density,
    "verify-cubes": run_verify_cubes,
    "distortion": run_distortion,
    "energy-probe": run_energy_probe,
}


# ── Entry points ────────────────────────────────────────────────────────────


def load_config(path: Path) -> ExperimentConfig:
    """Read a JSON experiment file; schema errors propagate as pydantic ValidationError."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}", details={"path": str(path)}) from e
    try:
        json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config {path} is not valid JSON: {e}", details={"path": str(path)}) from e
    return ExperimentConfig.model_validate_json(text)


def resolve_output(config: ExperimentConfig, output: Optional[Path] = None) -> Path:
    if output is not None:
        return Path(output)
    if config.output:
        return settings.output_dir(config.output)
    suffix = f"-{config.seed}" if config.seed is not None else ""
    return settings.output_dir(f"{config.experiment}{suffix}")


def run(config: ExperimentConfig, output: Optional[Path] = None) -> Path:
    """Run one experiment; the manifest is written even when a check fails."""
    directory = resolve_output(config, output)
    writer = ArtifactWriter(directory)
    rng = make_rng(config.seed) if config.seed is not None else None
    ctx = RunContext(config, writer, rng)

    logger.info(f"Running {config.experiment} into {directory}")
    started = time.perf_counter()
    summary: Summary = {}
    try:
        summary = EXPERIMENTS[config.experiment](ctx)
    except Exception as e:
        summary = {"status": "error", "error": e.code if isinstance(e, LabError) else type(e).__name__}
        raise
    finally:
        if ctx.failures:
            summary["status"] = "failed"
            summary["failures"] = "; ".join(ctx.failures)
        summary.setdefault("status", "ok")
        writer.write_manifest(
            config.experiment,
            config.model_dump(mode="json"),
            config.seed,
            time.perf_counter() - started,
            summary,
        )

    if ctx.failures:
        raise InvariantViolation(config.experiment, f"{len(ctx.failures)} check(s) failed", {"failures": ctx.failures})
    logger.info(f"Finished {config.experiment}: {summary}")
    return directory


def run_file(path: Path, output: Optional[Path] = None) -> Path:
    try:
        config = load_config(path)
    except ValidationError:
        logger.error(f"Config {path} failed schema validation")
        raise
    return run(config, output)

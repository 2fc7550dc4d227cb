"""Command-line entry point, experiment runners and report emission.

Every command builds a deterministic report: the parsed configuration, the
results, a table of named checks and a sha256 content hash over all three.
Exact rationals are written as ``{"num": ..., "den": ...}``.  A failing
check raises :class:`AssertionFailure` after the report is written, so the
process exits nonzero with the invariant named.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import importlib
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from typing import Callable

import numpy as np

SCHEMA_VERSION = "gasketlab-report/1"
COMMANDS = ("gasket", "witness", "collapse", "fold", "flap", "phi", "all")
FORMATS = ("json", "csv", "svg")
ACTIONS = {
    "gasket": ("enumerate", "classify"),
    "witness": ("build", "verify", "blocks", "lines", "measure"),
    "collapse": ("build",),
    "fold": ("build",),
    "flap": ("stages", "sweep"),
    "phi": ("build", "eval"),
    "all": ("run",),
}
# every operation the harness must exercise under `all`
OPERATIONS = {
    "triq": ("norm2", "affine_distortion", "split_convex"),
    "gasket": ("enumerate_w", "classify", "nested_sequence", "dyadic_edge_points", "adjacency"),
    "witness": (
        "radial_block",
        "staircase_block",
        "halfplane_block",
        "build_witness",
        "verify_basic_lemma",
        "line_energy_check",
        "positive_measure_witness",
    ),
    "collapse": ("canonical_tripod", "split_u", "build_collapse", "tripod_family_checks", "oscillation_decay"),
    "fold": ("split_triangle", "subdivision_params", "fold_quadrilateral", "assemble_fold", "distortion_bound"),
    "flapplane": (
        "build_stage",
        "project",
        "distance",
        "ball_measure",
        "height_schedule",
        "llc_probe",
        "gh_distortion",
        "regularity_sweep",
    ),
    "phi": ("build_phi", "injectivity_scan", "measure_blowup"),
    "harness": ("run", "render"),
}

log = logging.getLogger("gasketlab")


class ConfigError(ValueError):
    """Invalid command line or environment."""


class AssertionFailure(RuntimeError):
    """A checked invariant failed.

    Attributes:
        invariant: name of the failing check.
    """

    def __init__(self, invariant: str, detail: str = ""):
        super().__init__(f"invariant failed: {invariant}" + (f" ({detail})" if detail else ""))
        self.invariant = invariant


# -- configuration ----------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one run; together with the seed they fix every output."""

    command: str
    action: str
    level: int = 3
    epsilon: Fraction = Fraction(1, 10)
    seed: int = 0
    resolution: int = 32
    samples: int | None = None
    scale: Fraction = Fraction(1)
    point: tuple | None = None
    input: str | None = None
    out: str | None = None
    format: str = "json"

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("out")
        return jsonable(d)


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a rational number: {text!r}") from exc


def _point(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(f"point must be 'x,y' in lattice coordinates, got {text!r}")
    return tuple(_fraction(p.strip()) for p in parts)


def threads() -> int:
    """Worker cap from GASKETLAB_THREADS (default 1)."""
    raw = os.environ.get("GASKETLAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"GASKETLAB_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"GASKETLAB_THREADS must be a positive integer, got {raw!r}")
    return n


def parse_args(argv: list | None = None) -> ExperimentConfig:
    """Parse the command line into a validated configuration.

    Raises:
        ConfigError: on unknown commands, actions or invalid values.
    """
    p = argparse.ArgumentParser(prog="gasketlab", description="Finite-stage gasket experiments.")
    p.add_argument("command", help="one of " + ", ".join(COMMANDS))
    p.add_argument("action", nargs="?", help="command action (default: the first listed)")
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--epsilon", default="1/10")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--scale", default="1", help="flap height scale for phi (0 < scale <= 1)")
    p.add_argument("--point", default=None, help="lattice point 'x,y' for classify and eval")
    p.add_argument("--input", default=None, help="earlier report to verify")
    p.add_argument("--out", default=None, help="output file (a directory for `all`)")
    p.add_argument("--format", default="json")
    try:
        ns = p.parse_args(argv)
    except SystemExit as exc:
        raise ConfigError("invalid arguments") from exc
    if ns.command not in COMMANDS:
        raise ConfigError(f"unknown command {ns.command!r}; expected one of {', '.join(COMMANDS)}")
    action = ns.action or ACTIONS[ns.command][0]
    if action not in ACTIONS[ns.command]:
        raise ConfigError(f"unknown action {action!r} for {ns.command}; expected one of {', '.join(ACTIONS[ns.command])}")
    if ns.format not in FORMATS:
        raise ConfigError(f"unknown format {ns.format!r}")
    if not 1 <= ns.level <= 12:
        raise ConfigError("--level must lie in 1..12")
    if ns.resolution < 2:
        raise ConfigError("--resolution must be at least 2")
    if ns.samples is not None and ns.samples < 1:
        raise ConfigError("--samples must be positive")
    eps = _fraction(ns.epsilon)
    if eps <= 0:
        raise ConfigError("--epsilon must be positive")
    scale = _fraction(ns.scale)
    if not 0 < scale <= 1:
        raise ConfigError("--scale must lie in (0, 1]")
    point = _point(ns.point) if ns.point else None
    if action in ("classify", "eval") and point is None:
        raise ConfigError(f"{ns.command} {action} needs --point")
    return ExperimentConfig(
        ns.command, action, ns.level, eps, ns.seed, ns.resolution, ns.samples, scale, point, ns.input, ns.out, ns.format
    )


# -- serialization ----------------------------------------------------------


def jsonable(x):
    """Convert results to JSON values; rationals become {num, den}."""
    if isinstance(x, bool) or x is None or isinstance(x, (int, str)):
        return x
    if isinstance(x, Fraction):
        return {"num": x.numerator, "den": x.denominator}
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, set, frozenset)):
        items = sorted(x, key=repr) if isinstance(x, (set, frozenset)) else x
        return [jsonable(v) for v in items]
    if hasattr(x, "to_json"):
        return jsonable(x.to_json())
    raise TypeError(f"cannot serialize {type(x).__name__}")


def canonical_json(obj) -> str:
    """Compact, key-sorted JSON used for hashing."""
    return json.dumps(jsonable(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def make_report(config: ExperimentConfig, results: dict, checks: dict) -> dict:
    """Report with schema version and a sha256 hash of config, results and checks."""
    body = {
        "schema": SCHEMA_VERSION,
        "command": f"{config.command} {config.action}",
        "config": config.to_json(),
        "results": jsonable(results),
        "checks": {k: bool(v) for k, v in checks.items()},
    }
    body["contentHash"] = "sha256:" + hashlib.sha256(canonical_json(body).encode()).hexdigest()
    return body


def verify_hash(report: dict) -> bool:
    body = {k: v for k, v in report.items() if k != "contentHash"}
    return report.get("contentHash") == "sha256:" + hashlib.sha256(canonical_json(body).encode()).hexdigest()


def rows_to_csv(header: list, rows: list) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# -- operation tracking -----------------------------------------------------


class Tracker:
    """Resolves ``module.op`` names to functions and records their use."""

    def __init__(self):
        self.used = set()

    def __call__(self, name: str) -> Callable:
        module, op = name.split(".")
        mod = importlib.import_module(f"gasketlab.{module}")
        self.used.add(name)
        return getattr(mod, op)

    def mark(self, name: str) -> None:
        self.used.add(name)

    def missing(self) -> list:
        return [f"{m}.{op}" for m, ops in OPERATIONS.items() for op in ops if f"{m}.{op}" not in self.used]


@dataclasses.dataclass
class Outcome:
    """What a runner produces: results, checks and optional renderings."""

    results: dict
    checks: dict
    csv: str | None = None
    svg: str | None = None
    used: set = dataclasses.field(default_factory=set)


# -- rendering --------------------------------------------------------------


def _svg_xy(p, size: int, pad: int = 10) -> str:
    from .triq import to_euclidean

    x, y = to_euclidean(p)
    s = size - 2 * pad
    return f"{pad + x * s:.4f},{pad + (math.sqrt(3) / 2 - y) * s:.4f}"


def render_gasket(level: int, size: int = 600) -> str:
    """Root triangle with all removed w-triangles up to the level."""
    from .gasket import ROOT, enumerate_w

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{int(size * 0.9)}">']
    parts.append(f'<polygon points="{" ".join(_svg_xy(p, size) for p in ROOT)}" fill="#223" stroke="none"/>')
    for t in enumerate_w(level):
        parts.append(f'<polygon points="{" ".join(_svg_xy(p, size) for p in t.vertices)}" fill="#fff" stroke="none"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def render_witness(wit, resolution: int = 64, size: int = 600) -> str:
    """Heatmap of the stage witness on a grid over the root triangle's bounding box."""
    from .witness import WitnessField

    fld = WitnessField(wit)
    h = math.sqrt(3) / 2
    xs = (np.arange(resolution) + 0.5) / resolution
    ys = (np.arange(resolution) + 0.5) / resolution * h
    gx, gy = np.meshgrid(xs, ys)
    vals = np.clip(fld(gx.ravel(), gy.ravel()).reshape(gx.shape), 0.0, 1.0)
    cell = size / resolution
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{int(size * h)}">']
    for j in range(resolution):
        for i in range(resolution):
            g = int(round(255 * (1 - vals[j, i])))
            parts.append(
                f'<rect x="{i * cell:.3f}" y="{(size * h) - (j + 1) * cell * h:.3f}" width="{cell:.3f}" '
                f'height="{cell * h:.3f}" fill="rgb(255,{g},{g})"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts)


def render_fold(fold, size: int = 640) -> str:
    from .fold import render_svg

    return render_svg(fold, size)


def render(kind: str, obj, **kw) -> str:
    """Deterministic SVG of a stage or report.

    Args:
        kind: "gasket" (obj = level), "witness", "collapse", "fold" or "phi".
    """
    if kind == "gasket":
        return render_gasket(obj, **kw)
    if kind == "witness":
        return render_witness(obj, **kw)
    if kind == "collapse":
        from .collapse import render_svg

        return render_svg(obj, **kw)
    if kind == "fold":
        return render_fold(obj, **kw)
    if kind == "phi":
        from .phi import render_svg

        return render_svg(obj, **kw)
    raise ConfigError(f"nothing to render for {kind!r}")


# -- runners ----------------------------------------------------------------


def run_gasket(cfg: ExperimentConfig, t: Tracker) -> Outcome:
    from .gasket import count_w, covering_area_units

    tris = t("gasket.enumerate_w")(cfg.level)
    counts = {n: sum(1 for x in tris if x.level == n) for n in range(1, cfg.level + 1)}
    checks = {
        "count_3^(n-1)": all(counts[n] == 3 ** (n - 1) == count_w(n) for n in counts),
        "covering_area_(3/4)^n": all(covering_area_units(n) == Fraction(3, 4) ** n for n in counts),
    }
    results = {
        "triangles": [x.to_json() for x in tris],
        "counts": counts,
        "total": len(tris),
        "coveringAreaUnits": {n: covering_area_units(n) for n in counts},
    }
    if cfg.action == "classify" or cfg.command == "all":
        p = cfg.point or (Fraction(1, 4), Fraction(0))
        cls = t("gasket.classify")(p, cfg.level)
        results["classify"] = {"point": p, "class": type(cls).__name__, "detail": repr(cls)}
    if cfg.command == "all":
        word = (0, 1, 2) * cfg.level
        data = t("gasket.nested_sequence")(word, min(cfg.level, 4))
        results["nestedSequence"] = repr(data)
        w = tris[-1].address
        anchors = [t("gasket.dyadic_edge_points")(w, he, 1).xy for he in range(6)]
        pairs = sum(1 for a in tris[:13] for b in tris[:13] if t("gasket.adjacency")(a.address, b.address))
        results["anchors"] = anchors
        results["adjacentPairsLevel3"] = pairs
        checks["anchors_are_midpoints"] = len(set(anchors)) == 3
    csv_text = rows_to_csv(
        ["address", "level", "x0", "y0", "x1", "y1", "x2", "y2"],
        [[str(x.address), x.level] + [str(c) for p in x.vertices for c in p] for x in tris],
    )
    return Outcome(results, checks, csv=csv_text, svg=render("gasket", cfg.level))


def _witness_checks(wit, t: Tracker, samples: int, seed: int) -> tuple:
    from .witness import check_condition_star

    star = check_condition_star(wit)
    lemma = t("witness.verify_basic_lemma")(wit, samples=samples, seed=seed)
    results = {
        "gradientNorm": wit.gradient_norm,
        "totalEnergy": wit.total_energy,
        "energyBound": wit.total_energy_bound,
        "starViolations": len(star.violations),
        "sequences": len(lemma.checks),
        "flagged": [repr(f) for f in lemma.flagged],
        "empiricalMax": {str(c): {str(n): v for n, v in d.items()} for c, d in lemma.empirical_max.items()},
    }
    checks = {
        "off_gasket_energy_below_epsilon": wit.gradient_norm < float(wit.epsilon),
        "condition_star_exact": bool(star.ok),
        "basic_lemma_recurrences_dominate": bool(lemma.ok),
    }
    return results, checks


def run_witness(cfg: ExperimentConfig, t: Tracker) -> Outcome:
    from .witness import energy_report_csv

    action = cfg.action
    if cfg.command == "all":
        out = Outcome({}, {})
        for sub in ("build", "blocks", "lines", "measure"):
            o = run_witness(dataclasses.replace(cfg, action=sub, command="witness"), t)
            out.results[sub] = o.results
            out.checks.update({f"{sub}.{k}": v for k, v in o.checks.items()})
            out.svg = out.svg or o.svg
            out.csv = out.csv or o.csv
        return out
    if action in ("build", "verify"):
        results, checks = {}, {}
        if action == "verify" and cfg.input:
            with open(cfg.input) as fh:
                prior = json.load(fh)
            checks["input_hash_matches"] = verify_hash(prior)
            pc = prior["config"]
            eps = Fraction(pc["epsilon"]["num"], pc["epsilon"]["den"])
            level = pc["level"]
            results["input"] = prior["contentHash"]
        else:
            eps, level = cfg.epsilon, cfg.level
        wit = t("witness.build_witness")(level, eps)
        if action == "verify" and cfg.input:
            checks["rebuild_matches_input"] = jsonable(wit.to_json()) == prior["results"]["witness"]
        r, c = _witness_checks(wit, t, cfg.samples or 50, cfg.seed)
        results.update(r)
        checks.update(c)
        if action == "build":
            results["witness"] = wit.to_json()
        return Outcome(results, checks, csv=energy_report_csv(wit), svg=render("witness", wit, resolution=cfg.resolution))
    if action == "blocks":
        radial = {}
        for k in (1, 2, 4):
            b = t("witness.radial_block")(math.e**k, 1.0)
            radial[f"e^{k}"] = {"analytic": b.energy, "quadrature": b.quadrature_energy()}
        stair = {}
        for n in (4, 8, 16, 32, 64):
            stair[n] = t("witness.staircase_block")(n).quadrature_energy() * n
        xs = [4.0**-k for k in range(1, 40)]
        hp = t("witness.halfplane_block")(xs, [-x for x in xs], 4)
        vals = list(stair.values())
        checks = {
            "radial_within_5pct": all(abs(v["quadrature"] / v["analytic"] - 1) < 0.05 for v in radial.values()),
            "staircase_energy_times_N_within_factor_2": max(vals) <= 2 * min(vals),
            "halfplane_increments_at_most_1/N": max(hp.increments()) <= 0.25 + 1e-12,
        }
        return Outcome({"radial": radial, "staircaseEnergyTimesN": stair, "halfplaneEnergy": hp.quadrature_energy()}, checks)
    if action == "lines":
        wit = t("witness.build_witness")(cfg.level, cfg.epsilon)
        n = cfg.samples or (100 if cfg.command == "witness" else 10)
        rep = t("witness.line_energy_check")(wit, n_lines=n, samples=4001, cover_refine=4)
        results = {
            "minCrossing": rep.min_crossing,
            "offGasketNorm": rep.off_gasket_norm,
            "fubiniIntegral": rep.fubini_integral,
            "threshold": rep.threshold,
        }
        checks = {"line_crossing_at_least_1_within_2pct": rep.min_crossing >= 0.98, "energy_chain": rep.chain_ok}
        rows = [[o, c] for o, c in zip(rep.offsets, rep.crossings)]
        return Outcome(results, checks, csv=rows_to_csv(["offset", "crossing"], rows))
    # measure
    terms = cfg.samples or 1000
    radii = [0.4 * 2.01**-i for i in range(terms)]
    rep = t("witness.positive_measure_witness")(radii, 2, 2)
    full = rep.full_partial_sums[-1]
    tail = rep.cauchy_tail()
    checks = {
        "omega_cauchy_tail_below_1e-3": tail < 1e-3,
        "full_plane_sum_exceeds_ln_terms": full >= math.log(terms) * 0.9,
    }
    return Outcome({"terms": terms, "cauchyTail": tail, "fullPartialSum": full, "omegaSum": rep.omega_partial_sums[-1]}, checks)


def run_collapse(cfg: ExperimentConfig, t: Tracker) -> Outcome:
    from .collapse import UQuad, area_by_level, export_json
    from .triq import area_units, sub

    stage = t("collapse.build_collapse")(cfg.level)
    areas = area_by_level(stage)
    fam = t("collapse.tripod_family_checks")(stage)
    decay = t("collapse.oscillation_decay")(stage)
    checks = {
        "uquad_area_equals_root": all(a == 1 for a in areas.values()),
        "property_g": fam.property_g,
        "degree_at_most_6": fam.max_degree <= 6,
    }
    # one split re-derived by planar overlay
    root_tri = t("collapse.canonical_tripod")((0, 0), (1, 0), (0, 1))
    square = ((0, 0), (1, 0), (1, 1), (0, 1))
    tri, kids = t("collapse.split_u")(UQuad(square, 1), (Fraction(1), Fraction(1, 2)), (Fraction(1, 2), Fraction(1)))
    cells = t("triq.split_convex")(square, tri.segments)
    checks["split_matches_overlay"] = {frozenset(c) for c in cells} == {frozenset(k.vertices) for k in kids}
    norm2 = t("triq.norm2")
    checks["root_tripod_equilateral"] = len({norm2(sub(c, root_tri.center)) for c in root_tri.tips}) == 1
    checks["split_conserves_area"] = sum(k.area for k in kids) == area_units(square)
    results = {
        "tripods": len(stage.tripods),
        "areaByLevel": areas,
        "family": {"pairs": fam.pairs_checked, "maxDegree": fam.max_degree, "contacts": fam.contacts},
        "oscillationDecay": decay,
        "stage": json.loads(export_json(stage)) if cfg.level <= 4 else None,
    }
    return Outcome(results, checks, svg=render("collapse", stage))


def run_fold(cfg: ExperimentConfig, t: Tracker) -> Outcome:
    from .collapse import build_collapse
    from .fold import ROOT_W, gasket_modulus_certificates, gluing_report, tiling_report, trapezoid_distortions

    kites = t("fold.split_triangle")(ROOT_W)
    frag = t("fold.fold_quadrilateral")(ROOT_W, 0, 1, Fraction(1, 6))
    traps, bounds = {}, {}
    folds = {}
    for d in (6, 12, 24):
        h = Fraction(1, d)
        t("fold.subdivision_params")(1, h)
        folds[d] = t("fold.assemble_fold")(ROOT_W, (1, 1, 1), h)
        traps[d] = sorted(trapezoid_distortions(folds[d]))
        bounds[d] = t("fold.distortion_bound")(folds[d])
    t("triq.affine_distortion")(folds[6].pieces[0].affine)
    level = min(cfg.level, 6)
    ok, count = gasket_modulus_certificates(build_collapse(level), depth=8)
    m = bounds[6]
    checks = {
        "trapezoid_distortion_identical_across_h": traps[6] == traps[12] == traps[24],
        "measured_M_finite": math.isfinite(float(m)),
        "tiling": tiling_report(folds[6]).ok,
        "gluing": gluing_report(folds[6]).ok,
        "modulus_certificate_2h<=l/3<=O(W)/3": ok,
    }
    results = {
        "kites": len(kites),
        "fragmentPieces": len(frag),
        "trapezoidDistortionSq": traps[6],
        "M": {d: float(b) for d, b in bounds.items()},
        "modulusLevel": level,
        "modulusPairs": count,
    }
    return Outcome(results, checks, svg=render("fold", folds[6]))


def _flap_family(level: int):
    from .collapse import build_collapse

    return list(build_collapse(min(level, 4)).tripods.values())


def run_flap(cfg: ExperimentConfig, t: Tracker) -> Outcome:
    from .collapse import canonical_tripod
    from .flapplane import MetricStage, plane_point, sample_points, verify_schedule

    family = _flap_family(cfg.level)
    sched = t("flapplane.height_schedule")(family)
    heights = [r.height for r in sched]
    rows = verify_schedule(family, heights)
    checks = {"schedule_verified": all(ok for _, _, ok in rows)}
    results = {"tripods": len(family), "heights": heights}
    rng = np.random.default_rng(cfg.seed)
    actions = ("stages", "sweep") if cfg.command == "all" else (cfg.action,)
    csv_text = None
    if "stages" in actions:
        n_max = min(len(family), 20)
        stage = t("flapplane.build_stage")(family[:n_max], heights[:n_max])
        pairs = cfg.samples or (1000 if cfg.command == "flap" else 100)
        worst_g1 = True
        stage_rows = []
        for n in sorted({1, n_max // 4, n_max // 2, n_max}):
            sn = stage.prefix(n)
            m = MetricStage(sn)
            pts = sample_points(sn, 2 * pairs, rng)
            g1 = g2 = True
            for x, y in zip(pts[::2], pts[1::2]):
                c = m.certificate(x, y)
                g1 &= c.projection <= c.lower + 1e-12 <= c.upper + 2e-12
                if c.excess is not None:
                    g2 &= c.excess <= 6 * sum(max(sn.heights[i]) for i in c.crossed)
            gh = t("flapplane.gh_distortion")(stage, n, min(pairs, 100), seed=cfg.seed + n)
            stage_rows.append((n, g1, g2, gh.max_gap, gh.tail, gh.ok))
            worst_g1 &= g1 and g2 and gh.ok and gh.max_gap <= gh.tail
        x, y = sample_points(stage, 2, rng)
        t("flapplane.project")(stage, x, n_max // 2)
        d = t("flapplane.distance")(stage.prefix(3), plane_point((Fraction(-1, 2), 0)), plane_point((Fraction(3, 2), 0)))
        checks["g1_g2_and_gh_gaps_within_tail"] = worst_g1
        checks["distance_bracket"] = d.lower <= d.upper
        results["stages"] = [dict(zip(("n", "g1", "g2", "maxGap", "tail", "ghOk"), r)) for r in stage_rows]
        results["pairsPerStage"] = pairs
        csv_text = rows_to_csv(["n", "g1", "g2", "max_gap", "tail", "gh_ok"], stage_rows)
    if "sweep" in actions:
        stage = t("flapplane.build_stage")(family[:20], heights[:20])
        balls = cfg.samples or (500 if cfg.command == "flap" else 50)
        rep = t("flapplane.regularity_sweep")(stage, samples=balls, seed=cfg.seed, resolution=cfg.resolution)
        t.mark("flapplane.ball_measure")
        single = t("flapplane.build_stage")([canonical_tripod((0, 0), (1, 0), (0, 1))], [Fraction(1, 10)])
        probe = t("flapplane.llc_probe")(
            single, plane_point((Fraction(-1), 0)), 0.1, plane_point((Fraction(-1), Fraction(1, 2))), plane_point((Fraction(-1, 2), Fraction(-1, 2)))
        )
        checks["ahlfors_upper_bound"] = rep.ok
        checks["llc_single_tripod_c<=48"] = probe.c_achieved <= 48
        results["sweep"] = {"balls": balls, "upperConstant": rep.upper_constant, "lowerConstant": rep.lower_constant, "certified": rep.certified}
        results["llc"] = probe.c_achieved
        csv_text = rep.to_csv() if cfg.action == "sweep" else csv_text
    return Outcome(results, checks, csv=csv_text)


def run_phi(cfg: ExperimentConfig, t: Tracker) -> Outcome:
    from .phi import boundary_compatibility, continuity_certificates

    level = cfg.level if cfg.command == "phi" else min(cfg.level, 4)
    stage = t("phi.build_phi")(level, scale=cfg.scale)
    if cfg.action == "eval":
        return Outcome({"evaluation": stage.evaluate_json(cfg.point)}, {})
    rep = t("phi.injectivity_scan")(stage, cfg.samples or 2000, seed=cfg.seed)
    m = t("phi.measure_blowup")(stage)
    half = t("phi.measure_blowup")(t("phi.build_phi")(level, scale=cfg.scale / 2))
    ok, count = continuity_certificates(stage, depth=6)
    checks = {
        "no_collisions": rep.ok,
        "planar_image_area_equals_root": m.planar_area_units == 1 == m.cone_area_units,
        "flap_area_halves_with_heights": half.flap_area * 2 == m.flap_area,
        "boundary_compatibility": boundary_compatibility(stage, depth=6) > 0,
        "continuity_modulus": ok,
    }
    results = {
        "level": level,
        "exactPoints": rep.exact_points,
        "samples": rep.samples,
        "distinctImages": rep.distinct_images,
        "planarAreaUnits": m.planar_area_units,
        "flapArea": m.flap_area,
        "halvedFlapArea": half.flap_area,
        "totalLengthSq": m.total_length_sq,
        "totalLength": m.total_length,
        "continuityPairs": count,
    }
    return Outcome(results, checks, svg=render("phi", stage))


RUNNERS = {
    "gasket": run_gasket,
    "witness": run_witness,
    "collapse": run_collapse,
    "fold": run_fold,
    "flap": run_flap,
    "phi": run_phi,
}


def _run_one(cfg: ExperimentConfig) -> Outcome:
    t = Tracker()
    start = time.perf_counter()
    out = RUNNERS[cfg.command](cfg, t)
    log.info("%s %s finished in %.2fs", cfg.command, cfg.action, time.perf_counter() - start)
    out.used = t.used
    return out


def run_all(cfg: ExperimentConfig) -> Outcome:
    """Every command's default experiment plus the coverage assertion."""
    subs = [dataclasses.replace(cfg, command=c, action=ACTIONS[c][0], out=None, format="json") for c in RUNNERS]
    n = threads()
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            outs = list(pool.map(_run_all_part, subs))
    else:
        outs = [_run_all_part(s) for s in subs]
    results, checks, used = {}, {}, {"harness.run", "harness.render"}
    for s, o in zip(subs, outs):
        results[s.command] = o.results
        checks.update({f"{s.command}.{k}": v for k, v in o.checks.items()})
        used |= o.used
    t = Tracker()
    t.used = used
    missing = t.missing()
    checks["coverage_every_operation"] = not missing
    results["coverage"] = {"used": sorted(used), "missing": missing}
    return Outcome(results, checks)


def _run_all_part(cfg: ExperimentConfig) -> Outcome:
    # runners see command "all" so they use the reduced sample sizes
    t = Tracker()
    out = RUNNERS[cfg.command](dataclasses.replace(cfg, command="all"), t)
    out.used = t.used
    out.svg = None
    out.csv = None
    return out


# -- entry point ------------------------------------------------------------


def run(cfg: ExperimentConfig) -> tuple[dict, str]:
    """Run one configured command.

    Returns:
        (report, primary artifact text in the requested format).

    Raises:
        ConfigError: if the format is not available for the command.
        AssertionFailure: naming the first failing check (raised by :func:`main`
            after the artifact is written).
    """
    out = run_all(cfg) if cfg.command == "all" else _run_one(cfg)
    report = make_report(cfg, out.results, out.checks)
    if cfg.format == "json":
        text = json.dumps(report, sort_keys=True, indent=1) + "\n"
    elif cfg.format == "csv":
        if out.csv is None:
            raise ConfigError(f"{cfg.command} {cfg.action} has no CSV output")
        text = out.csv
    else:
        if out.svg is None:
            raise ConfigError(f"{cfg.command} {cfg.action} has no SVG output")
        text = out.svg
    return report, text


def first_failure(report: dict) -> str | None:
    return next((k for k, v in sorted(report["checks"].items()) if not v), None)


def main(argv: list | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_args(argv)
        threads()
        report, text = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if cfg.out:
        if cfg.command == "all":
            os.makedirs(cfg.out, exist_ok=True)
            path = os.path.join(cfg.out, f"all.{cfg.format}")
        else:
            path = cfg.out
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    bad = first_failure(report)
    if bad:
        err = AssertionFailure(bad)
        print(str(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

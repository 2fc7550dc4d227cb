"""Collapsing map: w-triangles onto canonical tripods, v-triangles onto u-quadrilaterals.

Image coordinates live in the same lattice frame as the gasket, so every
tripod tip, center and u-quadrilateral corner is an exact rational point.
The boundary map of a w-triangle sends each half-edge onto a tripod edge
through the fold anchor schedule (see :func:`gasketlab.fold.half_edge_fraction`).
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .fold import half_edge_fraction
from .gasket import (
    LEVEL0,
    ROOT,
    VAddress,
    WAddress,
    dyadic_edge_points,
    edges,
    side_owners,
    w_vertices,
)
from .triq import (
    Point,
    TriqError,
    area_units,
    as_point,
    centroid,
    drop_collinear,
    is_convex,
    lerp,
    norm2,
    on_segment,
    orient,
    segment_intersection,
    segment_parameter,
    signed_area_units,
    sub,
    to_euclidean,
)

DEFAULT_HEIGHT_RATIO = Fraction(1, 6)


class CollapseError(TriqError):
    pass


class CollinearInput(CollapseError):
    pass


class NonConvexResult(CollapseError):
    pass


class PointOnWrongSide(CollapseError):
    pass


def _pt_json(p: Point) -> list:
    return [{"num": c.numerator, "den": c.denominator} for c in p]


@dataclass(frozen=True)
class Tripod:
    """Three segments from ``center`` to ``tips``; center is the barycenter."""

    tips: tuple
    center: Point

    @property
    def segments(self) -> list:
        return [(self.center, c) for c in self.tips]

    @property
    def edge_lengths_sq(self) -> tuple:
        return tuple(norm2(sub(c, self.center)) for c in self.tips)

    @property
    def oscillation_sq(self) -> Fraction:
        """Square of the longest edge length."""
        return max(self.edge_lengths_sq)

    @property
    def oscillation(self) -> float:
        return math.sqrt(self.oscillation_sq)

    def bbox(self) -> tuple:
        pts = [to_euclidean(p) for p in (self.center, *self.tips)]
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        return min(xs), min(ys), max(xs), max(ys)

    def to_json(self) -> dict:
        return {
            "c1": _pt_json(self.tips[0]),
            "c2": _pt_json(self.tips[1]),
            "c3": _pt_json(self.tips[2]),
            "a": _pt_json(self.center),
        }


def canonical_tripod(c1, c2, c3) -> Tripod:
    """Tripod centered at the barycenter of three non-collinear points.

    Raises:
        CollinearInput: if the points are collinear.
    """
    tips = tuple(as_point(c) for c in (c1, c2, c3))
    if orient(*tips) == 0:
        raise CollinearInput(f"collinear tips {tips}")
    a = centroid(tips)
    for i in range(3):
        for j in range(i + 1, 3):
            if segment_intersection(a, tips[i], a, tips[j]) != [a]:
                raise CollinearInput("tripod edges overlap")
    return Tripod(tips, a)


@dataclass(frozen=True)
class UQuad:
    """Convex image polygon of a v-triangle, counter-clockwise.

    ``vertices[0]`` is the marked vertex c1 (image of the midpoint of the
    side shared with the parent w-triangle). The level-0 polygon is the root
    triangle and has no marked vertex.
    """

    vertices: tuple
    level: int
    marked: bool = True

    @property
    def area(self) -> Fraction:
        return area_units(self.vertices)

    def to_json(self) -> dict:
        return {"level": self.level, "marked": self.marked, "vertices": [_pt_json(p) for p in self.vertices]}


def _strictly_inside_side(p: Point, a: Point, b: Point) -> bool:
    return p != a and p != b and on_segment(p, a, b)


def _split_polygon(poly: Sequence[Point], tripod: Tripod) -> list:
    """Components of poly minus the tripod, for tips on the polygon boundary.

    Each component is returned counter-clockwise starting at the center.
    """
    n = len(poly)
    ring = []
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        ring.append((a, a in tripod.tips))
        inside = [c for c in tripod.tips if _strictly_inside_side(c, a, b)]
        inside.sort(key=lambda c: segment_parameter(c, a, b))
        ring.extend((c, True) for c in inside)
    marks = [i for i, (_, is_tip) in enumerate(ring) if is_tip]
    if len(marks) != 3:
        raise PointOnWrongSide("tips are not on the polygon boundary")
    out = []
    for s in range(3):
        i, j = marks[s], marks[(s + 1) % 3]
        arc = [ring[i][0]]
        k = i
        while k != j:
            k = (k + 1) % len(ring)
            arc.append(ring[k][0])
        comp = [tripod.center] + arc
        if signed_area_units(comp) <= 0 or not is_convex(comp):
            raise NonConvexResult(f"component {comp} is not a convex polygon")
        out.append(tuple(drop_collinear(comp)))
    return out


def split_u(u: UQuad, c2, c3) -> tuple[Tripod, list]:
    """Cut a u-quadrilateral along the canonical tripod on c1, c2, c3.

    Args:
        u: convex quadrilateral whose first vertex is the marked vertex c1.
        c2, c3: points interior to the two sides not incident to c1.

    Returns:
        The tripod and the three child quadrilaterals, each starting at the
        tripod center.

    Raises:
        PointOnWrongSide: if c2, c3 violate the side condition.
        NonConvexResult: if a component fails to be a convex quadrilateral.
    """
    c1, p1, p2, p3 = u.vertices
    c2, c3 = as_point(c2), as_point(c3)
    far = [(p1, p2), (p2, p3)]
    hits2 = [i for i, s in enumerate(far) if _strictly_inside_side(c2, *s)]
    hits3 = [i for i, s in enumerate(far) if _strictly_inside_side(c3, *s)]
    if len(hits2) != 1 or len(hits3) != 1 or hits2 == hits3:
        raise PointOnWrongSide("c2 and c3 must be interior to distinct sides away from c1")
    tripod = canonical_tripod(c1, c2, c3)
    comps = _split_polygon(u.vertices, tripod)
    children = []
    for comp in comps:
        if len(comp) != 4:
            raise NonConvexResult(f"component {comp} is not a quadrilateral")
        children.append(UQuad(comp, u.level + 1))
    if sum(c.area for c in children) != u.area:
        raise NonConvexResult("components do not tile the quadrilateral")
    return tripod, children


@dataclass
class CollapseStage:
    """Tripods of every w-triangle and u-quadrilaterals of every v-triangle.

    Attributes:
        level_max: deepest w-triangle level with a tripod.
        height_ratio: flap height over tripod edge length for the anchor schedule.
        tripods: WAddress -> Tripod.
        uquads: VAddress -> UQuad, for v-triangles of level 0..level_max.
        corner_images: VAddress -> images of the three corners of the v-triangle.
    """

    level_max: int
    height_ratio: Fraction
    tripods: dict = field(default_factory=dict)
    uquads: dict = field(default_factory=dict)
    corner_images: dict = field(default_factory=dict)
    _wverts: dict = field(default_factory=dict, repr=False)

    def w_vertices(self, w: WAddress) -> tuple:
        if w not in self._wverts:
            self._wverts[w] = w_vertices(w)
        return self._wverts[w]

    def image(self, w: WAddress, p) -> Point:
        """Image of a point p on the boundary of w (identity for level 0)."""
        p = as_point(p)
        if w.is_level0:
            return p
        verts = self.w_vertices(w)
        tri = self.tripods[w]
        for e, (a, b) in enumerate(edges(verts)):
            if on_segment(p, a, b):
                s = segment_parameter(p, a, b)
                idx, d = ((e + 1) % 3, s) if s <= Fraction(1, 2) else ((e + 2) % 3, 1 - s)
                return lerp(tri.center, tri.tips[idx], half_edge_fraction(d, self.height_ratio))
        raise CollapseError(f"{p} is not on the boundary of {w}")

    def anchor(self, w: WAddress, half_edge: int, k: int) -> Point:
        """Image of the dyadic boundary point at depth k on a half-edge of w."""
        return self.image(w, dyadic_edge_points(w, half_edge, k).xy)

    def levels(self) -> range:
        return range(0, self.level_max + 1)

    def quads_at(self, level: int) -> list:
        return [u for v, u in self.uquads.items() if len(v.path) == level]

    def to_json(self) -> dict:
        return {
            "height_ratio": {"num": self.height_ratio.numerator, "den": self.height_ratio.denominator},
            "tripods": [dict(address=str(w), **t.to_json()) for w, t in self.tripods.items()],
            "uquads": [dict(address="v" + "".join(map(str, v.path)), **u.to_json()) for v, u in self.uquads.items()],
        }


def build_collapse(level_max: int, height_ratio=DEFAULT_HEIGHT_RATIO) -> CollapseStage:
    """Inductive construction of tripods and u-quadrilaterals.

    Args:
        level_max: number of w-triangle levels to collapse (>= 1).
        height_ratio: flap height over edge length, at most 1/6.

    Raises:
        ValueError: if level_max < 1.
        CollapseError: propagated from :func:`split_u`.
    """
    if level_max < 1:
        raise ValueError("level_max must be at least 1")
    stage = CollapseStage(level_max, Fraction(height_ratio))
    root = VAddress()
    stage.uquads[root] = UQuad(tuple(ROOT), 0, marked=False)
    stage.corner_images[root] = tuple(ROOT)
    frontier = [root]
    for level in range(1, level_max + 1):
        nxt = []
        for v in frontier:
            w = WAddress(v)
            owners = side_owners(v)
            xs = stage.w_vertices(w)
            tips = tuple(stage.image(owners[j], xs[j]) for j in range(3))
            if level == 1:
                tripod = canonical_tripod(*tips)
                comps = [UQuad(c, 1) for c in _split_polygon(stage.uquads[v].vertices, tripod)]
            else:
                u = stage.uquads[v]
                far = [t for t in tips if t != u.vertices[0]]
                if len(far) != 2:
                    raise CollapseError(f"no tip of {w} sits on the marked vertex")
                split, comps = split_u(u, *far)
                tripod = canonical_tripod(*tips)
                if split.center != tripod.center:
                    raise CollapseError(f"tripod of {w} does not match its boundary images")
            stage.tripods[w] = tripod
            corners = stage.corner_images[v]
            for i in range(3):
                child = v.child(i)
                cimg = tuple(corners[i] if j == i else tips[3 - i - j] for j in range(3))
                stage.corner_images[child] = cimg
                match = [c for c in comps if corners[i] in c.vertices]
                if len(match) != 1:
                    raise CollapseError(f"no unique u-quadrilateral for {child}")
                q = match[0]
                expected = {tripod.center, *cimg}
                if set(q.vertices) != expected:
                    raise CollapseError(f"u-quadrilateral of {child} disagrees with its boundary images")
                stage.uquads[child] = q
                nxt.append(child)
        frontier = nxt
    return stage


# -- checks -----------------------------------------------------------------


def area_by_level(stage: CollapseStage) -> dict:
    """Exact total u-quadrilateral area per level (root area is 1)."""
    out = {}
    for v, u in stage.uquads.items():
        out[len(v.path)] = out.get(len(v.path), Fraction(0)) + u.area
    return out


@dataclass
class FiberReport:
    """Image collisions among w-triangle vertices.

    A collapse identifies the three edge midpoints of a w-triangle (all sent
    to the tripod center) and pairs of points at equal distance from a vertex
    (sent to one point of a tripod edge). Every collision must be one of
    these, so the map is injective on vertices modulo single collapses.

    Attributes:
        points: distinct vertex points examined.
        collisions: images hit by more than one point.
        unexplained: collisions not produced by a single tripod.
        max_fiber: largest number of points sharing an image.
    """

    points: int
    collisions: int
    unexplained: list
    max_fiber: int

    @property
    def ok(self) -> bool:
        return not self.unexplained and self.max_fiber <= 3


def vertex_fibers(stage: CollapseStage) -> FiberReport:
    """Exact scan of image coincidences among w-triangle vertices."""
    images = {}
    holders = {}
    for w, tri in stage.tripods.items():
        owners = side_owners(w.parent)
        for p, img, owner in zip(stage.w_vertices(w), tri.tips, owners):
            if images.setdefault(p, img) != img:
                return FiberReport(len(images), 0, [(p, w)], 0)
            holders.setdefault(p, set()).add(owner)
    fibers = {}
    for p, img in images.items():
        fibers.setdefault(img, []).append(p)
    unexplained = []
    collisions = 0
    for img, pts in fibers.items():
        if len(pts) < 2:
            continue
        collisions += 1
        common = set.intersection(*(holders[p] for p in pts)) - {LEVEL0}
        if not any(all(stage.image(w, p) == img for p in pts) for w in common):
            unexplained.append((img, pts))
    return FiberReport(len(images), collisions, unexplained, max(map(len, fibers.values()), default=0))


def boundary_monotone(stage: CollapseStage, depth: int = 12) -> bool:
    """Anchor images move strictly away from the center along every half-edge."""
    for w, tri in stage.tripods.items():
        for he in range(6):
            prev = Fraction(-1)
            for k in range(1, depth + 1):
                r = norm2(sub(stage.anchor(w, he, k), tri.center))
                if r <= prev:
                    return False
                prev = r
    return True


@dataclass
class TripodFamilyReport:
    """Pairwise contacts and vertex degrees of the tripod union graph.

    Attributes:
        tripods: number of tripods examined.
        pairs_checked: candidate pairs tested exactly.
        contacts: intersecting pairs, by kind ("tip-on-edge", "tip-on-center", "tip-on-tip").
        violations: pairs breaking property (G).
        max_degree: largest vertex degree of the union graph.
        degree_histogram: degree -> count.
    """

    tripods: int
    pairs_checked: int
    contacts: dict
    violations: list
    max_degree: int
    degree_histogram: dict

    @property
    def property_g(self) -> bool:
        return not self.violations

    @property
    def ok(self) -> bool:
        return self.property_g and self.max_degree <= 6


def _float_close(a, b, tol=1e-9) -> bool:
    return not (a[2] < b[0] - tol or b[2] < a[0] - tol or a[3] < b[1] - tol or b[3] < a[1] - tol)


def tripod_contacts(tripods: Sequence[Tripod]) -> tuple:
    """Exact pairwise intersections of a list of tripods.

    Returns:
        (pairs_checked, contacts, violations, degree) where contacts lists
        (i, j, point, kind) for pairs meeting in one non-central vertex,
        violations lists (i, j, points) for pairs breaking property (G), and
        degree maps every vertex of the union graph to its degree.
    """
    boxes = [t.bbox() for t in tripods]
    order = sorted(range(len(tripods)), key=lambda i: boxes[i][0])
    xmins = [boxes[i][0] for i in order]
    contacts, violations = [], []
    degree = {}
    for t in tripods:
        degree[t.center] = degree.get(t.center, 0) + 3
        for c in t.tips:
            degree[c] = degree.get(c, 0) + 1
    pairs = 0
    for pos, i in enumerate(order):
        bi = boxes[i]
        end = bisect.bisect_right(xmins, bi[2] + 1e-9)
        for j in order[pos + 1 : end]:
            if not _float_close(bi, boxes[j]):
                continue
            pairs += 1
            ti, tj = tripods[i], tripods[j]
            pts = set()
            overlap = False
            for a, b in ti.segments:
                for c, d in tj.segments:
                    hit = segment_intersection(a, b, c, d)
                    if len(hit) > 1:
                        overlap = True
                    pts.update(hit)
            if not pts:
                continue
            p = next(iter(pts))
            a, b = min(i, j), max(i, j)
            if overlap or len(pts) > 1 or (p not in ti.tips and p not in tj.tips):
                violations.append((a, b, sorted(pts)))
                continue
            i_tip, j_tip = p in ti.tips, p in tj.tips
            if i_tip and j_tip:
                kind = "tip-on-tip"
            elif p == ti.center or p == tj.center:
                kind = "tip-on-center"
            else:
                kind = "tip-on-edge"
                degree[p] = degree.get(p, 0) + 2
            contacts.append((a, b, p, kind))
    return pairs, contacts, violations, degree


def tripod_family_checks(stage: CollapseStage, level_max: int | None = None) -> TripodFamilyReport:
    """Exact property (G) and degree scan over all tripods up to a level."""
    level_max = stage.level_max if level_max is None else level_max
    items = [(w, t) for w, t in stage.tripods.items() if w.level <= level_max]
    pairs, found, bad, degree = tripod_contacts([t for _, t in items])
    contacts = {"tip-on-edge": 0, "tip-on-center": 0, "tip-on-tip": 0}
    for *_, kind in found:
        contacts[kind] += 1
    violations = [(items[i][0], items[j][0], pts) for i, j, pts in bad]
    hist = {}
    for d in degree.values():
        hist[d] = hist.get(d, 0) + 1
    return TripodFamilyReport(len(items), pairs, contacts, violations, max(degree.values(), default=0), hist)


def oscillation_decay(stage: CollapseStage) -> list:
    """Per-level maximum of the longest tripod edge, as (level, exact square, float)."""
    best = {}
    for w, t in stage.tripods.items():
        s = t.oscillation_sq
        if s > best.get(w.level, Fraction(-1)):
            best[w.level] = s
    return [(lvl, best[lvl], math.sqrt(best[lvl])) for lvl in sorted(best)]


def interior_envelope(stage: CollapseStage, word: Sequence[int]) -> list:
    """Tripod oscillations along a nested sequence against the 7/9 recurrence.

    The generation index m(n) is the one used for the scalar witness; the
    starting oscillation is the root diameter 1. Comparison is exact on
    squares.

    Returns:
        List of (n, O(W_n) squared, bound squared).
    """
    from .gasket import nested_sequence
    from .witness import _generation_index, delta_case3

    word = tuple(word)
    n_max = min(stage.level_max, len(word))
    data = [nested_sequence(word, n) for n in range(2, n_max + 1)]
    ns = [d.n for d in data]
    req = {d.n: ([d.n - 1, d.k, d.l] if d.k is not None and d.l is not None else None) for d in data}
    gen = _generation_index(ns, req)
    deltas = delta_case3(max(gen.values()))
    return [(d.n, stage.tripods[d.w].oscillation_sq, deltas[gen[d.n]] ** 2) for d in data]


# -- export -----------------------------------------------------------------


def export_json(stage: CollapseStage) -> str:
    return json.dumps(stage.to_json(), sort_keys=True)


_LAYER_COLORS = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"]


def render_svg(stage: CollapseStage, level: int | None = None, size: int = 600) -> str:
    """SVG of u-quadrilaterals of one level with all tripods up to it."""
    level = stage.level_max if level is None else level
    pad = 10
    s = size - 2 * pad

    def xy(p):
        x, y = to_euclidean(p)
        return f"{pad + x * s:.4f},{pad + (math.sqrt(3) / 2 - y) * s:.4f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{int(size * 0.9)}">']
    for u in stage.quads_at(level):
        pts = " ".join(xy(p) for p in u.vertices)
        parts.append(f'<polygon points="{pts}" fill="#eef3fb" stroke="#9ab" stroke-width="0.3"/>')
    for w, t in stage.tripods.items():
        if w.level > level:
            continue
        color = _LAYER_COLORS[(w.level - 1) % len(_LAYER_COLORS)]
        width = max(0.3, 2.0 * 0.7 ** (w.level - 1))
        for a, b in t.segments:
            parts.append(f'<polyline points="{xy(a)} {xy(b)}" stroke="{color}" stroke-width="{width:.3f}" fill="none"/>')
    parts.append("</svg>")
    return "\n".join(parts)

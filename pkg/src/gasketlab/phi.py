"""Finite-stage homeomorphism from the root region onto a flap-plane stage.

Points are located by exact barycentric descent through the gasket.  A point
in the closure of a w-triangle of level at most L goes through that
triangle's fold onto the rectangles over its tripod.  A point of a level-L
v-triangle goes through a piecewise-affine cone map onto its
u-quadrilateral that agrees with the collapse on the boundary.  Points
outside the root triangle are fixed.  Images are canonical
:class:`FlapPoint` values, so equal images compare equal exactly.
"""
from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .collapse import CollapseStage, build_collapse
from .flapplane import FlapPlaneStage, FlapPoint, build_stage, plane_point, rect_point
from .fold import FoldMap, assemble_fold, distortion_bound, face_tip, subdivision_params
from .gasket import ROOT, VAddress, WAddress, dyadic_edge_points, edges, iter_v, side_owners, v_vertices, w_vertices
from .triq import (
    AffinePiece,
    TriqError,
    add,
    affine_from_triangles,
    area_units,
    as_point,
    centroid,
    ccw,
    cross,
    dot,
    in_convex,
    lerp,
    norm2,
    on_segment,
    segment_parameter,
    sub,
    to_euclidean,
)

DEFAULT_HEIGHT_RATIO = Fraction(1, 6)
_ROOT_CENTER = centroid(ROOT)
_BASIS = np.array([[1.0, 0.5], [0.0, math.sqrt(3) / 2]])


class PhiError(TriqError):
    pass


class CollisionFound(PhiError):
    """Two distinct sampled points share an image."""


class ChartMismatch(PhiError):
    """Two charts containing the same point disagree on its image."""


# -- charts -----------------------------------------------------------------


@dataclass
class _FoldChart:
    """Fold of one w-triangle with per-face pieces sorted by dyadic band."""

    fold: FoldMap
    faces: dict

    @classmethod
    def build(cls, verts: tuple, eta: Fraction, reference: "_FoldChart | None" = None) -> "_FoldChart":
        if reference is not None:
            # dyadic bands are invariant under the homothety
            fold = _scaled_fold(reference.fold, verts)
            bands = {id(pc): (lo, hi) for f in range(6) for lo, hi, _, pc in reference.faces[f]}
            ref_pieces = reference.fold.pieces
        else:
            fold = assemble_fold(verts, (1, 1, 1), height_ratio=eta)
            ref_pieces = fold.pieces
            bands = None
        if fold.triangle != tuple(verts):
            raise PhiError("w-triangle is not counter-clockwise")
        faces = {f: [] for f in range(6)}
        for pc, rp in zip(fold.pieces, ref_pieces):
            if bands is not None:
                lo, hi = bands[id(rp)]
            else:
                i = face_tip(pc.face)
                y = verts[(i + 1) % 3] if pc.face % 2 == 0 else verts[(i + 2) % 3]
                ds = [_along(q, verts[i], y) for q in pc.source]
                lo, hi = min(ds), max(ds)
            faces[pc.face].append((lo, hi, ccw(pc.source), pc))
        return cls(fold, faces)

    def locate(self, p, mu: tuple):
        """Piece holding p, given barycentric coordinates mu with respect to W."""
        i = max(range(3), key=lambda j: mu[j])
        nxt, prv = (i + 1) % 3, (i + 2) % 3
        sigma = 0 if mu[nxt] >= mu[prv] else 1
        face = 2 * ((i + 2) % 3) if sigma == 0 else 2 * ((i + 1) % 3) + 1
        near = nxt if sigma == 0 else prv
        far = prv if sigma == 0 else nxt
        d = mu[near] + mu[far] / 2
        for lo, hi, src, pc in self.faces[face]:
            if lo <= d <= hi and in_convex(p, src):
                return pc
        raise PhiError(f"no fold piece holds {p}")


def _scaled_fold(ref: FoldMap, verts: tuple) -> FoldMap:
    """Fold of a homothetic copy ``x -> c + lam * x`` of the reference triangle."""
    lam = (verts[1][0] - verts[0][0]) / (ref.triangle[1][0] - ref.triangle[0][0])
    c = sub(verts[0], tuple(lam * x for x in ref.triangle[0]))
    if tuple(add(c, tuple(lam * x for x in q)) for q in ref.triangle) != tuple(verts):
        raise PhiError("triangle is not a homothetic copy of the reference")

    def move(q):
        return add(c, (lam * q[0], lam * q[1]))

    pieces = []
    for pc in ref.pieces:
        a = pc.affine
        lin = tuple(tuple(x / lam for x in row) for row in a.linear)
        shift = tuple(a.translation[r] - lin[r][0] * c[0] - lin[r][1] * c[1] for r in range(2))
        src = tuple(move(q) for q in pc.source)
        aff = AffinePiece(lin, shift, tuple(move(q) for q in a.domain) if a.domain else None, a.frame)
        pieces.append(replace(pc, source=src, affine=aff))
    return FoldMap(tuple(verts), ref.lengths, ref.heights, pieces, ref.params)


def _along(q, x, y) -> Fraction:
    # parameter of the orthogonal projection on segment x -> y
    e = sub(y, x)
    return dot(sub(q, x), e) / dot(e, e)


@dataclass
class _ConeChart:
    """Cone map from a level-L v-triangle onto its u-quadrilateral.

    Attributes:
        verts: the v-triangle (counter-clockwise).
        apex: image of the centroid.
        sides: for side j, sorted parameters along verts[j+1] -> verts[j+2]
            and the images of those boundary points.
    """

    verts: tuple
    apex: tuple
    sides: list
    _maps: dict = field(default_factory=dict)

    def map_side(self, j: int, k: int):
        key = (j, k)
        if key not in self._maps:
            params, imgs = self.sides[j]
            a, b = self.verts[(j + 1) % 3], self.verts[(j + 2) % 3]
            src = (centroid(self.verts), lerp(a, b, params[k]), lerp(a, b, params[k + 1]))
            dst = (self.apex, imgs[k], imgs[k + 1])
            self._maps[key] = affine_from_triangles(src, dst, frame="lattice")
        return self._maps[key]

    def __call__(self, p, nu: tuple):
        j = min(range(3), key=lambda m: nu[m])
        a_w, b_w = nu[(j + 1) % 3] - nu[j], nu[(j + 2) % 3] - nu[j]
        if a_w + b_w == 0:
            return self.apex
        s = b_w / (a_w + b_w)
        params = self.sides[j][0]
        k = min(max(bisect.bisect_right(params, s) - 1, 0), len(params) - 2)
        return self.map_side(j, k)(p)


def _side_breaks(owner: WAddress, a, b, eta: Fraction) -> list:
    """Breakpoint parameters of the collapse boundary map on segment a -> b."""
    out = {Fraction(0), Fraction(1)}
    if owner.is_level0:
        return sorted(out)
    n, _ = subdivision_params(1, eta)
    for x, y in edges(w_vertices(owner)):
        if not (on_segment(a, x, y) and on_segment(b, x, y)):
            continue
        sa, sb = segment_parameter(a, x, y), segment_parameter(b, x, y)
        for k in range(1, n + 2):
            for s in (Fraction(1, 2**k), 1 - Fraction(1, 2**k)):
                if min(sa, sb) < s < max(sa, sb):
                    out.add((s - sa) / (sb - sa))
        return sorted(out)
    raise PhiError(f"side {a}-{b} is not on the boundary of {owner}")


# -- stage ------------------------------------------------------------------


class PhiStage:
    """Lazily evaluated map Phi_L from the plane onto a flap-plane stage.

    Attributes:
        level: L, the deepest w-triangle level that is folded.
        collapse: the collapse stage (tripods and u-quadrilaterals).
        flap: flap-plane stage over the collapse tripods, heights
            ``scale * height_ratio * ell`` per edge.
        height_ratio: anchor schedule ratio h / ell of collapse and folds.
        scale: vertical scale from fold charts to rectangles.
    """

    def __init__(self, collapse: CollapseStage, flap: FlapPlaneStage, scale: Fraction):
        self.level = collapse.level_max
        self.collapse = collapse
        self.flap = flap
        self.height_ratio = collapse.height_ratio
        self.scale = Fraction(scale)
        self.addresses = list(collapse.tripods)
        self.index = {w: i for i, w in enumerate(self.addresses)}
        self._folds = {}
        self._cones = {}
        self._reference = None

    # -- charts -------------------------------------------------------------

    def fold_of(self, w: WAddress) -> FoldMap:
        return self._fold_chart(w).fold

    def _fold_chart(self, w: WAddress) -> _FoldChart:
        if w not in self._folds:
            if self._reference is None:
                self._reference = _FoldChart.build(w_vertices(WAddress(VAddress())), self.height_ratio)
            self._folds[w] = _FoldChart.build(self.collapse.w_vertices(w), self.height_ratio, self._reference)
        return self._folds[w]

    def _cone_chart(self, v: VAddress) -> _ConeChart:
        if v not in self._cones:
            verts = v_vertices(v)
            owners = side_owners(v)
            sides = []
            for j in range(3):
                a, b = verts[(j + 1) % 3], verts[(j + 2) % 3]
                params = _side_breaks(owners[j], a, b, self.height_ratio)
                imgs = [self.collapse.image(owners[j], lerp(a, b, s)) for s in params]
                sides.append((params, imgs))
            apex = centroid(self.collapse.uquads[v].vertices)
            self._cones[v] = _ConeChart(verts, apex, sides)
        return self._cones[v]

    def charts(self, p) -> list:
        """Every chart whose closed domain holds p.

        Returns:
            list of ("plane", None, None), ("w", WAddress, mu) or
            ("v", VAddress, nu) with barycentric coordinates.
        """
        x, y = as_point(p)
        lam = (1 - x - y, x, y)
        if min(lam) < 0:
            return [("plane", None, None)]
        out = []
        if min(lam) == 0:
            out.append(("plane", None, None))
        stack = [((), lam)]
        while stack:
            path, lam = stack.pop()
            if len(path) == self.level:
                out.append(("v", VAddress(path), lam))
                continue
            if max(lam) <= Fraction(1, 2):
                out.append(("w", WAddress(VAddress(path)), tuple(1 - 2 * c for c in lam)))
            for i in range(3):
                if lam[i] >= Fraction(1, 2):
                    child = tuple(2 * c - 1 if j == i else 2 * c for j, c in enumerate(lam))
                    stack.append((path + (i,), child))
        return out

    def _eval_chart(self, p, chart) -> FlapPoint:
        kind, addr, bary = chart
        if kind == "plane":
            # root boundary points may be tripod tips; approach from outside
            return self._plane_to_flap(p, sub(p, _ROOT_CENTER))
        if kind == "w":
            return self.flap.canonical(self.fold_point(addr, p, bary))
        cone = self._cone_chart(addr)
        q = cone(p, bary)
        if min(bary) == 0:
            return self._plane_to_flap(q, sub(cone.apex, q))
        return self.flap.canonical(plane_point(q))

    def fold_point(self, w: WAddress, p, mu: tuple | None = None) -> FlapPoint:
        """Rectangle point of p in the closed w-triangle w (not canonicalized)."""
        p = as_point(p)
        fc = self._fold_chart(w)
        if mu is None:
            mu = _barycentric(p, fc.fold.triangle)
        pc = fc.locate(p, mu)
        s, t = pc.chart(p)
        face = pc.face
        return rect_point(self.index[w], 2 * face_tip(face) + face % 2, s, t / self.height_ratio)

    def _plane_to_flap(self, q, d) -> FlapPoint:
        """Point of the stage at planar q, approached from direction d."""
        fl = self.flap
        if q in fl.incident:
            vs = fl.vertex_structure(q)
            return vs.canonical(vs.sector_class[vs.sector_of(d)])
        x, y = to_euclidean(q)
        for k in fl._near_segments(x, y, x, y):
            i, e = fl.seg_index[k]
            t = fl.tripods[i]
            if on_segment(q, t.center, t.tips[e]):
                u = segment_parameter(q, t.center, t.tips[e])
                side = 0 if cross(sub(t.tips[e], t.center), d) > 0 else 1
                return fl.canonical(rect_point(i, 2 * e + side, u, 0))
        return plane_point(q)

    # -- evaluation ---------------------------------------------------------

    def __call__(self, p) -> FlapPoint:
        p = as_point(p)
        return self._eval_chart(p, self.charts(p)[-1])

    def evaluate_all(self, p) -> list:
        """(chart label, image) for every chart holding p."""
        p = as_point(p)
        out = []
        for chart in self.charts(p):
            label = "plane" if chart[0] == "plane" else str(chart[1])
            out.append((label, self._eval_chart(p, chart)))
        return out

    def evaluate_consistent(self, p) -> FlapPoint:
        """Image of p, after checking that all charts holding p agree.

        Raises:
            ChartMismatch: if two charts give different images.
        """
        imgs = self.evaluate_all(p)
        first = imgs[0][1]
        for label, img in imgs[1:]:
            if img != first:
                raise ChartMismatch(f"{p}: {imgs[0][0]} gives {first}, {label} gives {img}")
        return first

    def evaluate_json(self, p) -> dict:
        """Evaluation endpoint: source charts and canonical image of p."""
        p = as_point(p)
        img = self.evaluate_consistent(p)
        return {
            "point": [{"num": c.numerator, "den": c.denominator} for c in p],
            "charts": [label for label, _ in self.evaluate_all(p)],
            "image": img.to_json(),
        }

    def to_json(self) -> dict:
        return {
            "level": self.level,
            "heightRatio": {"num": self.height_ratio.numerator, "den": self.height_ratio.denominator},
            "scale": {"num": self.scale.numerator, "den": self.scale.denominator},
            "tripods": [str(w) for w in self.addresses],
            "flap": self.flap.to_json(),
        }


def _barycentric(p, tri) -> tuple:
    a, b, c = tri
    total = cross(sub(b, a), sub(c, a))
    return (
        cross(sub(b, p), sub(c, p)) / total,
        cross(sub(c, p), sub(a, p)) / total,
        cross(sub(a, p), sub(b, p)) / total,
    )


def build_phi(level: int, height_ratio=DEFAULT_HEIGHT_RATIO, scale=1) -> PhiStage:
    """Collapse to level L, fold every w-triangle, and build the target stage.

    Args:
        level: L >= 1.
        height_ratio: anchor schedule ratio h / ell (at most 1/6).
        scale: rectangle heights are ``scale * height_ratio * ell``; the folds
            are composed with a vertical stretch by ``scale``.

    Raises:
        ValueError: if level < 1 or scale is not in (0, 1].
    """
    scale = Fraction(scale)
    if not 0 < scale <= 1:
        raise ValueError("scale must lie in (0, 1]")
    collapse = build_collapse(level, height_ratio)
    tripods = list(collapse.tripods.values())
    eta = collapse.height_ratio
    heights = [tuple(float(scale * eta) * math.sqrt(l2) for l2 in t.edge_lengths_sq) for t in tripods]
    return PhiStage(collapse, build_stage(tripods, heights), scale)


# -- verification -----------------------------------------------------------


@dataclass
class InjectivityReport:
    exact_points: int
    samples: int
    distinct_images: int
    charts_checked: int

    @property
    def ok(self) -> bool:
        return self.distinct_images == self.exact_points + self.samples


def exact_vertices(level: int) -> list:
    """Root corners and every w-triangle vertex up to the level, deduplicated."""
    pts = set(ROOT)
    for n in range(level):
        for v in iter_v(n):
            pts.update(w_vertices(WAddress(v)))
    return sorted(pts)


def _dyadic(rng: random.Random, bits: int) -> Fraction:
    return Fraction(rng.getrandbits(bits), 1 << bits)


def sample_points(count: int, seed: int = 0, bits: int = 24, outside: float = 0.02) -> list:
    """Random dyadic points, uniform in the root triangle plus a few outside it."""
    rng = random.Random(seed)
    out = []
    for _ in range(count):
        if rng.random() < outside:
            out.append((_dyadic(rng, bits) * 2 - Fraction(1, 2), Fraction(-1, 1 << 4) - _dyadic(rng, bits)))
            continue
        a, b = _dyadic(rng, bits), _dyadic(rng, bits)
        if a + b > 1:
            a, b = 1 - a, 1 - b
        out.append((a, b))
    return out


def injectivity_scan(stage: PhiStage, n_samples: int = 1000, seed: int = 0) -> InjectivityReport:
    """Exact collision search over all triangle vertices and random samples.

    Every exact vertex is evaluated in every chart that holds it, so shared
    vertices also certify that the charts glue to a single image.

    Raises:
        CollisionFound: if two distinct points share an image.
        ChartMismatch: if charts holding a vertex disagree.
    """
    seen = {}
    verts = exact_vertices(stage.level)
    charts = 0

    def record(p, img):
        q = seen.setdefault(img, p)
        if q != p:
            raise CollisionFound(f"{q} and {p} both map to {img}")

    for p in verts:
        imgs = stage.evaluate_all(p)
        charts += len(imgs)
        img = stage.evaluate_consistent(p)
        record(p, img)
    uniq = sorted(set(sample_points(n_samples, seed)) - set(verts))
    for p in uniq:
        record(p, stage(p))
    return InjectivityReport(len(verts), len(uniq), len(seen), charts)


@dataclass
class MeasureReport:
    """Areas of the planar image and of the rectangles.

    Attributes:
        planar_area_units: exact area of the level-L u-quadrilaterals, in root
            units (root area = 1 = sqrt(3)/4 Euclidean).
        cone_area_units: exact area covered by the cone pieces.
        flap_area: exact Euclidean flap area sum of 2 * ell * h.
        total_length_sq: exact sum of squared tripod edge lengths.
        total_length: float sum of tripod edge lengths.
    """

    level: int
    planar_area_units: Fraction
    cone_area_units: Fraction
    flap_area: Fraction
    total_length_sq: Fraction
    total_length: float

    @property
    def planar_area(self) -> float:
        return float(self.planar_area_units) * math.sqrt(3) / 4

    @property
    def lower_bound(self) -> float:
        """Stage-L statement: the image of the cover has measure >= area(root) - flap area."""
        return math.sqrt(3) / 4 - float(self.flap_area)


def measure_blowup(stage: PhiStage) -> MeasureReport:
    """Exact planar and flap areas of the stage-L image."""
    quads = [stage.collapse.uquads[v] for v in iter_v(stage.level)]
    planar = sum((u.area for u in quads), Fraction(0))
    cone = Fraction(0)
    for v in iter_v(stage.level):
        ch = stage._cone_chart(v)
        for params, imgs in ch.sides:
            for k in range(len(params) - 1):
                cone += area_units((ch.apex, imgs[k], imgs[k + 1]))
    l2 = sum((l for t in stage.flap.tripods for l in t.edge_lengths_sq), Fraction(0))
    flap = 2 * stage.scale * stage.height_ratio * l2
    length = sum(math.sqrt(l) for t in stage.flap.tripods for l in t.edge_lengths_sq)
    return MeasureReport(stage.level, planar, cone, flap, l2, length)


def boundary_compatibility(stage: PhiStage, depth: int = 8) -> int:
    """Fold traces against collapse anchors on every dyadic boundary point.

    Returns:
        number of anchors checked.

    Raises:
        PhiError: on the first disagreement.
    """
    count = 0
    for w in stage.addresses:
        for face in range(6):
            for k in range(1, depth + 1):
                p = dyadic_edge_points(w, face, k).xy
                fp = stage.fold_point(w, p)
                if fp.coords[1] != 0 or stage.flap.base_point(fp) != stage.collapse.anchor(w, face, k):
                    raise PhiError(f"anchor {k} of face {face} on {w} disagrees")
                count += 1
    return count


def continuity_certificates(stage: PhiStage, depth: int = 8) -> tuple[bool, int]:
    """Consecutive anchor images against 2h <= ell/3 <= O(W)/3, exactly on squares."""
    eta = stage.height_ratio * stage.scale
    count = 0
    for w in stage.addresses:
        t = stage.collapse.tripods[w]
        lim = t.oscillation_sq / 9
        for face in range(6):
            ell_sq = t.edge_lengths_sq[face_tip(face)]
            rect = 2 * face_tip(face) + face % 2

            def image(k):
                # both anchors sit on the base of this face's rectangle
                fp = stage.fold_point(w, dyadic_edge_points(w, face, k).xy)
                if fp.coords[1] != 0 or (fp.rect != rect and fp.coords[0] != 0):
                    raise PhiError(f"anchor {k} of face {face} on {w} left its rectangle base")
                return stage.flap.base_point(fp)

            prev = image(1)
            for k in range(2, depth + 1):
                cur = image(k)
                gap = norm2(sub(cur, prev))
                count += 1
                if not (gap <= 4 * eta * eta * ell_sq <= ell_sq / 9 <= lim):
                    return False, count
                prev = cur
    return True, count


@dataclass
class DistortionRecheck:
    fold_bound: float
    allowed: float
    measured: float
    pieces: int

    @property
    def ok(self) -> bool:
        return self.measured <= self.allowed * (1 + 1e-9)


def distortion_recheck(stage: PhiStage, limit: int | None = None) -> DistortionRecheck:
    """Singular-value distortion of every piece as assembled into rectangle charts.

    The composite map takes Cartesian source coordinates to the metric chart
    (u * ell, v * h) of the target rectangle, using the stage's own lengths
    and heights, and is compared with the fold's exact bound times the
    distortion of the vertical stretch.
    """
    addrs = stage.addresses if limit is None else stage.addresses[:limit]
    bound = 0.0
    worst = 0.0
    n = 0
    binv = np.linalg.inv(_BASIS)
    for w in addrs:
        fold = stage.fold_of(w)
        bound = max(bound, float(distortion_bound(fold)))
        i = stage.index[w]
        for pc in fold.pieces:
            e = face_tip(pc.face)
            lin = np.array([[float(x) for x in row] for row in pc.affine.linear])
            lin[1] *= pc.sign
            metric = np.diag([stage.flap.lengths[i][e], stage.flap.hf[i][e] / float(stage.height_ratio)])
            s = np.linalg.svd(metric @ lin @ binv, compute_uv=False)
            worst = max(worst, s[0] / s[1])
            n += 1
    stretch = float(max(stage.scale, 1 / stage.scale))
    return DistortionRecheck(bound, bound * stretch, worst, n)


def adjacent_contact(stage: PhiStage, w1: WAddress, w2: WAddress) -> list:
    """Canonical points shared by the rectangles of two tripods."""
    return stage.flap.shared_points(stage.index[w1], stage.index[w2])


# -- rendering --------------------------------------------------------------


def render_svg(stage: PhiStage, size: int = 600) -> str:
    """Level-L u-quadrilaterals with schematic flaps drawn on both banks."""
    pad = 10
    s = size - 2 * pad

    def xy(q):
        return f"{pad + q[0] * s:.4f},{pad + (math.sqrt(3) / 2 - q[1]) * s:.4f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{int(size * 0.9)}">']
    for v in iter_v(stage.level):
        pts = " ".join(xy(to_euclidean(p)) for p in stage.collapse.uquads[v].vertices)
        parts.append(f'<polygon points="{pts}" fill="#eef3fb" stroke="#9ab" stroke-width="0.3"/>')
    fl = stage.flap
    for i, t in enumerate(fl.tripods):
        c = np.array(to_euclidean(t.center))
        for e, tip in enumerate(t.tips):
            d = np.array(to_euclidean(tip)) - c
            nrm = np.array([-d[1], d[0]]) / np.linalg.norm(d)
            for side, sgn in ((0, 1.0), (1, -1.0)):
                off = sgn * fl.hf[i][e] * nrm
                quad = [c, c + d, c + d + off, c + off]
                pts = " ".join(xy(q) for q in quad)
                fill = "#f4a582" if side == 0 else "#92c5de"
                parts.append(f'<polygon points="{pts}" fill="{fill}" fill-opacity="0.6" stroke="none"/>')
    parts.append("</svg>")
    return "\n".join(parts)

"""Piecewise-linear folding of an equilateral triangle onto the flaps of a tripod."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .gasket import edges
from .triq import (
    AffinePiece,
    Distortion,
    Point,
    TriqError,
    _frac,
    add,
    affine_distortion,
    affine_from_triangles,
    area_units,
    as_point,
    ccw,
    centroid,
    in_convex,
    lerp,
    midpoint,
    norm2,
    orient,
    scale,
    sub,
    to_euclidean,
)


class FoldError(TriqError):
    pass


class HeightTooLarge(FoldError):
    pass


class DegeneratePiece(FoldError):
    pass


def subdivision_params(ell, h) -> tuple[int, Fraction]:
    """Split a flap of width ell into N squares of side h and a remainder q.

    Returns:
        (N, q) with ell = N*h + q and h <= q < 2h.

    Raises:
        HeightTooLarge: if h > ell/6.
    """
    ell, h = _frac(ell), _frac(h)
    if h <= 0 or 6 * h > ell:
        raise HeightTooLarge(f"height {h} exceeds {ell}/6")
    n = int(ell // h) - 1
    return n, ell - n * h


def half_edge_fraction(d, height_ratio) -> Fraction:
    """Position along a tripod edge of the image of a half-edge point.

    Args:
        d: distance from the triangle vertex, as a fraction of the full edge
            (0 at the vertex, 1/2 at the midpoint).
        height_ratio: h/ell for the flap over the target edge.

    Returns:
        Fraction of the way from the tripod center to the tip. The dyadic
        point at distance 2**-k lands on the k-1 st square boundary; below
        2**-(N+1) the remainder rectangle is traversed linearly.
    """
    d, h = _frac(d), _frac(height_ratio)
    n, q = subdivision_params(1, h)
    if not 0 <= d <= Fraction(1, 2):
        raise ValueError(f"half-edge distance {d} outside [0, 1/2]")
    last = Fraction(1, 2 ** (n + 1))
    if d <= last:
        return n * h + q * (last - d) / last
    k = 1
    while d < Fraction(1, 2 ** k) / 2:
        k += 1
    hi = Fraction(1, 2**k)
    return (k - 1) * h + h * (hi - d) / (hi / 2)


# -- geometry ---------------------------------------------------------------

ROOT_W = ((Fraction(0), Fraction(0)), (Fraction(1), Fraction(0)), (Fraction(0), Fraction(1)))


def face_tip(face: int) -> int:
    """Triangle vertex at the far end of half-edge ``face`` (index 2e+s)."""
    e, s = divmod(face, 2)
    return (e + 1 + s) % 3


def faces_of_tip(i: int) -> tuple[int, int]:
    """The two half-edges ending at vertex i."""
    return 2 * ((i + 2) % 3), 2 * ((i + 1) % 3) + 1


def split_triangle(w: Sequence) -> list:
    """Cut an equilateral triangle along its altitudes into three kites.

    Returns:
        [Z_0, Z_1, Z_2]; Z_i = (x_i, foot, centroid, foot), counter-clockwise,
        holding vertex i and the two half-edges at it.
    """
    w = ccw([as_point(p) for p in w])
    g = centroid(w)
    out = []
    for i in range(3):
        x, y, z = w[i], w[(i + 1) % 3], w[(i + 2) % 3]
        out.append((x, midpoint(x, y), g, midpoint(x, z)))
    return out


@dataclass(frozen=True)
class FoldPiece:
    """Affine piece from a source triangle (lattice) onto a flap chart.

    Attributes:
        source: lattice triangle in W.
        target: chart triangle, (s, t) with s from the tripod center along
            the edge and t the height above the base.
        face: half-edge index of the flap face (0..5).
        kind: "trapezoid" or "vertex".
        index: trapezoid number k (1..N), or 0 for the vertex piece.
        affine: the map in the mixed frame; a face whose source orientation
            is clockwise is reflected (t -> -t) so the piece has positive
            determinant.
        sign: +1 or -1, the reflection applied.
    """

    source: tuple
    target: tuple
    face: int
    kind: str
    index: int
    affine: AffinePiece
    sign: int

    def distortion(self) -> Distortion:
        if self.affine.det <= 0:
            raise DegeneratePiece(f"piece on face {self.face} has determinant {self.affine.det}")
        return affine_distortion(self.affine)

    def chart(self, p) -> Point:
        s, t = self.affine(as_point(p))
        return (s, self.sign * t)

    def to_json(self) -> dict:
        enc = lambda x: {"num": x.numerator, "den": x.denominator}  # noqa: E731
        return {
            "sourcePoly": [[enc(c) for c in p] for p in self.source],
            "matrix": [[enc(c) for c in row] for row in self.affine.linear],
            "translation": [enc(c) for c in self.affine.translation],
            "targetChart": {"face": self.face, "polygon": [[enc(c) for c in p] for p in self.target]},
            "kind": self.kind,
            "index": self.index,
        }


def _piece(src, dst, face, kind, index) -> FoldPiece:
    src = tuple(as_point(p) for p in src)
    dst = tuple(as_point(p) for p in dst)
    if orient(*src) == 0 or orient(*dst) == 0:
        raise DegeneratePiece(f"degenerate piece {src} -> {dst}")
    sign = orient(*src) * orient(*dst)
    flipped = tuple((s, sign * t) for s, t in dst)
    return FoldPiece(src, dst, face, kind, index, affine_from_triangles(src, flipped, frame="mixed"), sign)


def _face_geometry(w: Sequence, face: int) -> tuple:
    """(vertex x, other end y of its edge, centroid g) for a face."""
    e, s = divmod(face, 2)
    a, b = edges(w)[e]
    x, y = (a, b) if s == 0 else (b, a)
    return x, y, centroid(w)


def dyadic_point(w: Sequence, face: int, k: int) -> Point:
    """Point of half-edge ``face`` at distance 2**-k (of the edge) from its vertex."""
    x, y, _ = _face_geometry(w, face)
    return lerp(x, y, Fraction(1, 2**k))


def fold_quadrilateral(w: Sequence, vertex: int, ell, h) -> list:
    """Fold the kite at ``vertex`` onto the two faces over a tripod edge.

    Each half of the kite (a 30-60-90 triangle on one half-edge) is cut by
    perpendiculars at the dyadic points into N similar trapezoids, each sent
    to an h x h square, and a corner triangle sent to the q x h remainder.

    Args:
        w: equilateral triangle (lattice coordinates), counter-clockwise.
        vertex: index of the kite's vertex.
        ell: width of the faces (tripod edge length).
        h: face height, at most ell/6.

    Returns:
        The 4N + 4 pieces of the two faces.

    Raises:
        HeightTooLarge: if h > ell/6.
    """
    ell, h = _frac(ell), _frac(h)
    n, q = subdivision_params(ell, h)
    pieces = []
    for face in faces_of_tip(vertex):
        x, y, g = _face_geometry(w, face)
        pt = lambda k: lerp(x, y, Fraction(1, 2**k))  # noqa: E731
        top = lambda k: lerp(x, g, Fraction(2, 2**k))  # noqa: E731
        for k in range(1, n + 1):
            bl, br, tr, tl = pt(k), pt(k + 1), top(k + 1), top(k)
            sl, sr = (k - 1) * h, k * h
            # diagonal from the corner nearest the tripod center
            pieces.append(_piece((bl, br, tr), ((sl, 0), (sr, 0), (sr, h)), face, "trapezoid", k))
            pieces.append(_piece((bl, tr, tl), ((sl, 0), (sr, h), (sl, h)), face, "trapezoid", k))
        hh, ii, kk = pt(n + 1), x, top(n + 1)
        jj = midpoint(ii, kk)
        pieces.append(_piece((hh, ii, jj), ((n * h, 0), (ell, 0), (ell, h)), face, "vertex", 0))
        pieces.append(_piece((hh, jj, kk), ((n * h, 0), (ell, h), (n * h, h)), face, "vertex", 0))
    return pieces


@dataclass
class FoldMap:
    """Piecewise-affine homeomorphism from W onto the six faces over a tripod.

    Attributes:
        triangle: W, counter-clockwise lattice vertices.
        lengths: face width for each vertex (the matching tripod edge length).
        heights: face height for each vertex.
        pieces: all affine pieces.
        params: vertex -> (N, q).
    """

    triangle: tuple
    lengths: tuple
    heights: tuple
    pieces: list
    params: dict

    def pieces_on(self, face: int) -> list:
        return [p for p in self.pieces if p.face == face]

    def locate(self, p) -> list:
        """Pieces whose closed source triangle holds p."""
        p = as_point(p)
        return [pc for pc in self.pieces if in_convex(p, ccw(pc.source))]

    def __call__(self, p) -> tuple[int, Point]:
        hits = self.locate(p)
        if not hits:
            raise FoldError(f"{p} is outside the triangle")
        pc = hits[0]
        return pc.face, pc.chart(p)

    def anchor_chart(self, face: int, k: int) -> Fraction:
        """Chart abscissa of the dyadic boundary point at depth k."""
        p = dyadic_point(self.triangle, face, k)
        hits = [pc for pc in self.pieces_on(face) if in_convex(p, ccw(pc.source))]
        s, t = hits[0].chart(p)
        if t != 0:
            raise FoldError("boundary point left the base of its face")
        return s

    def height_of(self, face: int) -> Fraction:
        return self.heights[face_tip(face)]

    def length_of(self, face: int) -> Fraction:
        return self.lengths[face_tip(face)]

    def to_json(self) -> dict:
        return {
            "triangle": [[str(c) for c in p] for p in self.triangle],
            "lengths": [str(x) for x in self.lengths],
            "heights": [str(x) for x in self.heights],
            "pieces": [pc.to_json() for pc in self.pieces],
        }


def assemble_fold(w: Sequence = ROOT_W, lengths=(1, 1, 1), h=None, height_ratio=None) -> FoldMap:
    """Fold all three kites of W onto the six faces over a tripod.

    Args:
        w: equilateral triangle in lattice coordinates.
        lengths: tripod edge lengths, matched with the vertices of W.
        h: common face height; defaults to min(lengths)/6.
        height_ratio: alternatively, height over length for each edge
            separately (heights h_i = ratio * lengths_i).

    Raises:
        HeightTooLarge: if some height exceeds its length over 6.
    """
    w = tuple(ccw([as_point(p) for p in w]))
    lengths = tuple(_frac(x) for x in lengths)
    if height_ratio is not None:
        heights = tuple(_frac(height_ratio) * x for x in lengths)
    else:
        h = min(lengths) / 6 if h is None else _frac(h)
        heights = (h, h, h)
    pieces = []
    params = {}
    for i in range(3):
        params[i] = subdivision_params(lengths[i], heights[i])
        pieces.extend(fold_quadrilateral(w, i, lengths[i], heights[i]))
    return FoldMap(w, lengths, heights, pieces, params)


def distortion_bound(fold: FoldMap) -> Distortion:
    """Largest piece distortion; every piece must preserve orientation.

    Raises:
        DegeneratePiece: if a piece is degenerate or reverses orientation.
    """
    return max(pc.distortion() for pc in fold.pieces)


def trapezoid_distortions(fold: FoldMap) -> set:
    """Distinct (first half, second half) distortion pairs over all trapezoids."""
    out = set()
    for face in range(6):
        pcs = [pc for pc in fold.pieces_on(face) if pc.kind == "trapezoid"]
        for k in sorted({pc.index for pc in pcs}):
            pair = tuple(pc.distortion() for pc in pcs if pc.index == k)
            out.add(tuple(d.ratio_sq for d in pair))
    return out


def vertex_piece_distortion(aspect) -> Distortion:
    """Distortion of the corner map onto a q x h rectangle with q/h = aspect."""
    aspect = _frac(aspect)
    ell = 5 + aspect
    fold = fold_quadrilateral(ROOT_W, 0, ell, Fraction(1))
    return max(pc.distortion() for pc in fold if pc.kind == "vertex")


# -- certificates -----------------------------------------------------------


@dataclass
class TilingReport:
    source_area: Fraction
    triangle_area: Fraction
    face_areas: dict
    face_expected: dict

    @property
    def ok(self) -> bool:
        return self.source_area == self.triangle_area and self.face_areas == self.face_expected


def tiling_report(fold: FoldMap) -> TilingReport:
    """Exact area bookkeeping on both sides of the fold."""
    src = sum((area_units(pc.source) for pc in fold.pieces), Fraction(0))
    faces = {}
    for pc in fold.pieces:
        (a, b), (c, d), (e, f) = pc.target
        faces[pc.face] = faces.get(pc.face, Fraction(0)) + abs((c - a) * (f - b) - (e - a) * (d - b)) / 2
    expected = {face: fold.length_of(face) * fold.height_of(face) for face in range(6)}
    return TilingReport(src, area_units(fold.triangle), faces, expected)


def _sample_segment(a: Point, b: Point, n: int) -> list:
    return [lerp(a, b, Fraction(i, n - 1)) for i in range(n)]


def _charts_on(fold: FoldMap, face: int, p: Point) -> set:
    return {pc.chart(p) for pc in fold.pieces_on(face) if in_convex(p, ccw(pc.source))}


@dataclass
class GluingReport:
    """Agreement of affine pieces across every identified segment.

    Attributes:
        internal: shared edges inside one face checked.
        pillow: samples on the fold through each vertex (top and tip-end sides).
        seams: samples on the altitude feet shared by neighboring pillows.
        failures: offending (kind, face(s), point).
    """

    internal: int
    pillow: int
    seams: int
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures


def gluing_report(fold: FoldMap, samples: int = 32) -> GluingReport:
    """Exact pointwise comparison on 32 samples per identified segment."""
    failures = []
    internal = 0
    for face in range(6):
        pcs = fold.pieces_on(face)
        for i, a in enumerate(pcs):
            for b in pcs[i + 1:]:
                shared = [p for p in a.source if p in b.source]
                if len(shared) == 2:
                    internal += 1
                    for p in _sample_segment(*shared, samples):
                        if a.chart(p) != b.chart(p):
                            failures.append(("internal", face, p))
    w = fold.triangle
    g = centroid(w)
    pillow = 0
    for i in range(3):
        f1, f2 = faces_of_tip(i)
        for p in _sample_segment(w[i], g, samples):
            c1, c2 = _charts_on(fold, f1, p), _charts_on(fold, f2, p)
            pillow += 1
            if len(c1) != 1 or c1 != c2:
                failures.append(("pillow", (f1, f2), p))
    seams = 0
    for e in range(3):
        a, b = edges(w)[e]
        m = midpoint(a, b)
        f1, f2 = 2 * e, 2 * e + 1
        for p in _sample_segment(m, g, samples):
            c1, c2 = _charts_on(fold, f1, p), _charts_on(fold, f2, p)
            seams += 1
            ok = len(c1) == len(c2) == 1
            if ok:
                (s1, t1), (s2, t2) = next(iter(c1)), next(iter(c2))
                ok = s1 == s2 == 0 and t1 / fold.height_of(f1) == t2 / fold.height_of(f2)
            if not ok:
                failures.append(("seam", (f1, f2), p))
    return GluingReport(internal, pillow, seams, failures)


def _canonical(fold: FoldMap, face: int, st: Point) -> tuple:
    """Representative of a flap point modulo the gluings."""
    s, t = st
    i = face_tip(face)
    h = fold.height_of(face)
    if s == 0:
        # a-end: all six faces meet along the lifted center segments
        e = face // 2
        return ("seam", e, t / h) if t < h else ("top-center",)
    if t == h or s == fold.length_of(face):
        return ("pillow", i, s, t)
    if t == 0:
        return ("base", face, s)
    return ("face", face, s, t)


def injectivity_scan(fold: FoldMap, resolution: int = 24) -> tuple[bool, int]:
    """Images of a rational grid in W are distinct modulo gluings.

    Returns:
        (ok, number of grid points).
    """
    w = fold.triangle
    seen = {}
    n = 0
    for i in range(resolution + 1):
        for j in range(resolution + 1 - i):
            p = lerp(w[0], w[1], Fraction(i, resolution))
            p = add(p, scale(sub(w[2], w[0]), Fraction(j, resolution)))
            face, st = fold(p)
            key = _canonical(fold, face, st)
            n += 1
            if key in seen and seen[key] != p:
                return False, n
            seen[key] = p
    return True, n


@dataclass
class ModulusCertificate:
    """Consecutive dyadic anchors on every half-edge stay within 2h.

    Attributes:
        max_gap: largest chart distance between consecutive anchors.
        two_h: largest 2h over faces.
        third_length: smallest ell/3 over faces.
        oscillation_third: O(W)/3 = max ell / 3.
    """

    max_gap: Fraction
    two_h: Fraction
    third_length: Fraction
    oscillation_third: Fraction
    per_face_ok: bool

    @property
    def ok(self) -> bool:
        return self.per_face_ok and self.max_gap <= self.oscillation_third


def modulus_certificate(fold: FoldMap, depth: int = 16) -> ModulusCertificate:
    """Exact check of d(phi(x_k), phi(x_k+1)) <= 2h <= ell/3 <= O(W)/3."""
    max_gap = Fraction(0)
    per_face = True
    for face in range(6):
        h, ell = fold.height_of(face), fold.length_of(face)
        prev = fold.anchor_chart(face, 1)
        for k in range(2, depth + 1):
            cur = fold.anchor_chart(face, k)
            gap = cur - prev
            per_face &= 0 < gap <= 2 * h <= ell / 3
            max_gap = max(max_gap, gap)
            prev = cur
    two_h = 2 * max(fold.heights)
    return ModulusCertificate(max_gap, two_h, min(fold.lengths) / 3, max(fold.lengths) / 3, per_face)


def boundary_trace_matches(fold: FoldMap, depth: int = 16) -> bool:
    """Fold anchors agree with the collapse anchor schedule on every half-edge."""
    for face in range(6):
        ell, h = fold.length_of(face), fold.height_of(face)
        for k in range(1, depth + 1):
            if fold.anchor_chart(face, k) != ell * half_edge_fraction(Fraction(1, 2**k), h / ell):
                return False
    return True


def fold_line_length(fold: FoldMap) -> float:
    """Total Euclidean length of the segments along which W is folded."""
    w = fold.triangle
    g = centroid(w)
    total = 0.0
    for i in range(3):
        total += math.sqrt(norm2(sub(w[i], g)))
        a, b = edges(w)[i]
        total += math.sqrt(norm2(sub(midpoint(a, b), g)))
    return total


def gasket_modulus_certificates(stage, depth: int = 12) -> tuple[bool, int]:
    """Planar anchor gaps of a collapse stage against 2h and O(W)/3, exactly on squares.

    Returns:
        (ok, number of anchor pairs checked).
    """
    eta = stage.height_ratio
    count = 0
    for w, tri in stage.tripods.items():
        lim = tri.oscillation_sq / 9
        for he in range(6):
            ell_sq = tri.edge_lengths_sq[face_tip(he)]
            prev = stage.anchor(w, he, 1)
            for k in range(2, depth + 1):
                cur = stage.anchor(w, he, k)
                gap = norm2(sub(cur, prev))
                count += 1
                if not (gap <= 4 * eta * eta * ell_sq <= ell_sq / 9 <= lim):
                    return False, count
                prev = cur
    return True, count


def gasket_fold_sweep(stage, level: int | None = None, denominator: int = 1 << 20) -> dict:
    """Distortion of gasket folds with one common height h = min ell / 6.

    Tripod edge lengths are replaced by rational values within 2**-20 of the
    true lengths, so each fold is exact for a tripod of those lengths.

    Returns:
        dict with the largest distortion, the symmetric reference, their
        ratio, and the range of remainder aspects q/h met.
    """
    level = stage.level_max if level is None else level
    ref = distortion_bound(assemble_fold(ROOT_W, (1, 1, 1), Fraction(1, 6)))
    worst = ref
    aspects = []
    for w, tri in stage.tripods.items():
        if w.level > level:
            continue
        lengths = tuple(Fraction(math.sqrt(x)).limit_denominator(denominator) for x in tri.edge_lengths_sq)
        fold = assemble_fold(ROOT_W, lengths)
        worst = max(worst, distortion_bound(fold))
        aspects.extend(q / fold.heights[i] for i, (_, q) in fold.params.items())
    return {
        "reference": ref,
        "worst": worst,
        "factor": float(worst) / float(ref),
        "aspect_min": min(aspects),
        "aspect_max": max(aspects),
    }


# -- rendering --------------------------------------------------------------


def render_svg(fold: FoldMap, size: int = 640) -> str:
    """Source subdivision (left) and the six face tilings (right)."""
    half = size // 2
    pad = 12
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{half}">']
    s = half - 2 * pad

    def src(p):
        x, y = to_euclidean(p)
        bx, by = to_euclidean(fold.triangle[0])
        span = math.sqrt(float(norm2(sub(fold.triangle[1], fold.triangle[0]))))
        return f"{pad + (x - bx) / span * s:.3f},{pad + (math.sqrt(3) / 2 - (y - by) / span) * s:.3f}"

    colors = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"]
    for pc in fold.pieces:
        pts = " ".join(src(p) for p in pc.source)
        parts.append(f'<polygon points="{pts}" fill="{colors[pc.face]}" fill-opacity="0.25" stroke="#333" stroke-width="0.3"/>')
    wmax = float(max(fold.lengths))
    hmax = float(max(fold.heights))
    row = (half - 2 * pad) / 6
    for pc in fold.pieces:
        sx = s / wmax
        sy = min(row * 0.8 / hmax, sx)
        oy = pad + pc.face * row
        pts = " ".join(f"{half + pad + float(a) * sx:.3f},{oy + float(b) * sy:.3f}" for a, b in pc.target)
        parts.append(f'<polygon points="{pts}" fill="{colors[pc.face]}" fill-opacity="0.25" stroke="#333" stroke-width="0.3"/>')
    parts.append("</svg>")
    return "\n".join(parts)

"""Finite-stage flap-planes over a family of tripods.

A stage is the plane slit along tripods G_0..G_{n-1} with six rectangles
attached over each tripod, two per edge.  Rectangle ``2e + s`` of tripod i
hangs over edge e (center to ``tips[e]``); side ``s = 0`` is attached to the
counter-clockwise (left) bank of the slit, ``s = 1`` to the right bank.
Rectangle points carry normalized coordinates (u, v) in [0, 1]^2: u runs from
the center to the tip and v from the slit (v = 0) to the top (v = 1).  The
metric chart of rectangle 2e+s is (u * length_e, v * h_e).

Gluings inside one tripod: the two rectangles of an edge share their top and
their far side (u = 1); rectangle 2e of edge e shares its near side (u = 0)
with rectangle 2e'+1 of the next edge e' counter-clockwise, so all six
top-near corners are one point.  Rectangles of different tripods are never
glued; they only meet through the slit plane at common vertices.

Topology (canonical points, projections, separation, heights) is exact.
Metric quantities use floats, with upper bounds always realized by explicit
paths and lower bounds by the 1-Lipschitz projection to the plane.
"""
from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from .collapse import Tripod, tripod_contacts
from .triq import (
    TriqError,
    _angle_key,
    centroid,
    cross,
    dist2,
    dot,
    lerp,
    norm2,
    on_segment,
    orient,
    segment_intersection,
    segment_parameter,
    sqrt_interval,
    sub,
    to_euclidean,
)

WINDOW_RADIUS = 4.0
DEGREE_BOUND = 6
_TOL = 1e-12


class FlapPlaneError(TriqError):
    """Base class for flap-plane errors."""


class PropertyGViolation(FlapPlaneError):
    """Two tripods meet in more than one point or at two centers."""


class HeightWidthViolation(FlapPlaneError):
    """A rectangle height is not below the length of its tripod edge."""


class WindowExceeded(FlapPlaneError):
    """A query point lies outside the sampling window."""


class DegenerateSeparation(FlapPlaneError):
    """The partitioned-edge separation of a new tripod is zero."""


class ProbeFailure(FlapPlaneError):
    """An LLC connecting path could not be certified."""


def _pt(p) -> tuple:
    return (Fraction(p[0]), Fraction(p[1]))


# -- points -----------------------------------------------------------------


@dataclass(frozen=True, order=True)
class FlapPoint:
    """A point of a stage, in the plane chart or one rectangle chart.

    Attributes:
        tripod: tripod index, or -1 for the plane chart.
        rect: rectangle index 2e+s (0 for the plane chart).
        coords: lattice point for the plane chart, normalized (u, v) otherwise.
    """

    tripod: int
    rect: int
    coords: tuple

    @property
    def is_plane(self) -> bool:
        return self.tripod < 0

    @property
    def edge(self) -> int:
        return self.rect // 2

    @property
    def side(self) -> int:
        return self.rect % 2

    def to_json(self) -> dict:
        cs = [{"num": c.numerator, "den": c.denominator} for c in self.coords]
        if self.is_plane:
            return {"chart": "plane", "coords": cs}
        return {"chart": "rectangle", "tripod": self.tripod, "rect": self.rect, "coords": cs}


def plane_point(p) -> FlapPoint:
    return FlapPoint(-1, 0, _pt(p))


def rect_point(i: int, rect: int, u, v) -> FlapPoint:
    return FlapPoint(i, rect, (Fraction(u), Fraction(v)))


@dataclass(frozen=True)
class _End:
    """An edge germ leaving a vertex of the tripod union."""

    direction: tuple
    kind: str  # "center", "tip" or "through"
    tripod: int
    edge: int
    u: Fraction
    toward_tip: bool


def _angle_cmp(p, q) -> int:
    hp, hq = _angle_key(p), _angle_key(q)
    if hp != hq:
        return hp - hq
    c = cross(p, q)
    return -1 if c > 0 else (1 if c < 0 else 0)


def _rot60(v, sign: int) -> tuple:
    # exact rotation by +-60 degrees in the lattice basis
    a, b = v
    return (-b, a + b) if sign > 0 else (a + b, -a)


@dataclass
class VertexStructure:
    """Sectors around a point of the tripod union and their gluing classes.

    Attributes:
        point: the planar point.
        ends: edge germs in counter-clockwise order.
        sector_class: class id of sector k (between ends k and k+1).
        reps: class id -> sorted rectangle base representatives.
    """

    point: tuple
    ends: list
    sector_class: list
    reps: dict

    def sector_of(self, d) -> int:
        """Index of the open sector containing direction d.

        Raises:
            FlapPlaneError: if d runs along an end that separates classes.
        """
        dirs = [e.direction for e in self.ends]
        for k, a in enumerate(dirs):
            if _angle_cmp(a, d) == 0 and cross(a, d) == 0 and dot(a, d) > 0:
                if self.ends[k].kind == "tip":
                    return k
                raise FlapPlaneError(f"direction {d} runs along a slit at {self.point}")
        n = len(dirs)
        if n == 1:
            return 0
        for k in range(n):
            a, b = dirs[k], dirs[(k + 1) % n]
            if _angle_cmp(a, b) < 0:
                if _angle_cmp(a, d) < 0 < _angle_cmp(b, d):
                    return k
            elif _angle_cmp(a, d) < 0 or _angle_cmp(d, b) < 0:
                return k
        raise FlapPlaneError("sector lookup failed")

    def canonical(self, cls: int) -> FlapPoint:
        i, r, u = self.reps[cls][0]
        return FlapPoint(i, r, (u, Fraction(0)))


# -- stage ------------------------------------------------------------------


def _check_family(tripods: Sequence[Tripod]) -> list:
    _, contacts, bad, _ = tripod_contacts(tripods)
    if bad:
        i, j, pts = bad[0]
        raise PropertyGViolation(f"tripods {i} and {j} meet in {pts}")
    return contacts


def _edge_heights(h) -> tuple:
    if isinstance(h, (tuple, list)):
        if len(h) != 3:
            raise ValueError("per-edge heights need three values")
        return tuple(h)
    return (h, h, h)


def _height_below(h, length_sq) -> bool:
    if isinstance(h, float):
        return 0 < h < math.sqrt(length_sq)
    h = Fraction(h)
    return 0 < h and h * h < length_sq


class FlapPlaneStage:
    """Slit plane plus rectangles over an ordered tripod family.

    Attributes:
        tripods: tripods G_0..G_{n-1}.
        heights: per tripod, heights of its three edges (exact or float).
        window: (center, radius) of the sampling disk, Euclidean.
    """

    def __init__(self, tripods, heights, window=None, contacts=None):
        self.tripods = tuple(tripods)
        self.heights = tuple(_edge_heights(h) for h in heights)
        if len(self.heights) != len(self.tripods):
            raise ValueError("one height per tripod required")
        root_c = to_euclidean(centroid([(0, 0), (1, 0), (0, 1)]))
        self.window = window or (root_c, WINDOW_RADIUS)
        self.contacts = _check_family(self.tripods) if contacts is None else contacts
        self.n = len(self.tripods)
        self._prefix = {}
        self._vs = {}
        self.incident = {}
        for i, t in enumerate(self.tripods):
            self.incident.setdefault(t.center, []).append((i, "center", -1))
            for e, c in enumerate(t.tips):
                self.incident.setdefault(c, []).append((i, "tip", e))
        for i, j, p, _ in self.contacts:
            for k in (i, j):
                t = self.tripods[k]
                if p == t.center or p in t.tips:
                    continue
                e = next(e for e, c in enumerate(t.tips) if on_segment(p, t.center, c))
                # several tips may touch the same edge point
                if (k, "through", e) not in self.incident[p]:
                    self.incident[p].append((k, "through", e))
        self.ccw_next = [self._ccw_order(t) for t in self.tripods]
        self.lengths = [[math.sqrt(l2) for l2 in t.edge_lengths_sq] for t in self.tripods]
        self.hf = [[float(h) for h in hs] for hs in self.heights]
        segs = []
        for i, t in enumerate(self.tripods):
            for e, c in enumerate(t.tips):
                segs.append((*to_euclidean(t.center), *to_euclidean(c)))
        self.seg_f = np.array(segs, dtype=float).reshape(-1, 4)
        self.seg_index = [(i, e) for i in range(self.n) for e in range(3)]
        verts = list(self.incident)
        self.vert_f = np.array([to_euclidean(p) for p in verts], dtype=float).reshape(-1, 2)

    @staticmethod
    def _ccw_order(t: Tripod) -> tuple:
        dirs = [sub(c, t.center) for c in t.tips]
        order = sorted(range(3), key=functools.cmp_to_key(lambda a, b: _angle_cmp(dirs[a], dirs[b])))
        nxt = [0, 0, 0]
        for k in range(3):
            nxt[order[k]] = order[(k + 1) % 3]
        return tuple(nxt)

    # -- structure ----------------------------------------------------------

    def prefix(self, l: int) -> "FlapPlaneStage":
        """Stage built on the first l tripods (shares the contact table)."""
        if l == self.n:
            return self
        if l not in self._prefix:
            cs = [c for c in self.contacts if c[1] < l]
            self._prefix[l] = FlapPlaneStage(self.tripods[:l], self.heights[:l], self.window, cs)
        return self._prefix[l]

    def rectangles(self) -> list:
        """All (tripod, rect) pairs."""
        return [(i, r) for i in range(self.n) for r in range(6)]

    def partner_seam(self, i: int, r: int) -> int:
        e, s = divmod(r, 2)
        nxt = self.ccw_next[i]
        if s == 0:
            return 2 * nxt[e] + 1
        prev = nxt.index(e)
        return 2 * prev

    def gluings(self) -> list:
        """Gluing table: (kind, tripod, rect_a, rect_b)."""
        out = []
        for i in range(self.n):
            for e in range(3):
                out.append(("top", i, 2 * e, 2 * e + 1))
                out.append(("far", i, 2 * e, 2 * e + 1))
                out.append(("seam", i, 2 * e, self.partner_seam(i, 2 * e)))
        return out

    def base_point(self, p: FlapPoint) -> tuple:
        """Projection of p to the plane (exact lattice point)."""
        if p.is_plane:
            return p.coords
        t = self.tripods[p.tripod]
        return lerp(t.center, t.tips[p.edge], p.coords[0])

    def ends_at(self, b, limit: int | None = None) -> list:
        limit = self.n if limit is None else limit
        out = []
        for i, kind, e in self.incident.get(b, ()):
            if i >= limit:
                continue
            t = self.tripods[i]
            if kind == "center":
                for f, c in enumerate(t.tips):
                    out.append(_End(sub(c, b), "center", i, f, Fraction(0), True))
            elif kind == "tip":
                out.append(_End(sub(t.center, b), "tip", i, e, Fraction(1), False))
            else:
                u = segment_parameter(b, t.center, t.tips[e])
                out.append(_End(sub(t.tips[e], b), "through", i, e, u, True))
                out.append(_End(sub(t.center, b), "through", i, e, u, False))
        return sorted(out, key=functools.cmp_to_key(lambda a, c: _angle_cmp(a.direction, c.direction)))

    def vertex_structure(self, b, limit: int | None = None) -> VertexStructure | None:
        """Sector classes at a planar point, or None off the tripod union."""
        limit = self.n if limit is None else limit
        key = (b, limit)
        if key in self._vs:
            return self._vs[key]
        ends = self.ends_at(b, limit)
        if not ends:
            self._vs[key] = None
            return None
        n = len(ends)
        parent = list(range(n))

        def find(k):
            while parent[k] != k:
                parent[k] = parent[parent[k]]
                k = parent[k]
            return k

        for k, end in enumerate(ends):
            if end.kind == "tip":
                parent[find((k - 1) % n)] = find(k)
        roots = sorted({find(k) for k in range(n)})
        sector_class = [roots.index(find(k)) for k in range(n)]
        reps = {c: set() for c in range(len(roots))}
        for k in range(n):
            a, b2 = ends[k], ends[(k + 1) % n]
            s_a = 0 if a.toward_tip else 1
            s_b = 1 if b2.toward_tip else 0
            reps[sector_class[k]].add((a.tripod, 2 * a.edge + s_a, a.u))
            reps[sector_class[k]].add((b2.tripod, 2 * b2.edge + s_b, b2.u))
        vs = VertexStructure(b, ends, sector_class, {c: sorted(r) for c, r in reps.items()})
        self._vs[key] = vs
        return vs

    def canonical(self, p: FlapPoint) -> FlapPoint:
        """Canonical representative of the glued class of p.

        Raises:
            FlapPlaneError: for plane points on a tripod or coordinates out of range.
        """
        if p.is_plane:
            b = _pt(p.coords)
            if self.on_union(b):
                raise FlapPlaneError(f"plane point {b} lies on a tripod")
            return FlapPoint(-1, 0, b)
        i, r = p.tripod, p.rect
        if not (0 <= i < self.n and 0 <= r < 6):
            raise FlapPlaneError(f"no rectangle {r} on tripod {i}")
        u, v = Fraction(p.coords[0]), Fraction(p.coords[1])
        if not (0 <= u <= 1 and 0 <= v <= 1):
            raise FlapPlaneError(f"coordinates {(u, v)} outside the unit chart")
        e = r // 2
        if v == 0:
            return self._base_canonical(i, r, u)
        if v == 1:
            return FlapPoint(i, 0, (u, v)) if u == 0 else FlapPoint(i, 2 * e, (u, v))
        if u == 1:
            return FlapPoint(i, 2 * e, (u, v))
        if u == 0:
            return FlapPoint(i, min(r, self.partner_seam(i, r)), (u, v))
        return FlapPoint(i, r, (u, v))

    def _base_canonical(self, i: int, r: int, u: Fraction) -> FlapPoint:
        t = self.tripods[i]
        b = lerp(t.center, t.tips[r // 2], u)
        vs = self.vertex_structure(b) if b in self.incident else None
        if vs is None:
            return FlapPoint(i, r, (u, Fraction(0)))
        for c, reps in vs.reps.items():
            if (i, r, u) in reps:
                return vs.canonical(c)
        raise FlapPlaneError(f"base point {(i, r, u)} not found at vertex {b}")

    def vertex_class(self, p: FlapPoint) -> tuple | None:
        """(structure, class id) when the canonical p is a vertex-class point."""
        if p.is_plane or p.coords[1] != 0:
            return None
        b = self.base_point(p)
        if b not in self.incident:
            return None
        vs = self.vertex_structure(b)
        for c, reps in vs.reps.items():
            if (p.tripod, p.rect, p.coords[0]) in reps:
                return vs, c
        return None

    def on_union(self, b) -> bool:
        """Exact test whether a planar point lies on some tripod."""
        x, y = to_euclidean(b)
        for k in self._near_segments(x, y, x, y):
            i, e = self.seg_index[k]
            t = self.tripods[i]
            if on_segment(b, t.center, t.tips[e]):
                return True
        return False

    def _near_segments(self, x0, y0, x1, y1, pad=1e-9) -> np.ndarray:
        s = self.seg_f
        if not len(s):
            return np.zeros(0, dtype=int)
        lo_x, hi_x = min(x0, x1) - pad, max(x0, x1) + pad
        lo_y, hi_y = min(y0, y1) - pad, max(y0, y1) + pad
        m = (
            (np.minimum(s[:, 0], s[:, 2]) <= hi_x)
            & (np.maximum(s[:, 0], s[:, 2]) >= lo_x)
            & (np.minimum(s[:, 1], s[:, 3]) <= hi_y)
            & (np.maximum(s[:, 1], s[:, 3]) >= lo_y)
        )
        return np.nonzero(m)[0]

    def shared_points(self, i: int, j: int) -> list:
        """Canonical points lying on rectangles of both tripods i and j."""
        out = []
        for b, inc in self.incident.items():
            if not ({i, j} <= {k for k, _, _ in inc}):
                continue
            vs = self.vertex_structure(b)
            for c, reps in vs.reps.items():
                if {i, j} <= {k for k, _, _ in reps}:
                    out.append(vs.canonical(c))
        return out

    def flap_area(self) -> float:
        """Total rectangle area 2 * sum of length * height."""
        return sum(2 * l * h for ls, hs in zip(self.lengths, self.hf) for l, h in zip(ls, hs))

    def to_json(self) -> dict:
        def num(x):
            if isinstance(x, float):
                return x
            x = Fraction(x)
            return {"num": x.numerator, "den": x.denominator}

        return {
            "tripods": [t.to_json() for t in self.tripods],
            "heights": [[num(h) for h in hs] for hs in self.heights],
            "gluings": [list(g) for g in self.gluings()],
            "contacts": [
                {"tripods": [i, j], "kind": kind, "point": [num(c) for c in p]} for i, j, p, kind in self.contacts
            ],
            "window": {"center": list(self.window[0]), "radius": self.window[1]},
        }


def build_stage(tripods: Sequence[Tripod], heights: Sequence, window=None) -> FlapPlaneStage:
    """Build a flap-plane stage after checking property (G) and heights.

    Args:
        tripods: ordered tripod family.
        heights: one height per tripod (exact rational or float), or a triple
            of per-edge heights.
        window: optional ((x, y), radius) sampling disk.

    Raises:
        PropertyGViolation: if two tripods break property (G).
        HeightWidthViolation: if a height is not below its edge length.
    """
    tripods = list(tripods)
    if len(heights) != len(tripods):
        raise ValueError("one height per tripod required")
    for i, (t, h) in enumerate(zip(tripods, heights)):
        for e, (he, l2) in enumerate(zip(_edge_heights(h), t.edge_lengths_sq)):
            if not _height_below(he, l2):
                raise HeightWidthViolation(f"height {he} of tripod {i} edge {e} is not below its length")
    return FlapPlaneStage(tripods, heights, window)


# -- projections ------------------------------------------------------------


def project(stage: FlapPlaneStage, x: FlapPoint, l: int) -> FlapPoint:
    """Projection P_{k,l} from ``stage`` (k tripods) to its prefix with l tripods.

    Rectangles of tripods with index >= l collapse orthogonally onto their
    slit; the collapsed point takes the side of the slit it came from.
    """
    if not 0 <= l <= stage.n:
        raise ValueError(f"cannot project to stage {l}")
    x = stage.canonical(x)
    if x.is_plane:
        return x
    if x.tripod < l:
        return stage.prefix(l).canonical(x)
    t = stage.tripods[x.tripod]
    e, s = x.edge, x.side
    u = x.coords[0]
    b = lerp(t.center, t.tips[e], u)
    if l == 0 or stage.vertex_structure(b, l) is None:
        return plane_point(b)
    if u == 1:
        d = sub(t.center, b)
    elif u == 0:
        nb = stage.ccw_next[x.tripod][e] if s == 0 else stage.ccw_next[x.tripod].index(e)
        d = (sub(t.tips[e], b)[0] + sub(t.tips[nb], b)[0], sub(t.tips[e], b)[1] + sub(t.tips[nb], b)[1])
    else:
        d = _rot60(sub(t.tips[e], t.center), 1 if s == 0 else -1)
    vs = stage.vertex_structure(b, l)
    return vs.canonical(vs.sector_class[vs.sector_of(d)])


# -- separation and heights -------------------------------------------------


def _point_segment_dist2(p, a, b) -> Fraction:
    ab = sub(b, a)
    t = dot(sub(p, a), ab)
    if t <= 0:
        return dist2(p, a)
    l2 = norm2(ab)
    if t >= l2:
        return dist2(p, b)
    return dist2(p, a) - t * t / l2


def segment_dist2(a, b, c, d) -> Fraction:
    """Exact squared distance between closed segments [a,b] and [c,d]."""
    if segment_intersection(a, b, c, d):
        return Fraction(0)
    return min(
        _point_segment_dist2(a, c, d),
        _point_segment_dist2(b, c, d),
        _point_segment_dist2(c, a, b),
        _point_segment_dist2(d, a, b),
    )


def partitioned_edges(tripods: Sequence[Tripod], m: int) -> list:
    """Sub-edges of G_m cut at contact points and the midpoints between them."""
    t = tripods[m]
    out = []
    for e, c in enumerate(t.tips):
        cuts = {Fraction(0), Fraction(1)}
        for j, other in enumerate(tripods[:m]):
            for a, b in other.segments:
                for p in segment_intersection(t.center, c, a, b):
                    cuts.add(segment_parameter(p, t.center, c))
        cuts = sorted(cuts)
        pts = []
        for lo, hi in zip(cuts, cuts[1:]):
            pts += [lo, (lo + hi) / 2]
        pts.append(Fraction(1))
        for lo, hi in zip(pts, pts[1:]):
            out.append((e, lerp(t.center, c, lo), lerp(t.center, c, hi)))
    return out


def separation_sq(tripods: Sequence[Tripod], m: int) -> tuple:
    """Squared partitioned-edge separation of G_m from G_0..G_{m-1}.

    Edges of G_m are cut at contact points and at midpoints between cuts, so
    every sub-edge touches earlier tripods at most at one end.  The separation
    is the least distance from a sub-edge to an earlier tripod it does not
    touch.

    Returns:
        (delta_sq, witness) with witness (sub-edge, tripod index), or
        (None, None) when m == 0.

    Raises:
        DegenerateSeparation: if G_m breaks property (G) against an earlier
            tripod (some sub-edge would then be pinned at both ends) or the
            separation is zero.
    """
    if m == 0:
        return None, None
    t = tripods[m]
    for j, other in enumerate(tripods[:m]):
        pts = {p for a, b in t.segments for c, d in other.segments for p in segment_intersection(a, b, c, d)}
        ok = len(pts) <= 1 and all(
            (p in t.tips or p in other.tips) and not (p == t.center and p == other.center) for p in pts
        )
        if not ok:
            raise DegenerateSeparation(f"tripod {m} meets tripod {j} in {sorted(pts)}")
    best, wit = None, None
    subs = partitioned_edges(tripods, m)
    boxes = [t.bbox() for t in tripods]
    for e, a, b in subs:
        ax, ay = to_euclidean(a)
        bx, by = to_euclidean(b)
        for j in range(m):
            other = tripods[j]
            if any(segment_intersection(a, b, c, d) for c, d in other.segments):
                continue
            if best is not None:
                x0, y0, x1, y1 = boxes[j]
                gap_x = max(0.0, x0 - max(ax, bx), min(ax, bx) - x1)
                gap_y = max(0.0, y0 - max(ay, by), min(ay, by) - y1)
                if gap_x * gap_x + gap_y * gap_y > float(best) * (1 + 1e-9) + 1e-18:
                    continue
            d2 = min(segment_dist2(a, b, c, d) for c, d in other.segments)
            if best is None or d2 < best:
                best, wit = d2, ((e, a, b), j)
    if best is None:
        return None, None
    if best == 0:
        raise DegenerateSeparation(f"tripod {m} has zero separation")
    return best, wit


@dataclass
class HeightRecord:
    """Constraints behind one scheduled height.

    Attributes:
        height: the chosen dyadic height.
        delta_sq: squared separation, or None for the first tripod.
        caps: constraint name -> exact upper bound on the height.
    """

    height: Fraction
    delta_sq: Fraction | None
    caps: dict


def _sum_lengths(t: Tripod, bits: int) -> tuple:
    lo = hi = Fraction(0)
    for l2 in t.edge_lengths_sq:
        a, b = sqrt_interval(Fraction(l2), bits)
        lo, hi = lo + a, hi + b
    return lo, hi


def _largest_dyadic_below(cap: Fraction, strict: bool) -> Fraction:
    k = max(0, -math.floor(math.log2(cap))) if cap > 0 else 0
    h = Fraction(1, 2**k)
    while h > cap or (strict and h == cap):
        k += 1
        h = Fraction(1, 2**k)
    return h


def height_schedule(tripods: Sequence[Tripod], first_ratio=Fraction(1, 6), bits: int = 64) -> list:
    """Inductive dyadic heights for an ordered tripod family.

    Each new height is the largest power of two meeting (i) the width bound
    h < shortest edge, (ii) halving of the flap area, (iii) flap area at most
    delta^2/4 and (iv) h < delta / (12 (n+1)^2), where delta is the
    partitioned-edge separation.  The first tripod only has the width bound,
    tightened to h <= first_ratio * shortest edge.

    Returns:
        list of HeightRecord, one per tripod.

    Raises:
        DegenerateSeparation: if some separation vanishes.
    """
    out = []
    for m, t in enumerate(tripods):
        lmin_sq = min(t.edge_lengths_sq)
        lmin_lo, _ = sqrt_interval(Fraction(lmin_sq), bits)
        caps = {"width": lmin_lo}
        if m == 0:
            caps["first"] = Fraction(first_ratio) * lmin_lo
            delta_sq = None
        else:
            delta_sq, _ = separation_sq(tripods, m)
            prev = out[-1].height
            plo, _ = _sum_lengths(tripods[m - 1], bits)
            _, shi = _sum_lengths(t, bits)
            caps["decay"] = prev * plo / (2 * shi)
            if delta_sq is not None:
                dlo, _ = sqrt_interval(Fraction(delta_sq), bits)
                caps["measure"] = delta_sq / (8 * shi)
                caps["llc"] = dlo / (12 * (m + 1) ** 2)
        h = _largest_dyadic_below(min(caps.values()), strict=True)
        out.append(HeightRecord(h, delta_sq, caps))
    return out


def verify_schedule(tripods: Sequence[Tripod], heights: Sequence[Fraction], bits: int = 96) -> list:
    """Re-check the four height constraints with independent enclosures.

    Returns:
        list of (index, constraint, ok) rows.
    """
    rows = []
    for m, (t, h) in enumerate(zip(tripods, heights)):
        h = Fraction(h)
        rows.append((m, "width", all(h * h < l2 for l2 in t.edge_lengths_sq)))
        if m == 0:
            continue
        delta_sq, _ = separation_sq(tripods, m)
        _, s_hi = _sum_lengths(t, bits)
        p_lo, _ = _sum_lengths(tripods[m - 1], bits)
        rows.append((m, "decay", h * s_hi <= Fraction(heights[m - 1]) * p_lo / 2))
        if delta_sq is not None:
            rows.append((m, "measure", 2 * h * s_hi <= delta_sq / 4))
            rows.append((m, "llc", h * h * 144 * (m + 1) ** 4 < delta_sq))
    return rows


# -- metric -----------------------------------------------------------------


@dataclass
class DistanceCertificate:
    """Two-sided bound on the stage distance between two points.

    Attributes:
        lower: certified lower bound (at least the planar projection distance).
        upper: length of ``path``.
        path: chain of canonical points; consecutive points share a chart.
        projection: planar distance between the projections.
        excess: upper - projection for the explicit lift, exact when heights are.
        crossed: tripods whose rectangles the explicit lift uses.
    """

    lower: float
    upper: float
    path: list
    projection: float
    excess: object = None
    crossed: frozenset = frozenset()


def _euc(p) -> np.ndarray:
    return np.array(to_euclidean(p), dtype=float)


class MetricStage:
    """Float geometry of a stage: chart memberships, bounds and explicit lifts."""

    def __init__(self, stage: FlapPlaneStage):
        self.stage = stage
        self.hmin = [min(hs) for hs in stage.hf]

    # -- charts -------------------------------------------------------------

    def rect_xy(self, i: int, r: int, u, v) -> tuple:
        e = r // 2
        return (float(u) * self.stage.lengths[i][e], float(v) * self.stage.hf[i][e])

    def memberships(self, p: FlapPoint) -> list:
        """Charts containing canonical p as (chart, xy, plane rule).

        The chart is "P" for the plane or (tripod, rect).  Plane rules restrict
        the directions in which straight planar segments may leave p: None for
        free points, ("side", i, e, s) on a slit bank, ("sectors", list) at
        vertices.
        """
        st = self.stage
        if p.is_plane:
            return [("P", to_euclidean(p.coords), None)]
        i, r = p.tripod, p.rect
        u, v = p.coords
        e = r // 2
        if v == 0:
            vc = st.vertex_class(p)
            if vc is None:
                return [((i, r), self.rect_xy(i, r, u, 0), None), ("P", to_euclidean(st.base_point(p)), ("side", i, e, r % 2))]
            vs, c = vc
            out = [((j, q), self.rect_xy(j, q, w, 0), None) for j, q, w in vs.reps[c]]
            secs = []
            n = len(vs.ends)
            for k in range(n):
                if vs.sector_class[k] == c:
                    secs.append((to_euclidean(vs.ends[k].direction), to_euclidean(vs.ends[(k + 1) % n].direction), n == 1))
            out.append(("P", to_euclidean(vs.point), ("sectors", secs)))
            return out
        if v == 1 and u == 0:
            return [((i, q), self.rect_xy(i, q, 0, 1), None) for q in range(6)]
        if v == 1 or u == 1:
            return [((i, q), self.rect_xy(i, q, u, v), None) for q in (2 * e, 2 * e + 1)]
        if u == 0:
            return [((i, q), self.rect_xy(i, q, 0, v), None) for q in (r, st.partner_seam(i, r))]
        return [((i, r), self.rect_xy(i, r, u, v), None)]

    def tau(self, p: FlapPoint) -> float:
        return 0.0 if p.is_plane else float(p.coords[1]) * self.hmin[p.tripod]

    def boundary_gap(self, p: FlapPoint) -> float:
        """Chart distance from an interior rectangle point to its rectangle boundary."""
        if p.is_plane:
            return 0.0
        u, v = p.coords
        if not (0 < u < 1 and 0 < v < 1):
            return 0.0
        x, y = self.rect_xy(p.tripod, p.rect, u, v)
        l, h = self.stage.lengths[p.tripod][p.edge], self.stage.hf[p.tripod][p.edge]
        return min(x, l - x, y, h - y)

    def lower_bound(self, x: FlapPoint, y: FlapPoint) -> float:
        """Certified lower bound on d(x, y) for canonical points.

        The projection to the plane and the height above it are both
        1-Lipschitz, and rectangles of different tripods meet only at height
        zero, so sqrt(|x~ - y~|^2 + dtau^2) bounds the distance.  A path
        leaving the rectangle of an interior point also pays its boundary gap.
        """
        st = self.stage
        proj = math.dist(to_euclidean(st.base_point(x)), to_euclidean(st.base_point(y)))
        tx, ty = self.tau(x), self.tau(y)
        dt = abs(tx - ty) if (not x.is_plane and x.tripod == y.tripod) else tx + ty
        lb = math.sqrt(proj * proj + dt * dt)
        if not (x.tripod == y.tripod and x.rect == y.rect) or x.is_plane:
            lb = max(lb, self.boundary_gap(x) + self.boundary_gap(y))
        return max(proj, lb)

    def chart_distance(self, x: FlapPoint, y: FlapPoint) -> float | None:
        """Exact distance when x and y lie in one closed rectangle."""
        mx = {c: xy for c, xy, _ in self.memberships(x) if c != "P"}
        best = None
        for c, xy, _ in self.memberships(y):
            if c in mx:
                d = math.dist(mx[c], xy)
                best = d if best is None else min(best, d)
        return best

    def pillow_unfold(self, x: FlapPoint, y: FlapPoint):
        """Shortest straight path after unfolding two faces of one pillow or seam.

        Returns:
            (length, crossing point on the shared side), or None.
        """
        if x.is_plane or y.is_plane or x.tripod != y.tripod:
            return None
        i = x.tripod
        st = self.stage
        (ux, vx), (uy, vy) = x.coords, y.coords
        cands = []
        if x.edge == y.edge:
            e = x.edge
            l, h = st.lengths[i][e], st.hf[i][e]
            sx, sy = float(ux) * l, float(uy) * l
            tx, ty = float(vx) * h, float(vy) * h
            if 2 * h - tx - ty > 0:
                f = Fraction((h - tx) / (2 * h - tx - ty))
                cands.append((math.hypot(sx - sy, 2 * h - tx - ty), FlapPoint(i, 2 * e, (ux + (uy - ux) * f, Fraction(1)))))
            if 2 * l - sx - sy > 0:
                f = Fraction((l - sx) / (2 * l - sx - sy))
                cands.append((math.hypot(2 * l - sx - sy, tx - ty), FlapPoint(i, 2 * e, (Fraction(1), vx + (vy - vx) * f))))
        elif y.rect == st.partner_seam(i, x.rect) and st.hf[i][x.edge] == st.hf[i][y.edge]:
            h = st.hf[i][x.edge]
            sx = float(ux) * st.lengths[i][x.edge]
            sy = float(uy) * st.lengths[i][y.edge]
            if sx + sy > 0:
                f = Fraction(sx / (sx + sy))
                cands.append((math.hypot(sx + sy, float(vx - vy) * h), st.canonical(FlapPoint(i, x.rect, (Fraction(0), vx + (vy - vx) * f)))))
        return min(cands, key=lambda c: c[0]) if cands else None

    # -- explicit lift ------------------------------------------------------

    def _edge_side(self, i: int, e: int, q) -> int:
        t = self.stage.tripods[i]
        return orient(t.center, t.tips[e], q)

    def lift_segment(self, x: FlapPoint, y: FlapPoint):
        """Lift of the planar segment between projections, crossing each slit over its top.

        Returns:
            (excess, path, crossed) with excess the length beyond the planar
            distance, or None in degenerate position (through a vertex, along
            a slit, or starting at a vertex).
        """
        st = self.stage
        xb, yb = st.base_point(x), st.base_point(y)
        if xb == yb:
            return None
        for p in (x, y):
            if not p.is_plane and p.coords[1] == 0 and st.vertex_class(p) is not None:
                return None
            if not p.is_plane and p.coords[0] in (0, 1):
                return None
        excess = 0
        crossed = set()
        path = [x]
        own = set()
        if not x.is_plane:
            i, e, s = x.tripod, x.edge, x.side
            own.add((i, e))
            o = self._edge_side(i, e, yb)
            if o == 0:
                return None
            want = 0 if o > 0 else 1
            h = st.heights[i][e]
            u, v = x.coords
            if want == s or v == 1:
                excess += v * h
            else:
                excess += (1 - v) * h + h
                path.append(FlapPoint(i, 2 * e, (u, Fraction(1))))
            path.append(st.canonical(FlapPoint(i, 2 * e + want, (u, Fraction(0)))))
            crossed.add(i)
        tail = []
        if not y.is_plane:
            i, e, s = y.tripod, y.edge, y.side
            own.add((i, e))
            o = self._edge_side(i, e, xb)
            if o == 0:
                return None
            want = 0 if o > 0 else 1
            h = st.heights[i][e]
            u, v = y.coords
            tail.append(st.canonical(FlapPoint(i, 2 * e + want, (u, Fraction(0)))))
            if want == s or v == 1:
                excess += v * h
            else:
                excess += (1 - v) * h + h
                tail.append(FlapPoint(i, 2 * e, (u, Fraction(1))))
            crossed.add(i)
        if not x.is_plane and not y.is_plane and (x.tripod, x.edge) == (y.tripod, y.edge):
            return None
        hits = []
        ax, ay = to_euclidean(xb)
        bx, by = to_euclidean(yb)
        for k in st._near_segments(ax, ay, bx, by):
            i, e = st.seg_index[k]
            if (i, e) in own:
                continue
            t = st.tripods[i]
            pts = segment_intersection(xb, yb, t.center, t.tips[e])
            if not pts:
                continue
            if len(pts) > 1:
                return None
            p = pts[0]
            if p in st.incident or p == xb or p == yb:
                return None
            o = self._edge_side(i, e, xb)
            s = 0 if o > 0 else 1
            u = segment_parameter(p, t.center, t.tips[e])
            par = segment_parameter(p, xb, yb)
            hits.append((par, i, e, s, u))
            excess += 2 * st.heights[i][e]
            crossed.add(i)
        for _, i, e, s, u in sorted(hits):
            path += [
                FlapPoint(i, 2 * e + s, (u, Fraction(0))),
                FlapPoint(i, 2 * e, (u, Fraction(1))),
                FlapPoint(i, 2 * e + 1 - s, (u, Fraction(0))),
            ]
        path += tail + [y]
        return excess, path, frozenset(crossed)

    def path_length(self, path: list) -> float:
        """Length of a chain measured chart by chart."""
        total = 0.0
        for a, b in zip(path, path[1:]):
            d = self.shared_chart_distance(a, b)
            if d is None:
                raise FlapPlaneError(f"consecutive points {a} and {b} share no chart")
            total += d
        return total

    def shared_chart_distance(self, a: FlapPoint, b: FlapPoint) -> float | None:
        """Straight-line length in a common chart, or None if none is shared."""
        ma = self.memberships(a)
        best = None
        for cb, xyb, rule_b in self.memberships(b):
            for ca, xya, rule_a in ma:
                if ca != cb:
                    continue
                if ca == "P" and not self.plane_visible(xya, rule_a, xyb, rule_b):
                    continue
                d = math.dist(xya, xyb)
                best = d if best is None else min(best, d)
        return best

    def certificate(self, x: FlapPoint, y: FlapPoint) -> DistanceCertificate:
        """Certificate from explicit paths only (no net graph).

        The upper bound is the shortest of: the chart segment when x and y
        share a rectangle (then exact), the plane segment when visible (then
        exact), the slit-crossing lift of the planar segment, and pillow
        unfoldings.  It is infinite, with a path of just the endpoints, when
        none applies.

        Raises:
            WindowExceeded: if a projection leaves the window disk.
        """
        st = self.stage
        x, y = st.canonical(x), st.canonical(y)
        c, rad = st.window
        for p in (x, y):
            if math.dist(to_euclidean(st.base_point(p)), c) > rad:
                raise WindowExceeded(f"{p} lies outside the window")
        proj = math.dist(to_euclidean(st.base_point(x)), to_euclidean(st.base_point(y)))
        if x == y:
            return DistanceCertificate(0.0, 0.0, [x], proj, 0, frozenset())
        exact = self.chart_distance(x, y)
        if exact is not None:
            return DistanceCertificate(exact, exact, [x, y], proj)
        direct = self.shared_chart_distance(x, y)
        if direct is not None:
            return DistanceCertificate(max(proj, direct), direct, [x, y], proj, 0, frozenset())
        lower = self.lower_bound(x, y)
        best, path, excess, crossed = math.inf, [x, y], None, frozenset()
        lift = self.lift_segment(x, y)
        if lift is not None:
            excess, path, crossed = lift
            best = proj + float(excess)
        unf = self.pillow_unfold(x, y)
        if unf is not None and unf[0] < best:
            best, path = unf[0], [x, st.canonical(unf[1]), y]
        return DistanceCertificate(min(lower, best), best, path, proj, excess, crossed)

    # -- plane visibility ---------------------------------------------------

    def _rule_ok(self, xy, rule, q: np.ndarray) -> np.ndarray:
        d = q - np.asarray(xy)
        if rule is None:
            return np.ones(len(q), dtype=bool)
        if rule[0] == "side":
            _, i, e, s = rule
            t = self.stage.tripods[i]
            a = _euc(t.center)
            b = _euc(t.tips[e])
            ab = (b - a) / np.linalg.norm(b - a)
            c = ab[0] * d[:, 1] - ab[1] * d[:, 0]
            scale_ = np.linalg.norm(d, axis=1) + 1e-300
            return c / scale_ > 1e-9 if s == 0 else c / scale_ < -1e-9
        ok = np.zeros(len(q), dtype=bool)
        norm = np.linalg.norm(d, axis=1) + 1e-300
        dn = d / norm[:, None]
        for a, b, full in rule[1]:
            a = np.asarray(a) / math.hypot(*a)
            b = np.asarray(b) / math.hypot(*b)
            ca = a[0] * dn[:, 1] - a[1] * dn[:, 0]
            cb = dn[:, 0] * b[1] - dn[:, 1] * b[0]
            if full:
                ok |= ~((np.abs(ca) < 1e-9) & (dn @ a > 0))
            elif a[0] * b[1] - a[1] * b[0] > 1e-12:
                ok |= (ca > 1e-9) & (cb > 1e-9)
            else:
                cba = b[0] * dn[:, 1] - b[1] * dn[:, 0]
                cda = dn[:, 0] * a[1] - dn[:, 1] * a[0]
                ok |= ~((cba >= -1e-9) & (cda >= -1e-9))
        return ok

    def _unblocked(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Segments p->q[k] whose relative interior avoids every slit."""
        ok = np.ones(len(q), dtype=bool)
        s = self.stage.seg_f
        if not len(s) or not len(q):
            return ok
        lo = np.minimum(q.min(axis=0), p)
        hi = np.maximum(q.max(axis=0), p)
        m = (
            (np.minimum(s[:, 0], s[:, 2]) <= hi[0] + 1e-9)
            & (np.maximum(s[:, 0], s[:, 2]) >= lo[0] - 1e-9)
            & (np.minimum(s[:, 1], s[:, 3]) <= hi[1] + 1e-9)
            & (np.maximum(s[:, 1], s[:, 3]) >= lo[1] - 1e-9)
        )
        r = q - p
        rl = np.linalg.norm(r, axis=1) + 1e-300
        for a0, a1, b0, b1 in s[m]:
            sv = np.array([b0 - a0, b1 - a1])
            sl = math.hypot(*sv)
            ap = np.array([a0, a1]) - p
            denom = r[:, 0] * sv[1] - r[:, 1] * sv[0]
            num_t = ap[0] * sv[1] - ap[1] * sv[0]
            num_w = ap[0] * r[:, 1] - ap[1] * r[:, 0]
            par = np.abs(denom) > 1e-12 * rl * sl
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(par, num_t / denom, -1.0)
                w = np.where(par, num_w / denom, -1.0)
            tol_t = 1e-9 / rl
            tol_w = 1e-9 / sl
            hit = par & (t > tol_t) & (t < 1 - tol_t) & (w >= -tol_w) & (w <= 1 + tol_w)
            # collinear overlap along a slit
            col = ~par & (np.abs(num_t) < 1e-9 * sl)
            if col.any():
                u0 = ((a0 - p[0]) * r[:, 0] + (a1 - p[1]) * r[:, 1]) / rl**2
                u1 = ((b0 - p[0]) * r[:, 0] + (b1 - p[1]) * r[:, 1]) / rl**2
                lo_u, hi_u = np.minimum(u0, u1), np.maximum(u0, u1)
                hit |= col & (hi_u > tol_t) & (lo_u < 1 - tol_t)
            ok &= ~hit
        # passing through a vertex counts as blocked
        v = self.stage.vert_f
        if len(v):
            for vx, vy in v:
                w = np.array([vx, vy]) - p
                tt = (w[0] * r[:, 0] + w[1] * r[:, 1]) / rl**2
                dd = np.abs(w[0] * r[:, 1] - w[1] * r[:, 0]) / rl
                ok &= ~((dd < 1e-9) & (tt > 1e-9 / rl) & (tt < 1 - 1e-9 / rl))
        return ok

    def plane_visible(self, xy, rule, qxy, qrule) -> bool:
        q = np.asarray([qxy], dtype=float)
        if not self._rule_ok(xy, rule, q)[0]:
            return False
        if not self._rule_ok(qxy, qrule, np.asarray([xy], dtype=float))[0]:
            return False
        return bool(self._unblocked(np.asarray(xy, dtype=float), q)[0])


def _dyadic_count(length: float, eps: float) -> int:
    return 1 << max(0, math.ceil(math.log2(max(length / eps, 1.0))))


class DistanceOracle:
    """Upper bounds from shortest paths in an epsilon-net visibility graph.

    Nodes sit on every rectangle boundary at dyadic spacing at most eps (so
    halving eps refines the node set), at every vertex class and on both banks
    of every slit.  Edges join nodes seen straight within one chart: all pairs
    inside a rectangle, and plane pairs whose segment leaves each endpoint on
    its allowed side and avoids the slits.
    """

    def __init__(self, stage: FlapPlaneStage, eps: float):
        self.stage = stage
        self.eps = eps
        self.metric = MetricStage(stage)
        self.nodes = []
        self.index = {}
        self.charts = {}
        self.plane = []
        for p in self._generate():
            self._add(p)
        self._build()

    def _generate(self):
        st = self.stage
        through = {}
        for b, inc in st.incident.items():
            for i, kind, e in inc:
                if kind == "through":
                    t = st.tripods[i]
                    through.setdefault((i, e), []).append(segment_parameter(b, t.center, t.tips[e]))
        for i in range(st.n):
            for e in range(3):
                m = _dyadic_count(st.lengths[i][e], self.eps)
                p = _dyadic_count(st.hf[i][e], self.eps)
                us = sorted({Fraction(k, m) for k in range(m + 1)} | set(through.get((i, e), [])))
                vs = [Fraction(k, p) for k in range(1, p)]
                for s in (0, 1):
                    r = 2 * e + s
                    for u in us:
                        yield FlapPoint(i, r, (u, Fraction(0)))
                        yield FlapPoint(i, r, (u, Fraction(1)))
                    for v in vs:
                        yield FlapPoint(i, r, (Fraction(1), v))
                        yield FlapPoint(i, r, (Fraction(0), v))

    def _add(self, p: FlapPoint) -> int:
        p = self.stage.canonical(p)
        if p in self.index:
            return self.index[p]
        k = len(self.nodes)
        self.index[p] = k
        self.nodes.append(p)
        for chart, xy, rule in self.metric.memberships(p):
            if chart == "P":
                self.plane.append((k, xy, rule))
            else:
                self.charts.setdefault(chart, []).append((k, xy))
        return k

    def _build(self) -> None:
        rows, cols, vals = [], [], []
        for members in self.charts.values():
            ids = np.array([k for k, _ in members])
            xy = np.array([q for _, q in members], dtype=float)
            d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
            a, b = np.triu_indices(len(ids), 1)
            rows.append(ids[a])
            cols.append(ids[b])
            vals.append(d[a, b])
        if self.plane:
            ids = np.array([k for k, _, _ in self.plane])
            xy = np.array([q for _, q, _ in self.plane], dtype=float)
            n = len(ids)
            allow = np.zeros((n, n), dtype=bool)
            for a, (_, q, rule) in enumerate(self.plane):
                allow[a] = self.metric._rule_ok(q, rule, xy)
            allow &= allow.T
            for a in range(n - 1):
                js = np.nonzero(allow[a, a + 1 :])[0] + a + 1
                if not len(js):
                    continue
                js = js[self.metric._unblocked(xy[a], xy[js])]
                rows.append(np.full(len(js), ids[a]))
                cols.append(ids[js])
                vals.append(np.linalg.norm(xy[js] - xy[a], axis=1))
        n = len(self.nodes)
        if rows:
            r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        else:
            r = c = np.zeros(0, dtype=int)
            v = np.zeros(0)
        keep = r != c
        r, c, v = np.minimum(r[keep], c[keep]), np.maximum(r[keep], c[keep]), v[keep]
        # pairs sharing several charts appear more than once; sparse assembly would add them
        order = np.lexsort((v, c, r))
        r, c, v = r[order], c[order], v[order]
        first = np.ones(len(r), dtype=bool)
        first[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
        r, c, v = r[first], c[first], v[first]
        # zero-length edges are stored as a tiny positive weight so the sparse graph keeps them
        v = np.where(v > 0, v, 1e-300)
        g = coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
        self.dist, self.pred = shortest_path(g, method="D", directed=False, return_predecessors=True)

    def _reach(self, p: FlapPoint) -> tuple:
        ids, ds = [], []
        for chart, xy, rule in self.metric.memberships(p):
            if chart == "P":
                if not self.plane:
                    continue
                pid = np.array([k for k, _, _ in self.plane])
                q = np.array([z for _, z, _ in self.plane], dtype=float)
                ok = self.metric._rule_ok(xy, rule, q)
                back = np.array([self.metric._rule_ok(z, r, np.asarray([xy], dtype=float))[0] for _, z, r in self.plane])
                ok &= back
                sel = np.nonzero(ok)[0]
                sel = sel[self.metric._unblocked(np.asarray(xy, dtype=float), q[sel])] if len(sel) else sel
                ids.append(pid[sel])
                ds.append(np.linalg.norm(q[sel] - np.asarray(xy), axis=1))
            else:
                members = self.charts.get(chart, [])
                if members:
                    ids.append(np.array([k for k, _ in members]))
                    ds.append(np.linalg.norm(np.array([z for _, z in members]) - np.asarray(xy), axis=1))
        if not ids:
            return np.zeros(0, dtype=int), np.zeros(0)
        return np.concatenate(ids), np.concatenate(ds)

    def graph_path(self, x: FlapPoint, y: FlapPoint):
        """Shortest graph path from x to y through net nodes, or (inf, [])."""
        ax, dx = self._reach(x)
        ay, dy = self._reach(y)
        if not len(ax) or not len(ay):
            return math.inf, []
        tot = self.dist[np.ix_(ax, ay)] + dx[:, None] + dy[None, :]
        a, b = np.unravel_index(np.argmin(tot), tot.shape)
        best = float(tot[a, b])
        if not math.isfinite(best):
            return math.inf, []
        s, t = int(ax[a]), int(ay[b])
        chain = [t]
        while chain[-1] != s:
            chain.append(int(self.pred[s, chain[-1]]))
        return best, [x] + [self.nodes[k] for k in reversed(chain)] + [y]

    def certificate(self, x: FlapPoint, y: FlapPoint) -> DistanceCertificate:
        """Two-sided distance certificate, tightened by the net graph.

        Raises:
            WindowExceeded: if a projection leaves the window disk.
        """
        cert = self.metric.certificate(x, y)
        if cert.lower == cert.upper:
            return cert
        x, y = cert.path[0], cert.path[-1]
        g, gpath = self.graph_path(x, y)
        if g < cert.upper:
            cert.upper, cert.path = g, gpath
            cert.lower = min(cert.lower, g)
        return cert


def oracle(stage: FlapPlaneStage, eps: float) -> DistanceOracle:
    """Cached distance oracle for a stage and net spacing."""
    cache = stage.__dict__.setdefault("_oracles", {})
    if eps not in cache:
        cache[eps] = DistanceOracle(stage, eps)
    return cache[eps]


def distance(stage: FlapPlaneStage, x: FlapPoint, y: FlapPoint, eps: float = 0.05) -> DistanceCertificate:
    """Certified lower and upper bounds on the stage distance d(x, y)."""
    return oracle(stage, eps).certificate(x, y)


# -- sampling ---------------------------------------------------------------


def _dyadic_unit(rng, bits: int = 20) -> Fraction:
    return Fraction(int(rng.integers(1, 1 << bits)), 1 << bits)


def sample_points(stage: FlapPlaneStage, count: int, rng, plane_fraction: float = 0.5, pad: float = 0.1) -> list:
    """Random canonical points: plane points near the tripods and rectangle points.

    Plane points are dyadic lattice points in the padded bounding box of the
    tripods (resampled if they land on a slit); rectangle points use dyadic
    (u, v) strictly inside a random rectangle.
    """
    if stage.n:
        boxes = np.array([t.bbox() for t in stage.tripods])
        lo = boxes[:, :2].min(axis=0) - pad
        hi = boxes[:, 2:].max(axis=0) + pad
    else:
        lo, hi = np.array([0.0, 0.0]), np.array([1.0, 0.9])
    out = []
    while len(out) < count:
        if stage.n == 0 or rng.random() < plane_fraction:
            px = lo[0] + float(_dyadic_unit(rng)) * (hi[0] - lo[0])
            py = lo[1] + float(_dyadic_unit(rng)) * (hi[1] - lo[1])
            b = 2.0 * py / math.sqrt(3.0)
            a = px - 0.5 * b
            q = (Fraction(round(a * 2**20), 2**20), Fraction(round(b * 2**20), 2**20))
            if stage.on_union(q):
                continue
            out.append(plane_point(q))
        else:
            i = int(rng.integers(stage.n))
            r = int(rng.integers(6))
            out.append(stage.canonical(FlapPoint(i, r, (_dyadic_unit(rng), _dyadic_unit(rng)))))
    return out


def lift_polyline(stage: FlapPlaneStage, x: FlapPoint, y: FlapPoint, waypoints: Sequence) -> list | None:
    """Lift a planar polyline from x~ through waypoints to y~ into the stage.

    Waypoints are planar lattice points off the tripods.  Each piece is lifted
    by climbing over every slit it crosses.

    Returns:
        chain of points whose consecutive members share a chart, or None in
        degenerate position.
    """
    m = _metric(stage)
    pts = [stage.canonical(x)] + [plane_point(w) for w in waypoints] + [stage.canonical(y)]
    chain = [pts[0]]
    for a, b in zip(pts, pts[1:]):
        lift = m.lift_segment(a, b)
        if lift is None:
            return None
        chain += [stage.canonical(p) for p in lift[1][1:]]
    return chain


def _metric(stage: FlapPlaneStage) -> MetricStage:
    m = stage.__dict__.get("_metric")
    if m is None:
        m = stage.__dict__["_metric"] = MetricStage(stage)
    return m


# -- measure ----------------------------------------------------------------


@dataclass
class BallEstimate:
    """Interval estimate of the area of a ball.

    Attributes:
        lower: area of cells certified inside the ball.
        upper: area of cells that may meet the ball.
        plane: (lower, upper) for the slit-plane part.
        flaps: (lower, upper) for the rectangle part.
    """

    lower: float
    upper: float
    plane: tuple
    flaps: tuple


def _seg_cross(p: np.ndarray, q: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple:
    """Proper crossings of segments p->q[k] with [a, b], plus near-degenerate flags."""
    r = q - p
    s = b - a
    denom = r[:, 0] * s[1] - r[:, 1] * s[0]
    ap = a - p
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ap[0] * s[1] - ap[1] * s[0]) / denom
        w = (ap[0] * r[:, 1] - ap[1] * r[:, 0]) / denom
    rl = np.linalg.norm(r, axis=1) + 1e-300
    sl = math.hypot(*s)
    tol = 1e-9
    par = np.abs(denom) <= 1e-12 * rl * sl
    inside = ~par & (t > tol / rl) & (t < 1 - tol / rl) & (w > tol / sl) & (w < 1 - tol / sl)
    near = ~par & (t > -tol / rl) & (t < 1 + tol / rl) & (w > -tol / sl) & (w < 1 + tol / sl) & ~inside
    return inside, near | par & (np.abs(ap[0] * r[:, 1] - ap[1] * r[:, 0]) < tol * rl)


def _planar_upper(stage: FlapPlaneStage, x: FlapPoint, q: np.ndarray, target=None) -> np.ndarray:
    """Lengths of explicit lifts from x to planar points q (one per row).

    With ``target = (i, e, sides, t)`` the points q lie on edge e of tripod i
    and the path continues up rectangle side ``sides[k]`` to height t[k].
    Degenerate configurations get +inf.
    """
    m = _metric(stage)
    xb = _euc(stage.base_point(x))
    up = np.linalg.norm(q - xb, axis=1)
    own = None
    if not x.is_plane:
        i, e, s = x.tripod, x.edge, x.side
        u, v = x.coords
        h = stage.hf[i][e]
        if x.coords[1] == 0 and stage.vertex_class(x) is not None:
            vs, c = stage.vertex_class(x)
            rule = [r for ch, _, r in m.memberships(x) if ch == "P"][0]
            ok = m._rule_ok(tuple(xb), rule, q)
            up = np.where(ok, up, np.inf)
            own = {(k, f) for k, _, f in stage.incident.get(vs.point, ()) for f in ([f] if f >= 0 else range(3))}
        elif u in (0, 1):
            return np.full(len(q), np.inf)
        else:
            t = stage.tripods[i]
            a, b = _euc(t.center), _euc(t.tips[e])
            d = b - a
            c = d[0] * (q[:, 1] - a[1]) - d[1] * (q[:, 0] - a[0])
            side = np.where(c > 0, 0, 1)
            vf = float(v)
            cost = np.where((side == s) | (vf == 1), vf * h, (2 - vf) * h)
            up = up + np.where(np.abs(c) < 1e-12, np.inf, cost)
            own = {(i, e)}
    if target is not None:
        ti, te, sides, tq = target
        t = stage.tripods[ti]
        a, b = _euc(t.center), _euc(t.tips[te])
        d = b - a
        c = d[0] * (xb[1] - a[1]) - d[1] * (xb[0] - a[0])
        arrive = 0 if c > 0 else 1
        h = stage.hf[ti][te]
        climb = np.where(sides == arrive, tq, 2 * h - tq)
        up = up + (np.inf if abs(c) < 1e-12 else climb)
        own = (own or set()) | {(ti, te)}
    for k, (i, e) in enumerate(stage.seg_index):
        if own and (i, e) in own:
            continue
        seg = stage.seg_f[k]
        hit, bad = _seg_cross(xb, q, seg[:2], seg[2:])
        up = up + np.where(hit, 2 * stage.hf[i][e], 0.0)
        up = np.where(bad, np.inf, up)
    return up


def _dist_to_union(stage: FlapPlaneStage, q: np.ndarray) -> np.ndarray:
    best = np.full(len(q), np.inf)
    for a0, a1, b0, b1 in stage.seg_f:
        a = np.array([a0, a1])
        d = np.array([b0 - a0, b1 - a1])
        t = np.clip(((q - a) @ d) / (d @ d), 0, 1)
        best = np.minimum(best, np.linalg.norm(q - a - t[:, None] * d, axis=1))
    return best


def ball_measure(stage: FlapPlaneStage, x: FlapPoint, r: float, resolution: int = 48) -> BallEstimate:
    """Interval estimate of the area of B(x, r) by grid cells.

    A cell may meet the ball when the lower distance bound at its center is
    below r plus the cell radius, and lies inside when an explicit path to
    its center is shorter than r minus the cell radius (plane cells must also
    avoid the slits).  Both bounds are 1-Lipschitz in the chart metric.
    """
    m = _metric(stage)
    x = stage.canonical(x)
    xb = _euc(stage.base_point(x))
    tx = m.tau(x)
    ex = m.boundary_gap(x)
    n = resolution
    side = 2 * r / n
    rho = side / math.sqrt(2)
    g = (np.arange(n) + 0.5) * side - r
    q = np.stack(np.meshgrid(xb[0] + g, xb[1] + g), -1).reshape(-1, 2)
    dq = np.linalg.norm(q - xb, axis=1)
    lb = np.maximum(np.sqrt(dq**2 + tx**2), ex)
    maybe = lb - rho < r
    cand = maybe & (dq + rho < r)
    sure = np.zeros(len(q), dtype=bool)
    if cand.any():
        up = _planar_upper(stage, x, q[cand])
        sure[cand] = (up + rho < r) & (_dist_to_union(stage, q[cand]) > rho)
    cell = side * side
    plane = (float(sure.sum() * cell), float(maybe.sum() * cell))
    flo = fhi = 0.0
    for i in range(stage.n):
        t = stage.tripods[i]
        for e in range(3):
            a, b = _euc(t.center), _euc(t.tips[e])
            d = b - a
            l, h = stage.lengths[i][e], stage.hf[i][e]
            tt = float(np.clip((xb - a) @ d / (d @ d), 0, 1))
            if np.linalg.norm(a + tt * d - xb) >= r:
                continue
            # u-range of the edge within distance r of the center projection
            foot = (xb - a) @ d / (d @ d)
            off = math.sqrt(max(r * r - np.linalg.norm(a + foot * d - xb) ** 2, 0.0)) / l
            u0, u1 = max(0.0, foot - off), min(1.0, foot + off)
            nu = max(2, math.ceil((u1 - u0) * l / side))
            nv = max(2, math.ceil(h / side))
            us = u0 + (np.arange(nu) + 0.5) * (u1 - u0) / nu
            vs = (np.arange(nv) + 0.5) / nv
            uu, vv = [z.ravel() for z in np.meshgrid(us, vs)]
            du, dv = (u1 - u0) * l / nu, h / nv
            crad = math.hypot(du, dv) / 2
            carea = du * dv
            base = a + uu[:, None] * d
            for s in (0, 1):
                rect = 2 * e + s
                tq = vv * h
                sq = uu * l
                gap_q = np.minimum.reduce([sq, l - sq, tq, h - tq])
                proj = np.linalg.norm(base - xb, axis=1)
                same_tripod = (not x.is_plane) and x.tripod == i
                dt = np.abs(tq - tx) if same_tripod else tq + tx
                lbq = np.sqrt(proj**2 + (np.minimum(dt, np.abs(tq - tx)) if same_tripod else dt) ** 2)
                ubq = np.full(len(uu), np.inf)
                if same_tripod and x.rect == rect:
                    xs, xt = m.rect_xy(i, rect, *x.coords)
                    lbq = ubq = np.hypot(sq - xs, tq - xt)
                else:
                    lbq = np.maximum(lbq, ex + gap_q)
                    if same_tripod and x.edge == e:
                        xs, xt = m.rect_xy(i, x.rect, *x.coords)
                        ubq = np.minimum(np.hypot(sq - xs, 2 * h - tq - xt), np.hypot(2 * l - sq - xs, tq - xt))
                    elif same_tripod and rect == stage.partner_seam(i, x.rect) and stage.hf[i][x.edge] == h:
                        xs, xt = m.rect_xy(i, x.rect, *x.coords)
                        ubq = np.hypot(sq + xs, tq - xt)
                    mb = lbq - crad < r
                    if mb.any():
                        pu = _planar_upper(stage, x, base[mb], (i, e, np.full(int(mb.sum()), s), tq[mb]))
                        ubq[mb] = np.minimum(ubq[mb], pu)
                mb = lbq - crad < r
                sb = ubq + crad < r
                flo += float(sb.sum() * carea)
                fhi += float(mb.sum() * carea)
    return BallEstimate(plane[0] + flo, plane[1] + fhi, plane, (flo, fhi))


# -- linear local connectivity ----------------------------------------------

LLC_SINGLE = 48


@dataclass
class LLCReport:
    """Certified connection of two points outside B(x, r).

    Attributes:
        c_achieved: r over the certified least distance from x along the path.
        clearance: that least distance.
        path: connecting chain (rectangle moves then a planar polygon lifted).
        bound: the constant the probe asserts.
    """

    c_achieved: float
    clearance: float
    path: list
    bound: float


def _segment_clearance(m: MetricStage, x: FlapPoint, a: FlapPoint, b: FlapPoint, samples: int = 17) -> float:
    """Certified min of the lower bound d(x, .) along a chart segment a-b in one rectangle."""
    (ua, va), (ub, vb) = a.coords, b.coords
    xa, xb = m.rect_xy(a.tripod, a.rect, ua, va), m.rect_xy(a.tripod, a.rect, ub, vb)
    step = math.dist(xa, xb) / (samples - 1)
    best = math.inf
    for k in range(samples):
        f = Fraction(k, samples - 1)
        p = m.stage.canonical(FlapPoint(a.tripod, a.rect, (ua + (ub - ua) * f, va + (vb - va) * f)))
        best = min(best, m.lower_bound(x, p))
    return best - step / 2


def _descents(stage: FlapPlaneStage, z: FlapPoint, grid: int = 8) -> list:
    """Candidate in-rectangle routes from z down to a slit bank, as point lists."""
    if z.is_plane:
        return [[z]]
    i, r = z.tripod, z.rect
    u, v = z.coords
    e = r // 2
    routes = []
    for k in range(1, grid):
        uk = Fraction(k, grid)
        for s in (r % 2, 1 - r % 2):
            rr = 2 * e + s
            pts = [z]
            if s != r % 2:
                pts += [FlapPoint(i, r, (u, Fraction(1))), FlapPoint(i, rr, (u, Fraction(1)))]
                start = (u, Fraction(1))
            else:
                start = (u, v)
            if uk != start[0]:
                pts.append(FlapPoint(i, rr, (uk, start[1])))
            pts.append(FlapPoint(i, rr, (uk, Fraction(0))))
            routes.append(pts)
    if 0 < u < 1:
        routes.append([z, FlapPoint(i, r, (u, Fraction(0)))])
    return routes


def _route_clearance(m: MetricStage, x: FlapPoint, pts: list) -> float:
    if len(pts) == 1:
        return m.lower_bound(x, m.stage.canonical(pts[0]))
    best = math.inf
    for a, b in zip(pts, pts[1:]):
        if (a.tripod, a.rect) != (b.tripod, b.rect):
            best = min(best, m.lower_bound(x, m.stage.canonical(b)))
            continue
        best = min(best, _segment_clearance(m, x, a, b))
    return best


def _planar_clearance(m: MetricStage, x: FlapPoint, poly: np.ndarray) -> float:
    """Least lower bound along the lift of a planar polygon (Euclidean vertices)."""
    st = m.stage
    xb = _euc(st.base_point(x))
    a, b = poly[:-1], poly[1:]
    d = b - a
    dd = (d * d).sum(1) + 1e-300
    t = np.clip(((xb - a) * d).sum(1) / dd, 0, 1)
    near = float(np.linalg.norm(a + t[:, None] * d - xb, axis=1).min())
    if x.is_plane:
        return near
    # the lift may climb rectangles of x's own tripod, where heights can match
    tx = m.tau(x)
    crosses_own = False
    for e in range(3):
        k = x.tripod * 3 + e
        seg = st.seg_f[k]
        for p, q in zip(a, b):
            hit, bad = _seg_cross(p, q[None, :], seg[:2], seg[2:])
            if hit[0] or bad[0]:
                crosses_own = True
    return near if crosses_own else math.hypot(near, tx)


def _planar_polygon(center: np.ndarray, p: np.ndarray, q: np.ndarray, sides: int = 64) -> np.ndarray:
    """Radial-out, circumscribed-arc, radial-in polygon from p to q about center."""
    rp, rq = np.linalg.norm(p - center), np.linalg.norm(q - center)
    R = max(rp, rq)
    ap = math.atan2(*(p - center)[::-1])
    aq = math.atan2(*(q - center)[::-1])
    sweep = (aq - ap) % (2 * math.pi)
    if sweep > math.pi:
        sweep -= 2 * math.pi
    k = max(1, math.ceil(abs(sweep) / (2 * math.pi / sides)))
    Rc = R / math.cos(abs(sweep) / (2 * k))
    pts = [p, center + R * np.array([math.cos(ap), math.sin(ap)])]
    for j in range(k):
        ang = ap + sweep * (j + 0.5) / k
        pts.append(center + Rc * np.array([math.cos(ang), math.sin(ang)]))
    pts += [center + R * np.array([math.cos(aq), math.sin(aq)]), q]
    return np.array(pts)


def llc_probe(stage: FlapPlaneStage, x: FlapPoint, r: float, z: FlapPoint, w: FlapPoint, bound: float | None = None) -> LLCReport:
    """Join z and w, both outside B(x, r), by a path kept away from x.

    Each endpoint first moves inside its rectangle (sideways, over the top,
    then down) to a slit bank; the two banks are then joined by a planar
    polygon around x~ whose lift only climbs over slits, so its distance from
    x is bounded below through the projection.

    Args:
        bound: constant to assert; defaults to 48 * 2**(n-1) for n tripods.

    Raises:
        ValueError: if z or w is not certified outside B(x, r).
        ProbeFailure: if the achieved constant exceeds the bound.
    """
    m = _metric(stage)
    x, z, w = (stage.canonical(p) for p in (x, z, w))
    for p in (z, w):
        if m.lower_bound(x, p) < r:
            raise ValueError(f"{p} is not certified outside the ball")
    bound = LLC_SINGLE * 2 ** max(stage.n - 1, 0) if bound is None else bound
    xb = _euc(stage.base_point(x))
    best = None
    rz = sorted(((_route_clearance(m, x, pts), pts) for pts in _descents(stage, z)), key=lambda c: -c[0])[:4]
    rw = sorted(((_route_clearance(m, x, pts), pts) for pts in _descents(stage, w)), key=lambda c: -c[0])[:4]
    for cz, pz in rz:
        for cw, pw in rw:
            if best is not None and min(cz, cw) <= best[0]:
                continue
            a, b = _euc(stage.base_point(pz[-1])), _euc(stage.base_point(pw[-1]))
            poly = _planar_polygon(xb, a, b)
            clear = min(cz, cw, _planar_clearance(m, x, poly))
            if best is None or clear > best[0]:
                best = (clear, pz + [("plane", tuple(map(tuple, poly)))] + pw[::-1])
    clear, path = best
    c = math.inf if clear <= 0 else r / clear
    if c > bound:
        raise ProbeFailure(f"achieved constant {c:.3g} exceeds {bound}")
    return LLCReport(c, clear, path, bound)


# -- Gromov-Hausdorff gaps --------------------------------------------------


@dataclass
class GHReport:
    """Distance gaps between stage m and its prefix n on sampled pairs.

    Attributes:
        rows: (lower_gap, upper_gap, point_gap) per pair.
        tail: 6 * sum of heights of tripods n..m-1.
        max_gap: largest point estimate upper_m - upper_n.
        ok: every gap interval meets [0, tail].
    """

    rows: list
    tail: float
    max_gap: float
    ok: bool


def gh_distortion(stage: FlapPlaneStage, n: int, pairs: Sequence | int = 100, seed: int = 0, eps: float | None = None) -> GHReport:
    """Compare distances in ``stage`` with distances of projections in its prefix n.

    Args:
        pairs: list of point pairs of ``stage`` or a number of random pairs.
        eps: net spacing for graph-tightened bounds; None uses explicit paths only.
    """
    if isinstance(pairs, int):
        pts = sample_points(stage, 2 * pairs, np.random.default_rng(seed))
        pairs = list(zip(pts[::2], pts[1::2]))
    low = stage.prefix(n)
    cert_m = oracle(stage, eps).certificate if eps else _metric(stage).certificate
    cert_n = oracle(low, eps).certificate if eps else _metric(low).certificate
    tail = 6 * sum(max(hs) for hs in stage.hf[n:])
    rows, ok = [], True
    for x, y in pairs:
        cm = cert_m(x, y)
        cn = cert_n(project(stage, x, n), project(stage, y, n))
        lo, hi = cm.lower - cn.upper, cm.upper - cn.lower
        rows.append((lo, hi, cm.upper - cn.upper))
        slack = 1e-12 * max(1.0, cm.upper)
        ok &= lo <= tail + slack and hi >= -slack
    finite = [g for _, _, g in rows if math.isfinite(g)]
    return GHReport(rows, tail, max(finite, default=0.0), ok)


# -- Ahlfors regularity -----------------------------------------------------


def ahlfors_upper_constant(degree: int = DEGREE_BOUND) -> float:
    """pi + 24 * N0 * pi + 2 for tripod unions of degree at most N0."""
    return math.pi + 24 * degree * math.pi + 2


@dataclass
class AhlforsReport:
    """Ball measure estimates over sampled centers and radii.

    Attributes:
        rows: (x, y, r, lower, upper, bound, pass) per ball, x and y Euclidean.
        upper_constant: the asserted constant C in area <= C r^2.
        lower_constant: least observed lower / r^2.
        ok: every ball has lower <= C r^2 (upper estimates also reported).
        certified: every ball has upper <= C r^2.
    """

    rows: list
    upper_constant: float
    lower_constant: float
    ok: bool
    certified: bool

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["x", "y", "r", "lower", "upper", "bound", "pass"])
        for row in self.rows:
            wr.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])
        return buf.getvalue()


def regularity_sweep(
    stage: FlapPlaneStage,
    samples: int = 100,
    seed: int = 0,
    resolution: int = 32,
    radii: tuple = (1e-3, 0.5),
    vertex_fraction: float = 0.2,
) -> AhlforsReport:
    """Sample balls (random centers plus highest-degree vertices) and estimate areas."""
    rng = np.random.default_rng(seed)
    const = ahlfors_upper_constant()
    nv = int(samples * vertex_fraction) if stage.n else 0
    centers = sample_points(stage, samples - nv, rng)
    if nv:
        deg = {b: sum(3 if k == "center" else 1 if k == "tip" else 2 for _, k, _ in inc) for b, inc in stage.incident.items()}
        top = sorted(deg, key=lambda b: (-deg[b], b))[: max(1, nv // 2)]
        for k in range(nv):
            vs = stage.vertex_structure(top[k % len(top)])
            centers.append(vs.canonical(int(rng.integers(len(vs.reps)))))
    rows, lows = [], []
    ok = cert = True
    for x in centers:
        r = float(math.exp(rng.uniform(math.log(radii[0]), math.log(radii[1]))))
        est = ball_measure(stage, x, r, resolution)
        b = const * r * r
        px, py = to_euclidean(stage.base_point(x))
        rows.append((px, py, r, est.lower, est.upper, b, est.lower <= b))
        lows.append(est.lower / (r * r))
        ok &= est.lower <= b
        cert &= est.upper <= b
    return AhlforsReport(rows, const, min(lows, default=0.0), ok, cert)

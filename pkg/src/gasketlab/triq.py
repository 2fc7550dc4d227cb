"""Exact arithmetic kernel for the triangular lattice.

Points are stored in the basis e1 = (1, 0), e2 = (1/2, sqrt(3)/2).  In that
basis every gasket vertex has dyadic coordinates and every orientation or
area predicate is rational.  Euclidean lengths come from the quadratic form
a^2 + ab + b^2; Euclidean areas are rational multiples of sqrt(3)/4, which
is the area of the root triangle and the unit used throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import total_ordering
from typing import Iterable, Sequence, Union

SQRT3 = math.sqrt(3.0)
ROOT_AREA = SQRT3 / 4.0

Rational = Union[int, Fraction, "Dyadic"]
Point = tuple  # (Fraction, Fraction) in lattice coordinates


class TriqError(ValueError):
    """Base class for kernel errors."""


class NonOrientationPreserving(TriqError):
    """Raised when an affine piece has non-positive determinant."""


class NonConvexCell(TriqError):
    """Raised when a polygon that must be convex is not."""


class DegeneratePolygon(TriqError):
    """Raised when a polygon has zero area."""


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, Dyadic):
        return x.to_fraction()
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    raise TypeError(f"cannot convert {type(x).__name__} to an exact rational")


@total_ordering
@dataclass(frozen=True)
class Dyadic:
    """Exact number ``num / 2**exp`` kept in canonical form."""

    num: int
    exp: int = 0

    def __post_init__(self) -> None:
        if self.exp < 0:
            raise ValueError("exponent must be non-negative")
        num, exp = self.num, self.exp
        if num == 0:
            exp = 0
        else:
            while exp > 0 and num % 2 == 0:
                num //= 2
                exp -= 1
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "exp", exp)

    @classmethod
    def of(cls, value) -> "Dyadic":
        if isinstance(value, Dyadic):
            return value
        f = _frac(value)
        den = f.denominator
        if den & (den - 1):
            raise ValueError(f"{f} is not a dyadic rational")
        return cls(f.numerator, den.bit_length() - 1)

    def to_fraction(self) -> Fraction:
        return Fraction(self.num, 1 << self.exp)

    def half(self) -> "Dyadic":
        return Dyadic(self.num, self.exp + 1)

    def _coerce(self, other) -> "Dyadic | None":
        if isinstance(other, Dyadic):
            return other
        if isinstance(other, int):
            return Dyadic(other)
        if isinstance(other, Fraction):
            try:
                return Dyadic.of(other)
            except ValueError:
                return None
        return None

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        e = max(self.exp, o.exp)
        return Dyadic((self.num << (e - self.exp)) + (o.num << (e - o.exp)), e)

    __radd__ = __add__

    def __neg__(self) -> "Dyadic":
        return Dyadic(-self.num, self.exp)

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return self + (-o)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return o - self

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return Dyadic(self.num * o.num, self.exp + o.exp)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if isinstance(other, Dyadic):
            return self.num == other.num and self.exp == other.exp
        if isinstance(other, (int, Fraction)):
            return self.to_fraction() == other
        return NotImplemented

    def __lt__(self, other) -> bool:
        return self.to_fraction() < _frac(other)

    def __hash__(self) -> int:
        return hash(self.to_fraction())

    def __float__(self) -> float:
        return self.num / (1 << self.exp) if self.exp < 1000 else float(self.to_fraction())

    def to_json(self) -> dict:
        return {"num": self.num, "exp": self.exp}

    def __repr__(self) -> str:
        return f"Dyadic({self.num}/2^{self.exp})"


@dataclass(frozen=True)
class LatticePoint:
    """Plane point ``a*e1 + b*e2`` with dyadic coordinates."""

    a: Dyadic
    b: Dyadic

    @classmethod
    def of(cls, a, b) -> "LatticePoint":
        return cls(Dyadic.of(a), Dyadic.of(b))

    @property
    def xy(self) -> Point:
        return (self.a.to_fraction(), self.b.to_fraction())

    def euclidean(self) -> tuple[float, float]:
        return to_euclidean(self.xy)

    @property
    def max_exp(self) -> int:
        return max(self.a.exp, self.b.exp)

    def to_json(self) -> list:
        return [self.a.to_json(), self.b.to_json()]


def norm2(p) -> Dyadic | Fraction:
    """Exact squared Euclidean length of a lattice vector."""
    if isinstance(p, LatticePoint):
        return p.a * p.a + p.a * p.b + p.b * p.b
    a, b = _frac(p[0]), _frac(p[1])
    return a * a + a * b + b * b


def to_euclidean(p) -> tuple[float, float]:
    a, b = float(p[0]), float(p[1])
    return (a + 0.5 * b, 0.5 * SQRT3 * b)


def from_euclidean(x: float, y: float) -> tuple[float, float]:
    b = 2.0 * y / SQRT3
    return (x - 0.5 * b, b)


def as_point(p) -> Point:
    if isinstance(p, LatticePoint):
        return p.xy
    return (_frac(p[0]), _frac(p[1]))


def sub(p: Point, q: Point) -> Point:
    return (p[0] - q[0], p[1] - q[1])


def add(p: Point, q: Point) -> Point:
    return (p[0] + q[0], p[1] + q[1])


def scale(p: Point, t) -> Point:
    return (p[0] * t, p[1] * t)


def lerp(p: Point, q: Point, t) -> Point:
    return (p[0] + (q[0] - p[0]) * t, p[1] + (q[1] - p[1]) * t)


def midpoint(p: Point, q: Point) -> Point:
    return lerp(p, q, Fraction(1, 2))


def centroid(points: Sequence[Point]) -> Point:
    n = len(points)
    return (sum((p[0] for p in points), Fraction(0)) / n, sum((p[1] for p in points), Fraction(0)) / n)


def dist2(p: Point, q: Point) -> Fraction:
    return norm2(sub(p, q))


def cross(u: Point, v: Point) -> Fraction:
    """Lattice cross product; Euclidean cross equals this times sqrt(3)/2."""
    return u[0] * v[1] - u[1] * v[0]


def dot(u: Point, v: Point) -> Fraction:
    """Euclidean inner product through the lattice Gram matrix."""
    return u[0] * v[0] + (u[0] * v[1] + u[1] * v[0]) / 2 + u[1] * v[1]


def orient(p: Point, q: Point, r: Point) -> int:
    c = cross(sub(q, p), sub(r, p))
    return (c > 0) - (c < 0)


def signed_area_units(poly: Sequence[Point]) -> Fraction:
    """Signed area in units of sqrt(3)/4 (the root triangle has area 1)."""
    s = Fraction(0)
    n = len(poly)
    for i in range(n):
        s += cross(poly[i], poly[(i + 1) % n])
    return s


def area_units(poly: Sequence[Point]) -> Fraction:
    return abs(signed_area_units(poly))


def euclidean_area(poly: Sequence[Point]) -> float:
    return float(area_units(poly)) * ROOT_AREA


def on_segment(p: Point, a: Point, b: Point) -> bool:
    """True if p lies on the closed segment [a, b]."""
    if cross(sub(b, a), sub(p, a)) != 0:
        return False
    return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def segment_parameter(p: Point, a: Point, b: Point) -> Fraction:
    d = sub(b, a)
    if d[0] != 0:
        return (p[0] - a[0]) / d[0]
    return (p[1] - a[1]) / d[1]


def on_boundary(p: Point, poly: Sequence[Point]) -> bool:
    n = len(poly)
    return any(on_segment(p, poly[i], poly[(i + 1) % n]) for i in range(n))


def in_convex(p: Point, poly: Sequence[Point], strict: bool = False) -> bool:
    """Point-in-convex-polygon test for a counter-clockwise polygon."""
    n = len(poly)
    for i in range(n):
        o = orient(poly[i], poly[(i + 1) % n], p)
        if o < 0 or (strict and o == 0):
            return False
    return True


def ccw(poly: Sequence[Point]) -> list:
    poly = list(poly)
    return poly if signed_area_units(poly) > 0 else poly[::-1]


def drop_collinear(poly: Sequence[Point]) -> list:
    out = list(poly)
    changed = True
    while changed and len(out) > 3:
        changed = False
        for i in range(len(out)):
            if orient(out[i - 1], out[i], out[(i + 1) % len(out)]) == 0:
                del out[i]
                changed = True
                break
    return out


def is_convex(poly: Sequence[Point]) -> bool:
    """Exact convexity test; straight angles are allowed, reflex ones are not."""
    n = len(poly)
    if n < 3 or signed_area_units(poly) == 0:
        return False
    sign = 1 if signed_area_units(poly) > 0 else -1
    for i in range(n):
        if orient(poly[i - 1], poly[i], poly[(i + 1) % n]) * sign < 0:
            return False
    # reject self-overlap: the turning must total exactly one revolution
    return len(set(poly)) == n


def check_polygon(poly: Sequence[Point]) -> list:
    poly = [as_point(p) for p in poly]
    if len(poly) < 3 or signed_area_units(poly) == 0:
        raise DegeneratePolygon(f"zero-area polygon {poly}")
    return poly


def segment_intersection(a: Point, b: Point, c: Point, d: Point) -> list:
    """Intersection of closed segments [a,b] and [c,d] as a list of points.

    Returns [] when disjoint, one point for a crossing or touch, and the two
    endpoints of the overlap when the segments are collinear.
    """
    r = sub(b, a)
    s = sub(d, c)
    denom = cross(r, s)
    if denom == 0:
        if cross(r, sub(c, a)) != 0:
            return []
        pts = [p for p in (a, b, c, d) if on_segment(p, a, b) and on_segment(p, c, d)]
        uniq = []
        for p in pts:
            if p not in uniq:
                uniq.append(p)
        return uniq
    qp = sub(c, a)
    t = cross(qp, s) / denom
    u = cross(qp, r) / denom
    if 0 <= t <= 1 and 0 <= u <= 1:
        return [lerp(a, b, t)]
    return []


def _angle_key(v: Point):
    # exact angular order: half-plane index, then cross-product comparisons
    upper = v[1] > 0 or (v[1] == 0 and v[0] > 0)
    return 0 if upper else 1


def _sort_ccw(center: Point, nbrs: list) -> list:
    import functools

    def cmp(p, q):
        u, v = sub(p, center), sub(q, center)
        hu, hv = _angle_key(u), _angle_key(v)
        if hu != hv:
            return hu - hv
        c = cross(u, v)
        return -1 if c > 0 else (1 if c < 0 else 0)

    return sorted(nbrs, key=functools.cmp_to_key(cmp))


def split_convex(polygon: Sequence, segments: Iterable = ()) -> list:
    """Partition a convex polygon along interior segments.

    The segments and the polygon boundary are overlaid as a planar graph and
    the bounded faces are returned as counter-clockwise polygons with
    collinear vertices removed.

    Args:
        polygon: convex polygon as a sequence of lattice points.
        segments: pairs of points; each must lie inside the polygon.

    Returns:
        List of convex cells whose areas sum exactly to the polygon area.

    Raises:
        NonConvexCell: if a face of the arrangement is not convex.
        DegeneratePolygon: if the input has zero area.
    """
    poly = ccw(check_polygon(polygon))
    if not is_convex(poly):
        raise NonConvexCell("input polygon is not convex")
    segs = [(as_point(p), as_point(q)) for p, q in segments]
    for p, q in segs:
        if not (in_convex(p, poly) and in_convex(q, poly)):
            raise TriqError("segment leaves the polygon")
    if not segs:
        return [drop_collinear(poly)]
    edges = [(poly[i], poly[(i + 1) % len(poly)]) for i in range(len(poly))] + segs
    # split every edge at every intersection point
    cuts = [set([p, q]) for p, q in edges]
    for i in range(len(edges)):
        for j in range(i + 1, len(edges)):
            for x in segment_intersection(*edges[i], *edges[j]):
                cuts[i].add(x)
                cuts[j].add(x)
    adj: dict = {}
    for (p, q), pts in zip(edges, cuts):
        ordered = sorted(pts, key=lambda x: segment_parameter(x, p, q))
        for u, v in zip(ordered, ordered[1:]):
            if u == v:
                continue
            adj.setdefault(u, set()).add(v)
            adj.setdefault(v, set()).add(u)
    order = {v: _sort_ccw(v, list(ns)) for v, ns in adj.items()}
    seen = set()
    cells = []
    for u in order:
        for v in order[u]:
            if (u, v) in seen:
                continue
            face = []
            a, b = u, v
            while (a, b) not in seen:
                seen.add((a, b))
                face.append(a)
                around = order[b]
                idx = around.index(a)
                a, b = b, around[idx - 1]
            if signed_area_units(face) > 0:
                cells.append(face)
    out = []
    for face in cells:
        if len(set(face)) != len(face) or not is_convex(face):
            raise NonConvexCell(f"non-convex cell {face}")
        out.append(drop_collinear(face))
    total = sum((area_units(c) for c in out), Fraction(0))
    if total != area_units(poly):
        raise NonConvexCell("cells do not partition the polygon")
    out.sort(key=lambda c: (min(c), len(c)))
    return out


# ---------------------------------------------------------------------------
# affine maps and distortion

GRAM = ((Fraction(1), Fraction(1, 2)), (Fraction(1, 2), Fraction(1)))


def mat_mul(a, b):
    return tuple(
        tuple(sum((a[i][k] * b[k][j] for k in range(2)), Fraction(0)) for j in range(2)) for i in range(2)
    )


def mat_t(a):
    return ((a[0][0], a[1][0]), (a[0][1], a[1][1]))


def mat_det(a) -> Fraction:
    return a[0][0] * a[1][1] - a[0][1] * a[1][0]


def mat_inv(a):
    d = mat_det(a)
    return ((a[1][1] / d, -a[0][1] / d), (-a[1][0] / d, a[0][0] / d))


def mat_vec(a, v: Point) -> Point:
    return (a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1])


def _as_matrix(m):
    return tuple(tuple(_frac(x) for x in row) for row in m)


def sqrt_interval(x: Fraction, bits: int = 64) -> tuple[Fraction, Fraction]:
    """Rational enclosure of sqrt(x) of width at most 2**-bits."""
    if x < 0:
        raise ValueError("negative radicand")
    p, q = x.numerator, x.denominator
    scale_ = 1 << bits
    lo = math.isqrt(p * q * scale_ * scale_)
    hi = lo if lo * lo == p * q * scale_ * scale_ else lo + 1
    return Fraction(lo, q * scale_), Fraction(hi, q * scale_)


@total_ordering
@dataclass(frozen=True)
class Distortion:
    """Exact value (t + sqrt(t^2 - 4)) / 2 with t = trace(A^T A)/det(A).

    ``ratio_sq`` is t^2, which stays rational for lattice, Euclidean and mixed
    frames; it determines the value exactly. ``lower``/``upper`` enclose the
    value to within 2**-63.
    """

    ratio_sq: Fraction
    lower: Fraction
    upper: Fraction

    @property
    def ratio(self) -> Fraction | None:
        """t itself when it is rational, else None."""
        p, q = self.ratio_sq.numerator, self.ratio_sq.denominator
        rp, rq = math.isqrt(p), math.isqrt(q)
        return Fraction(rp, rq) if rp * rp == p and rq * rq == q else None

    def __float__(self) -> float:
        return float((self.lower + self.upper) / 2)

    def exceeds(self, bound) -> bool:
        return self.lower > _frac(bound)

    def at_most(self, bound) -> bool:
        return self.upper <= _frac(bound)

    def __eq__(self, other) -> bool:
        if isinstance(other, Distortion):
            return self.ratio_sq == other.ratio_sq
        return NotImplemented

    def __lt__(self, other: "Distortion") -> bool:
        return self.ratio_sq < other.ratio_sq

    def __hash__(self) -> int:
        return hash(self.ratio_sq)


def distortion_from_ratio_sq(t2: Fraction) -> Distortion:
    """Distortion from t^2 = (trace/det)^2; both radicals are of rationals."""
    t2 = _frac(t2)
    t_lo, t_hi = sqrt_interval(t2)
    r_lo, r_hi = sqrt_interval(t2 - 4)
    return Distortion(t2, (t_lo + r_lo) / 2, (t_hi + r_hi) / 2)


def distortion_from_ratio(t: Fraction) -> Distortion:
    t = _frac(t)
    lo, hi = sqrt_interval(t * t - 4)
    return Distortion(t * t, (t + lo) / 2, (t + hi) / 2)


@dataclass(frozen=True)
class AffinePiece:
    """Affine map ``x -> A x + t`` on a convex polygon.

    Args:
        linear: 2x2 rational matrix.
        translation: rational vector.
        domain: optional convex polygon.
        frame: "euclidean" if the matrix acts on Cartesian coordinates,
            "lattice" if it acts on lattice coordinates, "mixed" if it takes
            lattice coordinates to Cartesian ones.
    """

    linear: tuple
    translation: tuple = (Fraction(0), Fraction(0))
    domain: tuple | None = None
    frame: str = "euclidean"

    def __post_init__(self) -> None:
        object.__setattr__(self, "linear", _as_matrix(self.linear))
        object.__setattr__(self, "translation", as_point(self.translation))
        if self.domain is not None:
            object.__setattr__(self, "domain", tuple(check_polygon(self.domain)))
        if self.frame not in ("euclidean", "lattice", "mixed"):
            raise ValueError(f"unknown frame {self.frame}")

    @property
    def det(self) -> Fraction:
        return mat_det(self.linear)

    def __call__(self, p) -> Point:
        return add(mat_vec(self.linear, as_point(p)), self.translation)

    def gram_trace(self) -> Fraction:
        a = self.linear
        if self.frame == "euclidean":
            return sum((x * x for row in a for x in row), Fraction(0))
        gi = mat_inv(GRAM)
        if self.frame == "mixed":
            return sum(mat_mul(mat_mul(a, gi), mat_t(a))[i][i] for i in range(2))
        return sum(mat_mul(mat_mul(gi, mat_t(a)), mat_mul(GRAM, a))[i][i] for i in range(2))

    def ratio_sq(self) -> Fraction:
        """(trace(M^T M) / det M)^2 for the Cartesian form M of the map."""
        t = self.gram_trace() / self.det
        # a mixed map carries the factor det(basis) = sqrt(3)/2 into det M
        return t * t * Fraction(3, 4) if self.frame == "mixed" else t * t


def affine_from_triangles(src: Sequence, dst: Sequence, domain=None, frame: str = "lattice") -> AffinePiece:
    """Unique affine map sending triangle src onto dst.

    ``frame`` names the coordinates of src and dst: "lattice" for both,
    "mixed" for lattice src and Cartesian dst, "euclidean" for both.
    """
    s = [as_point(p) for p in src]
    d = [as_point(p) for p in dst]
    sm = (( s[1][0] - s[0][0], s[2][0] - s[0][0]), (s[1][1] - s[0][1], s[2][1] - s[0][1]))
    dm = ((d[1][0] - d[0][0], d[2][0] - d[0][0]), (d[1][1] - d[0][1], d[2][1] - d[0][1]))
    if mat_det(sm) == 0:
        raise DegeneratePolygon("degenerate source triangle")
    lin = mat_mul(dm, mat_inv(sm))
    trans = sub(d[0], mat_vec(lin, s[0]))
    return AffinePiece(lin, trans, tuple(s) if domain is None else domain, frame=frame)


def affine_distortion(piece: AffinePiece) -> Distortion:
    """Quasiconformal distortion ||A||^2 / det A of an affine piece.

    Raises:
        NonOrientationPreserving: if det A <= 0.
    """
    d = piece.det
    if d <= 0:
        raise NonOrientationPreserving(f"determinant {d} is not positive")
    return distortion_from_ratio_sq(piece.ratio_sq())

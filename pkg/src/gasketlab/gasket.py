"""Sierpinski gasket combinatorics on the triangular lattice.

The root v-triangle has lattice vertices (0,0), (1,0), (0,1).  Child ``i`` of
a v-triangle keeps vertex ``i`` and halves the two incident sides.  The
w-triangle of a v-triangle is its removed central triangle; its vertex ``j``
is the midpoint of the side opposite vertex ``j``.  The unbounded component
of the complement is the level-0 w-triangle, ``LEVEL0``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Iterable, Iterator, Sequence, Union

from .triq import (
    LatticePoint,
    Point,
    area_units,
    as_point,
    in_convex,
    lerp,
    midpoint,
    on_segment,
    segment_parameter,
)

ROOT: tuple = ((Fraction(0), Fraction(0)), (Fraction(1), Fraction(0)), (Fraction(0), Fraction(1)))


class GasketError(ValueError):
    pass


class OutsideGasketHull(GasketError):
    """Point lies outside the closed root triangle."""


class DepthExceeded(GasketError):
    """Address prefix too short for the requested index."""


@dataclass(frozen=True, order=True)
class VAddress:
    """Subdivision triangle addressed by its child-choice word."""

    path: tuple = ()

    def __post_init__(self) -> None:
        path = tuple(int(c) for c in self.path)
        if any(c not in (0, 1, 2) for c in path):
            raise ValueError(f"bad v-address {self.path}")
        object.__setattr__(self, "path", path)

    @property
    def level(self) -> int:
        return len(self.path)

    def child(self, i: int) -> "VAddress":
        return VAddress(self.path + (i,))

    def __str__(self) -> str:
        return "v" + "".join(map(str, self.path))


@dataclass(frozen=True)
class WAddress:
    """Complementary triangle; ``parent=None`` is the unbounded component."""

    parent: VAddress | None

    @property
    def level(self) -> int:
        return 0 if self.parent is None else self.parent.level + 1

    @property
    def is_level0(self) -> bool:
        return self.parent is None

    def sort_key(self) -> tuple:
        return (self.level, () if self.parent is None else self.parent.path)

    def __lt__(self, other: "WAddress") -> bool:
        return self.sort_key() < other.sort_key()

    def __str__(self) -> str:
        return "L0" if self.parent is None else "w" + "".join(map(str, self.parent.path))

    @classmethod
    def parse(cls, text: str) -> "WAddress":
        if text == "L0":
            return LEVEL0
        if not text.startswith("w"):
            raise ValueError(f"bad w-address {text!r}")
        return cls(VAddress(tuple(int(c) for c in text[1:])))


LEVEL0 = WAddress(None)


def v_vertices(v: VAddress) -> tuple:
    verts = ROOT
    for i in v.path:
        verts = tuple(verts[j] if j == i else midpoint(verts[i], verts[j]) for j in range(3))
    return verts


def w_vertices(w: WAddress) -> tuple:
    """Vertices of a w-triangle; for LEVEL0 the root corners."""
    if w.parent is None:
        return ROOT
    v = v_vertices(w.parent)
    return tuple(midpoint(v[(j + 1) % 3], v[(j + 2) % 3]) for j in range(3))


def side_owners(v: VAddress) -> tuple:
    """For each vertex j of v, the w-triangle whose boundary holds the side opposite j."""
    owners = (LEVEL0, LEVEL0, LEVEL0)
    cur = VAddress()
    for i in v.path:
        owners = tuple(WAddress(cur) if j == i else owners[j] for j in range(3))
        cur = cur.child(i)
    return owners


def edges(tri: Sequence[Point]) -> list:
    """Edge j of a triangle is the side opposite vertex j, oriented j+1 -> j+2."""
    return [(tri[(j + 1) % 3], tri[(j + 2) % 3]) for j in range(3)]


def half_edges(tri: Sequence[Point]) -> list:
    """Six half-edges (vertex end, midpoint end); index 2*j+s lies on edge j."""
    out = []
    for a, b in edges(tri):
        m = midpoint(a, b)
        out.append((a, m))
        out.append((b, m))
    return out


def iter_v(level: int) -> Iterator[VAddress]:
    for word in product(range(3), repeat=level):
        yield VAddress(word)


def count_w(level: int) -> int:
    return 3 ** (level - 1) if level >= 1 else 1


@dataclass(frozen=True)
class WTriangle:
    address: WAddress
    vertices: tuple

    @property
    def level(self) -> int:
        return self.address.level

    def lattice_vertices(self) -> tuple:
        return tuple(LatticePoint.of(*p) for p in self.vertices)

    def to_json(self) -> dict:
        return {
            "address": str(self.address),
            "level": self.level,
            "vertices": [p.to_json() for p in self.lattice_vertices()],
        }


def enumerate_w(level_max: int) -> list:
    """All w-triangles of levels 1..level_max in level-then-lexicographic order.

    Args:
        level_max: deepest level, at least 1.

    Returns:
        List of WTriangle with exact vertices.
    """
    if level_max < 1:
        raise GasketError("level_max must be >= 1")
    out = []
    # breadth-first so each level reuses its parents' vertices
    frontier = [(VAddress(), ROOT)]
    for _ in range(level_max):
        nxt = []
        for v, verts in frontier:
            w = tuple(midpoint(verts[(j + 1) % 3], verts[(j + 2) % 3]) for j in range(3))
            out.append(WTriangle(WAddress(v), w))
            for i in range(3):
                nxt.append((v.child(i), tuple(verts[j] if j == i else midpoint(verts[i], verts[j]) for j in range(3))))
        frontier = nxt
    return out


def enumerate_v(level: int) -> list:
    frontier = [(VAddress(), ROOT)]
    for _ in range(level):
        frontier = [
            (v.child(i), tuple(vs[j] if j == i else midpoint(vs[i], vs[j]) for j in range(3)))
            for v, vs in frontier
            for i in range(3)
        ]
    return frontier


def covering_area_units(level: int) -> Fraction:
    """Exact total area of the level-n v-triangles, in units of sqrt(3)/4."""
    return sum((area_units(vs) for _, vs in enumerate_v(level)), Fraction(0))


def export_json(triangles: Iterable[WTriangle]) -> str:
    return json.dumps([t.to_json() for t in triangles], sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class VertexType:
    a: WAddress  # the smaller triangle
    b: WAddress  # the larger (lower level) triangle


@dataclass(frozen=True)
class EdgeType:
    b: WAddress
    edge: int
    position: Fraction


@dataclass(frozen=True)
class Interior:
    depth: int


@dataclass(frozen=True)
class InComplement:
    """Point lies in an open w-triangle, hence not in the gasket."""

    w: WAddress


PointClass = Union[VertexType, EdgeType, Interior, InComplement]


def _edge_hit(p: Point, tri: Sequence[Point]) -> tuple | None:
    for j, (a, b) in enumerate(edges(tri)):
        if on_segment(p, a, b):
            return j, segment_parameter(p, a, b)
    return None


def _child_containing(p: Point, verts: Sequence[Point]) -> int:
    for i in range(3):
        child = tuple(verts[j] if j == i else midpoint(verts[i], verts[j]) for j in range(3))
        if in_convex(p, child):
            return i
    raise GasketError("point escaped the subdivision")


def classify(p, depth: int) -> PointClass:
    """Classify a point of the closed root triangle against levels <= depth.

    Raises:
        OutsideGasketHull: if p is outside the root triangle.
    """
    p = as_point(p)
    if not in_convex(p, ROOT):
        raise OutsideGasketHull(f"{p} outside the root triangle")
    if p in ROOT:
        return VertexType(LEVEL0, LEVEL0)
    v = VAddress()
    verts = ROOT
    owners = (LEVEL0, LEVEL0, LEVEL0)
    for _ in range(depth):
        w = WAddress(v)
        wv = tuple(midpoint(verts[(j + 1) % 3], verts[(j + 2) % 3]) for j in range(3))
        if p in wv:
            j = wv.index(p)
            return VertexType(w, owners[j])
        hit = _edge_hit(p, wv)
        if hit is not None:
            return EdgeType(w, hit[0], hit[1])
        if in_convex(p, wv, strict=True):
            return InComplement(w)
        i = _child_containing(p, verts)
        owners = tuple(w if j == i else owners[j] for j in range(3))
        verts = tuple(verts[j] if j == i else midpoint(verts[i], verts[j]) for j in range(3))
        v = v.child(i)
    # point lies on a side of the current v-triangle, or deeper
    for j, (a, b) in enumerate(edges(verts)):
        if on_segment(p, a, b):
            owner = owners[j]
            ot = w_vertices(owner)
            hit = _edge_hit(p, ot)
            return EdgeType(owner, hit[0], hit[1])
    return Interior(depth)


def address_of(p, depth: int) -> VAddress:
    """Child word (length depth) of a nested v-triangle sequence containing p."""
    p = as_point(p)
    if not in_convex(p, ROOT):
        raise OutsideGasketHull(f"{p} outside the root triangle")
    verts = ROOT
    path = []
    for _ in range(depth):
        i = _child_containing(p, verts)
        path.append(i)
        verts = tuple(verts[j] if j == i else midpoint(verts[i], verts[j]) for j in range(3))
    return VAddress(tuple(path))


# ---------------------------------------------------------------------------
# nested sequences


@dataclass
class NestedData:
    """Data of the nested w-triangle sequence at index n."""

    n: int
    w: WAddress
    a: WAddress
    b: WAddress
    k: int | None
    l: int | None
    prev_vertex: Point  # vertex of W(n) on the boundary of W(n-1)
    a_vertex: Point  # vertex of W(n) on the boundary of A(n)
    b_vertex: Point  # vertex of W(n) on the boundary of B(n)
    ordered_half_edge: bool | None = None
    history: list = field(default_factory=list)


def _vertex_on(tri_addr: WAddress, other: WAddress) -> Point | None:
    """A vertex of ``tri_addr`` lying on the closed boundary of ``other``."""
    ov = w_vertices(other)
    for p in w_vertices(tri_addr):
        if any(on_segment(p, a, b) for a, b in edges(ov)):
            return p
    return None


def _ordered_half_edge(prev: WAddress, wn: WAddress, a: WAddress, b: WAddress) -> bool | None:
    if a.is_level0:
        return None
    x_prev = _vertex_on(prev, a)
    x_cur = _vertex_on(wn, a)
    x_ab = _vertex_on(a, b)
    if x_prev is None or x_cur is None or x_ab is None:
        return None
    for end, mid in half_edges(w_vertices(a)):
        if all(on_segment(x, end, mid) for x in (x_prev, x_cur, x_ab)):
            t_prev = segment_parameter(x_prev, end, mid)
            t_cur = segment_parameter(x_cur, end, mid)
            t_ab = segment_parameter(x_ab, end, mid)
            return min(t_prev, t_ab) < t_cur < max(t_prev, t_ab)
    return False


def nested_sequence(target, n: int, depth: int | None = None) -> NestedData:
    """Nested-sequence data at index n for a child word or a point.

    W(n) is the central w-triangle (level n) of the v-triangle V(n) of level
    n-1 on the sequence.  A(n), B(n) are the w-triangles carrying the two
    vertices of W(n) that do not lie on W(n-1), with level(B) <= level(A).

    Args:
        target: a VAddress / word, or a point of the root triangle.
        n: index, at least 2.
        depth: descent depth used when target is a point.

    Raises:
        DepthExceeded: if a word target is shorter than n.
    """
    if n < 2:
        raise GasketError("n must be >= 2")
    if isinstance(target, VAddress):
        word = target.path
    elif isinstance(target, (str, list)) or (isinstance(target, tuple) and target and isinstance(target[0], int)):
        word = VAddress(tuple(int(c) for c in target)).path
    else:
        word = address_of(target, depth if depth is not None else n).path
    if len(word) < n:
        raise DepthExceeded(f"prefix of length {len(word)} shorter than {n}")
    owners = (LEVEL0, LEVEL0, LEVEL0)
    cur = VAddress()
    history = []
    data = None
    for m in range(1, n):
        i = word[m - 1]
        prev = WAddress(cur)
        owners = tuple(prev if j == i else owners[j] for j in range(3))
        cur = cur.child(i)
        idx = m + 1
        wn = WAddress(cur)
        wv = w_vertices(wn)
        others = [j for j in range(3) if j != i]
        o1, o2 = owners[others[0]], owners[others[1]]
        if o1.level > o2.level or (o1.level == o2.level and o1 < o2):
            ja, jb = others[0], others[1]
        else:
            ja, jb = others[1], others[0]
        a, b = owners[ja], owners[jb]
        data = NestedData(
            n=idx,
            w=wn,
            a=a,
            b=b,
            k=a.level if not a.is_level0 else None,
            l=b.level if not b.is_level0 else None,
            prev_vertex=wv[i],
            a_vertex=wv[ja],
            b_vertex=wv[jb],
        )
        history.append((idx, a, b))
    data.ordered_half_edge = _ordered_half_edge(WAddress(VAddress(word[: n - 2])), data.w, data.a, data.b)
    data.history = history
    return data


def dyadic_edge_points(w: WAddress, half_edge: int, k: int) -> LatticePoint:
    """Point at parameter 2^-k of the edge, measured from the half-edge's vertex end.

    k = 1 gives the edge midpoint; larger k approach the vertex.
    """
    if k < 1:
        raise GasketError("k must be >= 1")
    tri = w_vertices(w)
    e, s = divmod(half_edge, 2)
    a, b = edges(tri)[e]
    start, other = (a, b) if s == 0 else (b, a)
    return LatticePoint.of(*lerp(start, other, Fraction(1, 2**k)))


def adjacency(w1: WAddress, w2: WAddress) -> bool:
    """True if a vertex of one triangle lies on the closed boundary of the other."""
    if w1 == w2:
        return False
    return _vertex_on(w1, w2) is not None or _vertex_on(w2, w1) is not None

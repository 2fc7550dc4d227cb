from __future__ import annotations

import json
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasketlab.gasket import (
    LEVEL0,
    ROOT,
    DepthExceeded,
    EdgeType,
    InComplement,
    Interior,
    OutsideGasketHull,
    VAddress,
    VertexType,
    WAddress,
    adjacency,
    classify,
    count_w,
    covering_area_units,
    dyadic_edge_points,
    edges,
    enumerate_w,
    export_json,
    nested_sequence,
    w_vertices,
)
from gasketlab.triq import on_segment


def _brute_w(level_max):
    """Independent recursion: central triangles of every subdivision triangle."""
    out = {}

    def rec(word, a, b, c):
        if len(word) >= level_max:
            return
        mab, mbc, mca = ((a[0] + b[0]) / 2, (a[1] + b[1]) / 2), ((b[0] + c[0]) / 2, (b[1] + c[1]) / 2), ((c[0] + a[0]) / 2, (c[1] + a[1]) / 2)
        out[word] = frozenset([mab, mbc, mca])
        rec(word + "0", a, mab, mca)
        rec(word + "1", mab, b, mbc)
        rec(word + "2", mca, mbc, c)

    rec("", *ROOT)
    return out


def test_level_one_triangle():
    (t,) = enumerate_w(1)
    assert set(t.vertices) == {(F(1, 2), F(0)), (F(0), F(1, 2)), (F(1, 2), F(1, 2))}


def test_counts_and_exponents():
    assert len(enumerate_w(3)) == 13
    tris = enumerate_w(8)
    assert len(tris) == sum(3 ** (n - 1) for n in range(1, 9))
    assert max(p.max_exp for t in tris for p in t.lattice_vertices()) <= 8
    for n in range(1, 9):
        assert sum(1 for t in tris if t.level == n) == count_w(n)


def test_enumeration_matches_brute_recursion():
    brute = _brute_w(6)
    got = {str(t.address)[1:]: frozenset(t.vertices) for t in enumerate_w(6)}
    assert got == brute


def test_enumeration_order_is_lexicographic_per_level():
    tris = enumerate_w(4)
    keys = [t.address.sort_key() for t in tris]
    assert keys == sorted(keys)


@pytest.mark.parametrize("n", range(0, 7))
def test_covering_area(n):
    assert covering_area_units(n) == F(3, 4) ** n


def test_json_export_shape():
    data = json.loads(export_json(enumerate_w(2)))
    assert data[0]["address"] == "w" and data[0]["level"] == 1
    assert {"num": 1, "exp": 1} in data[0]["vertices"][0] or {"num": 0, "exp": 0} in data[0]["vertices"][0]


def test_classify_root_edge_midpoint():
    c = classify((F(1, 2), F(0)), 6)
    assert c == VertexType(WAddress(VAddress()), LEVEL0)


def test_classify_dyadic_point_on_bottom_edge():
    # 5/16 is a vertex of a level-4 triangle; above that depth it is edge type
    assert classify((F(5, 16), F(0)), 3) == EdgeType(LEVEL0, 2, F(5, 16))
    c = classify((F(5, 16), F(0)), 6)
    assert isinstance(c, VertexType) and c.a.level == 4 and c.b == LEVEL0
    assert classify((F(1, 256), F(0)), 6) == EdgeType(LEVEL0, 2, F(1, 256))


def test_classify_periodic_fixed_point_is_interior():
    # fixed point of the child maps 0 then 1 then 2 repeated
    p = (F(2, 7), F(1, 7))
    assert classify(p, 12) == Interior(12)
    for w in _brute_w(12).values():
        tri = list(w)
        assert not any(on_segment(p, tri[i], tri[j]) for i in range(3) for j in range(i + 1, 3))


def test_classify_errors_and_complement():
    with pytest.raises(OutsideGasketHull):
        classify((F(1), F(1)), 3)
    assert classify((F(1, 3), F(1, 3)), 3) == InComplement(WAddress(VAddress()))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 255), st.integers(0, 255))
def test_classify_stable_under_refinement(i, j):
    p = (F(i, 256), F(j, 256))
    if p[0] + p[1] > 1:
        return
    shallow = classify(p, 4)
    deep = classify(p, 9)
    if isinstance(shallow, (VertexType, InComplement)):
        assert deep == shallow
    if isinstance(shallow, EdgeType) and not isinstance(deep, EdgeType):
        assert isinstance(deep, VertexType) and deep.b == shallow.b


def _incidence_oracle(word, n):
    """Triangles of level < n whose closed boundary holds each vertex of W(n)."""
    wn = WAddress(VAddress(word[: n - 1]))
    candidates = [LEVEL0] + [WAddress(VAddress(tuple(int(c) for c in k))) for k in _brute_w(n - 1)]
    found = []
    for p in w_vertices(wn):
        owners = [c for c in candidates if any(on_segment(p, a, b) for a, b in edges(w_vertices(c)))]
        found.append(owners)
    return found


@pytest.mark.parametrize("word,n", [((0, 1, 2) * 4, 9), ((0,) * 10, 8), ((0, 1) * 6, 10), ((2, 2, 1, 0, 1, 2, 0, 0, 1), 7)])
def test_nested_sequence_against_incidence_oracle(word, n):
    d = nested_sequence(word, n)
    owners = _incidence_oracle(word, n)
    prev = WAddress(VAddress(word[: n - 2]))
    # one vertex on W(n-1); the other two on A(n), B(n)
    assert sum(prev in o for o in owners) == 1
    rest = [o for o in owners if prev not in o]
    assert {frozenset(o) for o in rest} == {frozenset([d.a]), frozenset([d.b])} or (d.a == d.b == LEVEL0)
    assert d.b.level <= d.a.level


def test_nested_sequence_periodic_interior_case():
    d = nested_sequence((0, 1, 2) * 4, 9)
    assert (d.k, d.l) == (7, 6)
    assert d.l < d.k < d.n - 1
    assert d.ordered_half_edge is True
    for n in range(4, 12):
        e = nested_sequence((0, 1, 2) * 4, n)
        assert e.l < e.k < n - 1 and e.ordered_half_edge


def test_nested_sequence_vertex_type_eventually_constant():
    # the corner of W(v0) at the root edge midpoint: approach it through children 1,0,0,0...
    word = (0,) + (1,) + (0,) * 10
    tail = [nested_sequence(word, n) for n in range(5, 12)]
    assert len({(t.a, t.b) for t in tail}) == 1


def test_nested_sequence_edge_type_bottom_edge():
    p = (F(1, 3), F(0))
    ks = []
    for n in range(4, 14):
        d = nested_sequence(p, n, depth=n)
        assert d.b == LEVEL0
        ks.append(d.k)
    assert all(a < b for a, b in zip(ks, ks[1:]))


def test_nested_sequence_depth_exceeded():
    with pytest.raises(DepthExceeded):
        nested_sequence((0, 1), 5)


def test_dyadic_edge_points():
    w = WAddress(VAddress())
    a, b = edges(w_vertices(w))[0]
    mid = ((a[0] + b[0]) / 2, (a[1] + b[1]) / 2)
    assert dyadic_edge_points(w, 0, 1).xy == mid
    q = dyadic_edge_points(w, 0, 2)
    assert q.xy == (a[0] + (b[0] - a[0]) / 4, a[1] + (b[1] - a[1]) / 4)
    # the quarter point is a vertex of a smaller triangle
    assert any(q.xy in t.vertices for t in enumerate_w(4))
    deep = dyadic_edge_points(WAddress(VAddress((0, 1))), 3, 5)
    assert deep.max_exp <= 8


def test_adjacency_examples():
    w1 = WAddress(VAddress())
    w2 = WAddress(VAddress((0,)))
    assert adjacency(w1, w2)
    assert not adjacency(WAddress(VAddress((0,))), WAddress(VAddress((1,))))
    assert adjacency(WAddress(VAddress((0, 0))), LEVEL0)


def test_adjacency_implies_distinct_levels():
    tris = [LEVEL0] + [t.address for t in enumerate_w(4)]
    for i, a in enumerate(tris):
        for b in tris[i + 1:]:
            if adjacency(a, b):
                assert a.level != b.level

from __future__ import annotations

import json
import math
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasketlab.collapse import (
    CollinearInput,
    PointOnWrongSide,
    UQuad,
    area_by_level,
    boundary_monotone,
    build_collapse,
    canonical_tripod,
    export_json,
    interior_envelope,
    oscillation_decay,
    render_svg,
    split_u,
    tripod_family_checks,
    vertex_fibers,
)
from gasketlab.gasket import VAddress, WAddress
from gasketlab.triq import area_units, in_convex, is_convex, lerp, norm2, split_convex, sub, to_euclidean

SQUARE = ((F(0), F(0)), (F(1), F(0)), (F(1), F(1)), (F(0), F(1)))


@pytest.fixture(scope="module")
def stage5():
    return build_collapse(5)


def test_canonical_tripod_equilateral():
    t = canonical_tripod((0, 0), (1, 0), (0, 1))
    assert t.center == (F(1, 3), F(1, 3))
    assert len(set(t.edge_lengths_sq)) == 1


def test_canonical_tripod_nearly_collinear():
    pts = [(F(0), F(0)), (F(1), F(0)), (F(1, 2), F(1, 1000))]
    t = canonical_tripod(*pts)
    fl = [math.dist(to_euclidean(t.center), to_euclidean(p)) for p in pts]
    assert math.isclose(t.oscillation, max(fl), rel_tol=1e-12)
    assert max(fl) > 50 * min(fl)
    assert t.oscillation_sq == max(norm2(sub(p, t.center)) for p in pts)


def test_canonical_tripod_collinear():
    with pytest.raises(CollinearInput):
        canonical_tripod((0, 0), (1, 0), (2, 0))


def test_split_square_matches_planar_overlay():
    u = UQuad(SQUARE, 1)
    c2 = (F(1), F(1, 2))
    c3 = (F(1, 2), F(1))
    tripod, kids = split_u(u, c2, c3)
    assert sum(k.area for k in kids) == area_units(SQUARE)
    assert all(len(k.vertices) == 4 and is_convex(k.vertices) for k in kids)
    # independent oracle: overlay the tripod on the square
    cells = split_convex(SQUARE, tripod.segments)
    assert {frozenset(c) for c in cells} == {frozenset(k.vertices) for k in kids}


def test_split_errors():
    u = UQuad(SQUARE, 1)
    with pytest.raises(PointOnWrongSide):
        split_u(u, (F(1, 2), F(0)), (F(1, 2), F(1)))
    with pytest.raises(PointOnWrongSide):
        split_u(u, (F(1), F(1, 4)), (F(1), F(3, 4)))
    with pytest.raises(PointOnWrongSide):
        split_u(u, (F(1), F(1)), (F(1, 2), F(1)))


def _random_quad(ts):
    # one point interior to each side of the lattice unit square is always convex
    a, b, c, d = ts
    return ((a, F(0)), (F(1), b), (1 - c, F(1)), (F(0), 1 - d))


params = st.fractions(min_value=F(1, 16), max_value=F(15, 16), max_denominator=16)


@settings(max_examples=60, deadline=None)
@given(st.tuples(params, params, params, params), params, params, params, params)
def test_resplit_children(ts, s2, s3, r2, r3):
    quad = _random_quad(ts)
    u = UQuad(quad, 1)
    c1, p1, p2, p3 = quad
    _, kids = split_u(u, lerp(p1, p2, s2), lerp(p2, p3, s3))
    assert sum(k.area for k in kids) == u.area
    for k in kids:
        _, p1k, p2k, p3k = k.vertices
        _, grand = split_u(k, lerp(p1k, p2k, r2), lerp(p2k, p3k, r3))
        assert sum(g.area for g in grand) == k.area


def test_level_one_reproduces_midpoint_tripod():
    stage = build_collapse(1)
    t = stage.tripods[WAddress(VAddress())]
    assert t.center == (F(1, 3), F(1, 3))
    assert set(t.tips) == {(F(1, 2), F(0)), (F(0), F(1, 2)), (F(1, 2), F(1, 2))}
    assert stage.uquads[VAddress()].vertices == ((0, 0), (1, 0), (0, 1))
    assert t.oscillation_sq == F(1, 12)


def test_area_conservation_level_four():
    stage = build_collapse(4)
    assert len(stage.quads_at(4)) == 81
    assert all(total == 1 for total in area_by_level(stage).values())


def test_children_nest_in_parent(stage5):
    for v, u in stage5.uquads.items():
        if len(v.path) >= 5:
            continue
        kids = [stage5.uquads[v.child(i)] for i in range(3)]
        assert sum(k.area for k in kids) == u.area
        assert all(in_convex(p, u.vertices) for k in kids for p in k.vertices)
        assert all(len(k.vertices) == 4 and is_convex(k.vertices) for k in kids)


def test_marked_vertex_is_parent_center(stage5):
    for v, u in stage5.uquads.items():
        if v.path:
            parent = WAddress(VAddress(v.path[:-1]))
            assert u.vertices[0] == stage5.tripods[parent].center


def test_tripod_tips_are_images_of_vertices(stage5):
    for w, t in stage5.tripods.items():
        if w.level == 1:
            continue
        from gasketlab.gasket import side_owners

        owners = side_owners(w.parent)
        for j in range(3):
            assert t.tips[j] == stage5.image(owners[j], stage5.w_vertices(w)[j])


def test_family_single_tripod():
    rep = tripod_family_checks(build_collapse(1))
    assert rep.tripods == 1 and rep.pairs_checked == 0 and rep.property_g and rep.max_degree == 3


def test_family_property_g_to_level_five(stage5):
    rep = tripod_family_checks(stage5)
    assert rep.property_g and rep.max_degree <= 6
    assert rep.contacts["tip-on-edge"] > 0 and rep.contacts["tip-on-center"] > 0


def test_vertex_fibers_are_single_collapses(stage5):
    rep = vertex_fibers(stage5)
    assert rep.ok and rep.collisions > 0 and rep.max_fiber == 3


def test_boundary_monotone():
    assert boundary_monotone(build_collapse(3), depth=10)


def test_oscillation_decay(stage5):
    decay = oscillation_decay(stage5)
    assert decay[0][1] == F(1, 12)
    sq = [d[1] for d in decay]
    assert all(b < a for a, b in zip(sq[1:], sq[2:]))


def test_interior_envelope(stage5):
    rows = interior_envelope(stage5, (0, 1, 2) * 3)
    assert rows and all(o <= b for _, o, b in rows)


def test_json_and_svg():
    stage = build_collapse(2)
    data = json.loads(export_json(stage))
    assert len(data["tripods"]) == 4 and len(data["uquads"]) == 13
    assert set(data["tripods"][0]) == {"address", "c1", "c2", "c3", "a"}
    svg = render_svg(stage)
    assert svg.startswith("<svg") and svg.count("<polygon") == 9

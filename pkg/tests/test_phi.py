from __future__ import annotations

import json
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasketlab.fold import assemble_fold
from gasketlab.flapplane import plane_point
from gasketlab.gasket import _vertex_on, adjacency, dyadic_edge_points, enumerate_w, iter_v
from gasketlab.phi import (
    ChartMismatch,
    CollisionFound,
    PhiStage,
    boundary_compatibility,
    build_phi,
    continuity_certificates,
    distortion_recheck,
    exact_vertices,
    injectivity_scan,
    measure_blowup,
    render_svg,
    sample_points,
)
from gasketlab.triq import area_units


@pytest.fixture(scope="module")
def phi1():
    return build_phi(1)


@pytest.fixture(scope="module")
def phi3():
    return build_phi(3)


def test_unbounded_component_fixed(phi3):
    for p in [(F(-1), F(-1)), (F(2), F(3, 7)), (F(1, 2), F(-1, 9))]:
        assert phi3(p) == plane_point(p)
        assert [label for label, _ in phi3.evaluate_all(p)] == ["plane"]


def test_level_one_midpoints_lift_to_barycenter(phi1):
    t = phi1.flap.tripods[0]
    verts = phi1.collapse.w_vertices(phi1.addresses[0])
    for j in range(3):
        m = tuple((a + b) / 2 for a, b in zip(verts[(j + 1) % 3], verts[(j + 2) % 3]))
        img = phi1.evaluate_consistent(m)
        assert img.coords == (0, 0) and phi1.flap.base_point(img) == t.center
    # the three midpoints land in the three distinct sectors at the center
    imgs = {phi1(tuple((a + b) / 2 for a, b in zip(verts[(j + 1) % 3], verts[(j + 2) % 3]))) for j in range(3)}
    assert len(imgs) == 3


def test_vertex_shared_by_adjacent_triangles(phi3):
    ws = [t.address for t in enumerate_w(3)]
    pairs = 0
    for a in ws:
        for b in ws:
            if a < b and adjacency(a, b):
                x = _vertex_on(a, b) or _vertex_on(b, a)
                img = phi3.evaluate_consistent(x)
                assert phi3.flap.shared_points(phi3.index[a], phi3.index[b]) == [img]
                pairs += 1
    assert pairs > 0


def test_tripod_orientation_matches_folds(phi3):
    # fold seams glue face 2e to 2e+1, i.e. tip e+1 to the next tip counter-clockwise
    assert all(nxt == (1, 2, 0) for nxt in phi3.flap.ccw_next)


def test_scaled_folds_equal_direct_folds(phi3):
    for w in phi3.addresses[::3]:
        direct = assemble_fold(phi3.collapse.w_vertices(w), (1, 1, 1), height_ratio=phi3.height_ratio)
        mine = phi3.fold_of(w)
        key = lambda f: [(p.source, p.target, p.face, p.affine.linear, p.affine.translation, p.sign) for p in f.pieces]  # noqa: E731
        assert key(mine) == key(direct)


def test_injectivity_scan_level_four():
    stage = build_phi(4)
    rep = injectivity_scan(stage, 2000, seed=5)
    assert rep.ok and rep.exact_points == len(exact_vertices(4)) == 123
    assert rep.charts_checked > rep.exact_points


def test_exact_vertex_count():
    # root corners plus 3 (3^n - 1) / 2 distinct midpoints
    assert [len(exact_vertices(n)) for n in range(1, 5)] == [6, 15, 42, 123]


def test_collision_detected(phi1):
    class Constant(PhiStage):
        def __call__(self, p):
            return plane_point((F(5), F(5)))

    fake = Constant(phi1.collapse, phi1.flap, 1)
    with pytest.raises(CollisionFound):
        injectivity_scan(fake, 10)


def test_chart_mismatch_detected(phi1):
    class Skewed(PhiStage):
        def _eval_chart(self, p, chart):
            img = super()._eval_chart(p, chart)
            return plane_point((F(9), F(9))) if chart[0] == "v" else img

    fake = Skewed(phi1.collapse, phi1.flap, 1)
    with pytest.raises(ChartMismatch):
        fake.evaluate_consistent((F(1, 2), F(0)))


def test_boundary_compatibility(phi3):
    assert boundary_compatibility(phi3, depth=9) == 13 * 6 * 9


def test_continuity_certificates(phi3):
    ok, count = continuity_certificates(phi3, depth=9)
    assert ok and count == 13 * 6 * 8


def test_measure_level_one(phi1):
    m = measure_blowup(phi1)
    assert m.planar_area_units == m.cone_area_units == 1
    # one equilateral tripod with edge^2 = 1/12: 2 * (1/6) * 3/12
    assert m.flap_area == F(1, 12) and m.total_length_sq == F(1, 4)


def test_flap_area_halves_with_heights():
    full, half = measure_blowup(build_phi(3)), measure_blowup(build_phi(3, scale=F(1, 2)))
    assert half.flap_area * 2 == full.flap_area
    assert half.planar_area_units == full.planar_area_units == 1
    assert half.total_length_sq == full.total_length_sq


def test_distortion_recheck():
    rep = distortion_recheck(build_phi(2))
    assert rep.ok and rep.pieces == 4 * 72 and abs(rep.measured - rep.fold_bound) < 1e-9
    squeezed = distortion_recheck(build_phi(2, scale=F(1, 2)))
    assert squeezed.ok and squeezed.allowed == 2 * squeezed.fold_bound
    assert squeezed.measured != rep.measured


def test_bad_scale():
    with pytest.raises(ValueError):
        build_phi(1, scale=0)


def test_cone_pieces_are_positive(phi3):
    for v in iter_v(3):
        ch = phi3._cone_chart(v)
        for params, imgs in ch.sides:
            for k in range(len(params) - 1):
                assert area_units((ch.apex, imgs[k], imgs[k + 1])) > 0


w_strategy = st.sampled_from([t.address for t in enumerate_w(3)])


@settings(max_examples=60, deadline=None)
@given(w_strategy, st.integers(0, 5), st.integers(1, 12), st.integers(0, 63))
def test_boundary_points_glue(phi3, w, face, k, j):
    # a boundary point of a w-triangle: every chart agrees and the base is the collapse image
    a = dyadic_edge_points(w, face, k).xy
    b = dyadic_edge_points(w, face, k + 1).xy
    p = tuple(x + (y - x) * F(j, 64) for x, y in zip(a, b))
    img = phi3.evaluate_consistent(p)
    assert img.coords[1] == 0
    assert phi3.flap.base_point(img) == phi3.collapse.image(w, p)


points = st.tuples(st.integers(0, 2**12), st.integers(0, 2**12)).map(
    lambda t: (F(t[0], 2**12), F(t[1], 2**12)) if t[0] + t[1] <= 2**12 else (F(2**12 - t[0], 2**12), F(2**12 - t[1], 2**12))
)


@settings(max_examples=80, deadline=None)
@given(points, points)
def test_distinct_points_distinct_images(phi3, p, q):
    assert (phi3.evaluate_consistent(p) == phi3.evaluate_consistent(q)) == (p == q)


def test_sample_points_deterministic():
    assert sample_points(50, 3) == sample_points(50, 3)
    assert any(min(p[1], 1 - p[0] - p[1]) < 0 for p in sample_points(500, 1))


def test_json_endpoint_and_svg(phi1):
    out = phi1.evaluate_json((F(1, 3), F(1, 3)))
    data = json.loads(json.dumps(out))
    assert data["charts"] == ["w"] and data["image"]["chart"] == "rectangle"
    assert json.loads(json.dumps(phi1.to_json()))["level"] == 1
    svg = render_svg(phi1)
    assert svg.startswith("<svg") and svg.count("<polygon") == 3 + 6

from __future__ import annotations

import json
import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gasketlab.collapse import build_collapse
from gasketlab.fold import (
    ROOT_W,
    DegeneratePiece,
    HeightTooLarge,
    assemble_fold,
    boundary_trace_matches,
    distortion_bound,
    faces_of_tip,
    fold_line_length,
    fold_quadrilateral,
    gasket_modulus_certificates,
    gluing_report,
    half_edge_fraction,
    injectivity_scan,
    modulus_certificate,
    render_svg,
    split_triangle,
    subdivision_params,
    tiling_report,
    trapezoid_distortions,
    vertex_piece_distortion,
)
from gasketlab.triq import area_units, centroid, is_convex


@pytest.fixture(scope="module")
def sym():
    return assemble_fold(ROOT_W, (1, 1, 1), F(1, 6))


def test_split_triangle(sym):
    kites = split_triangle(ROOT_W)
    assert [area_units(z) for z in kites] == [F(1, 3)] * 3
    for i, z in enumerate(kites):
        assert z[0] == ROOT_W[i] and sum(p in ROOT_W for p in z) == 1
        assert is_convex(z) and z[2] == centroid(ROOT_W)


@pytest.mark.parametrize("ell,h,n,q", [(1, F(1, 6), 5, F(1, 6)), (1, F(1, 7), 6, F(1, 7)), (F(13, 8), F(1, 8), 12, F(1, 8))])
def test_subdivision_examples(ell, h, n, q):
    assert subdivision_params(ell, h) == (n, q)


@given(st.fractions(min_value=F(1, 100), max_value=F(1, 6), max_denominator=1000))
def test_subdivision_exhaustive_oracle(h):
    n, q = subdivision_params(1, h)
    candidates = [m for m in range(1, 200) if h <= 1 - m * h < 2 * h]
    assert candidates == [n] and q == 1 - n * h


def test_height_too_large():
    with pytest.raises(HeightTooLarge):
        subdivision_params(1, F(1, 5))
    with pytest.raises(HeightTooLarge):
        assemble_fold(ROOT_W, (1, 1, 1), F(1, 5))


def test_half_edge_fraction_schedule():
    h = F(1, 6)
    assert [half_edge_fraction(F(1, 2**k), h) for k in range(1, 7)] == [F(k - 1, 6) for k in range(1, 7)]
    assert half_edge_fraction(0, h) == 1
    assert half_edge_fraction(F(3, 8), h) == F(1, 12)


def test_trapezoid_distortion_uniform_and_h_invariant():
    seen = set()
    for h in (F(1, 6), F(1, 12), F(1, 24)):
        fold = assemble_fold(ROOT_W, (1, 1, 1), h)
        d = trapezoid_distortions(fold)
        assert len(d) == 1
        seen |= d
    assert len(seen) == 1
    # similar trapezoid onto a square: t^2 = 16/3, i.e. distortion sqrt(3)
    assert seen == {(F(16, 3), F(16, 3))}


def test_symmetric_bound_identical_across_h():
    bounds = {distortion_bound(assemble_fold(ROOT_W, (1, 1, 1), F(1, 6 * 2**j))) for j in range(3)}
    assert len(bounds) == 1
    (m,) = bounds
    assert 1 < float(m) < 10


def test_distortion_matches_svd(sym):
    basis = np.array([[1.0, 0.5], [0.0, math.sqrt(3) / 2]])
    for pc in sym.pieces[:12]:
        a = np.array([[float(x) for x in row] for row in pc.affine.linear]) @ np.linalg.inv(basis)
        s = np.linalg.svd(a, compute_uv=False)
        assert math.isclose(float(pc.distortion()), s[0] / s[1], rel_tol=1e-12)


def test_vertex_piece_aspect_sweep():
    vals = [vertex_piece_distortion(F(100 + i, 100)) for i in range(0, 100, 5)]
    # the square corner target is the worst aspect in [1, 2); it sets the symmetric M
    assert max(vals) == vals[0] == distortion_bound(assemble_fold(ROOT_W, (1, 1, 1), F(1, 6)))
    assert all(a > b for a, b in zip(vals[:8], vals[1:9]))


def test_tiling_and_gluing(sym):
    assert tiling_report(sym).ok
    rep = gluing_report(sym)
    assert rep.ok and rep.pillow == 96 and rep.seams == 96


def test_unequal_edges_per_edge_ratio():
    fold = assemble_fold(ROOT_W, (1, F(3, 2), F(4, 5)), height_ratio=F(1, 6))
    assert tiling_report(fold).ok and gluing_report(fold).ok
    assert distortion_bound(fold) == distortion_bound(assemble_fold(ROOT_W, (1, 1, 1), F(1, 6)))


def test_unequal_edges_common_height():
    fold = assemble_fold(ROOT_W, (1, F(3, 2), F(4, 5)))
    assert tiling_report(fold).ok and gluing_report(fold).ok
    assert {n for n, _ in fold.params.values()} == {5, 6, 10}


def test_segment_fold_identification(sym):
    # the corner segment IJ lies in both halves of a kite and lands on both tip ends
    w = sym.triangle
    for i in range(3):
        x = w[i]
        hits = sym.locate(x)
        assert {pc.face for pc in hits} == set(faces_of_tip(i))
        charts = {pc.chart(x) for pc in hits}
        assert charts == {(sym.lengths[i], 0)}


def test_injective_on_grid(sym):
    ok, n = injectivity_scan(sym, 12)
    assert ok and n == 91


def test_modulus_certificate_boundary_case(sym):
    cert = modulus_certificate(sym)
    assert cert.ok and cert.two_h == cert.third_length == F(1, 3)


def test_midpoints_go_to_center(sym):
    for e in range(3):
        for face in (2 * e, 2 * e + 1):
            assert sym.anchor_chart(face, 1) == 0


def test_boundary_trace_matches_collapse_schedule(sym):
    assert boundary_trace_matches(sym)
    assert boundary_trace_matches(assemble_fold(ROOT_W, (2, F(7, 3), 3), height_ratio=F(1, 7)))


def test_gasket_anchor_modulus():
    ok, count = gasket_modulus_certificates(build_collapse(3), depth=8)
    assert ok and count == 13 * 6 * 7


def test_fold_line_length_finite(sym):
    # three altitudes of a unit equilateral triangle
    assert math.isclose(fold_line_length(sym), 3 * math.sqrt(3) / 2)


def test_degenerate_piece():
    with pytest.raises(DegeneratePiece):
        fold_quadrilateral(((0, 0), (1, 0), (2, 0)), 0, 1, F(1, 6))


def test_json_and_svg(sym):
    data = json.loads(json.dumps(sym.to_json()))
    assert len(data["pieces"]) == 72
    assert set(data["pieces"][0]) >= {"sourcePoly", "matrix", "translation", "targetChart"}
    assert render_svg(sym).count("<polygon") == 144

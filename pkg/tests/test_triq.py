from __future__ import annotations

import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasketlab.triq import (
    AffinePiece,
    DegeneratePolygon,
    Dyadic,
    LatticePoint,
    NonConvexCell,
    NonOrientationPreserving,
    affine_distortion,
    affine_from_triangles,
    area_units,
    norm2,
    split_convex,
    sqrt_interval,
    to_euclidean,
)

UNIT = [(F(0), F(0)), (F(1), F(0)), (F(0), F(1))]
dyadics = st.builds(Dyadic, st.integers(-(2**20), 2**20), st.integers(0, 12))
small = st.fractions(min_value=-4, max_value=4, max_denominator=16)


def test_dyadic_canonical_and_closed():
    assert Dyadic(4, 3) == Dyadic(1, 1)
    assert Dyadic(0, 7).exp == 0
    x = Dyadic(3, 2)
    assert (x + Dyadic(1, 2)) == Dyadic(1)
    assert (x * x).to_fraction() == F(9, 16)
    assert x.half() == Dyadic(3, 3)
    with pytest.raises(ValueError):
        Dyadic.of(F(1, 3))


@given(dyadics, dyadics)
def test_dyadic_matches_fractions(x, y):
    fx, fy = x.to_fraction(), y.to_fraction()
    assert (x + y).to_fraction() == fx + fy
    assert (x - y).to_fraction() == fx - fy
    assert (x * y).to_fraction() == fx * fy
    assert (x + y).num % 2 == 1 or (x + y).num == 0 or (x + y).exp == 0


@pytest.mark.parametrize("a,b,expected", [(0, 0, 0), (1, 0, 1), (1, 1, 3)])
def test_norm2_examples(a, b, expected):
    assert norm2(LatticePoint.of(a, b)) == expected


@given(dyadics, dyadics)
def test_norm2_agrees_with_float(a, b):
    p = LatticePoint(a, b)
    x, y = to_euclidean(p.xy)
    exact = float(norm2(p))
    assert math.isclose(exact, x * x + y * y, rel_tol=1e-12, abs_tol=1e-12)


def test_distortion_examples():
    assert affine_distortion(AffinePiece(((1, 0), (0, 1)))).ratio == 2
    d = affine_distortion(AffinePiece(((1, 0), (0, 1))))
    assert d.lower <= 1 <= d.upper
    d = affine_distortion(AffinePiece(((2, 0), (0, 1))))
    assert d.lower <= 2 <= d.upper and d.upper - d.lower <= F(1, 2**64)
    d = affine_distortion(AffinePiece(((1, 1), (0, 1))))
    golden = (3 + math.sqrt(5)) / 2
    assert abs(float(d) - golden) < 1e-15
    assert d.exceeds(F(2618, 1000)) and d.at_most(F(2619, 1000))


def test_distortion_rejects_orientation_reversal():
    with pytest.raises(NonOrientationPreserving):
        affine_distortion(AffinePiece(((1, 0), (0, -1))))
    with pytest.raises(NonOrientationPreserving):
        affine_distortion(AffinePiece(((1, 1), (1, 1))))


def _svd_oracle(m) -> float:
    s = np.linalg.svd(np.array(m, dtype=float), compute_uv=False)
    return s[0] ** 2 / (s[0] * s[1])


@given(small, small, small, small)
def test_distortion_matches_svd(a, b, c, d):
    m = ((a, b), (c, d))
    if a * d - b * c <= 0:
        return
    assert math.isclose(float(affine_distortion(AffinePiece(m))), _svd_oracle(m), rel_tol=1e-9)


@given(small, small, small, small)
def test_lattice_frame_matches_euclidean_conjugate(a, b, c, d):
    if a * d - b * c <= 0:
        return
    basis = np.array([[1.0, 0.5], [0.0, math.sqrt(3) / 2]])
    lat = np.array([[float(a), float(b)], [float(c), float(d)]])
    euc = basis @ lat @ np.linalg.inv(basis)
    got = float(affine_distortion(AffinePiece(((a, b), (c, d)), frame="lattice")))
    s = np.linalg.svd(euc, compute_uv=False)
    assert math.isclose(got, s[0] / s[1], rel_tol=1e-9)


# rational rotations from Pythagorean triples
ROTATIONS = [(F(3, 5), F(4, 5)), (F(5, 13), F(12, 13)), (F(8, 17), F(15, 17)), (F(1), F(0))]


@settings(max_examples=200)
@given(small, small, small, small, st.sampled_from(ROTATIONS), st.sampled_from(ROTATIONS),
       st.fractions(min_value=F(1, 8), max_value=8, max_denominator=8))
def test_distortion_similarity_invariant(a, b, c, d, r1, r2, s):
    if a * d - b * c <= 0:
        return
    m = ((a, b), (c, d))
    rot1 = ((r1[0], -r1[1]), (r1[1], r1[0]))
    rot2 = ((r2[0], -r2[1]), (r2[1], r2[0]))
    mm = np.array(rot2, dtype=object) @ np.array(m, dtype=object) @ np.array(rot1, dtype=object) * s
    composed = tuple(tuple(F(x) for x in row) for row in mm)
    assert affine_distortion(AffinePiece(composed)) == affine_distortion(AffinePiece(m))


def test_sqrt_interval_width():
    lo, hi = sqrt_interval(F(2))
    assert lo * lo <= 2 <= hi * hi
    assert hi - lo <= F(1, 2**64)
    lo, hi = sqrt_interval(F(9, 4))
    assert lo == hi == F(3, 2)


def test_affine_from_triangles_maps_vertices():
    src = UNIT
    dst = [(F(1), F(1)), (F(3), F(1)), (F(1), F(2))]
    piece = affine_from_triangles(src, dst)
    assert [piece(p) for p in src] == dst


def test_split_convex_empty_cut():
    cells = split_convex(UNIT)
    assert len(cells) == 1 and area_units(cells[0]) == 1


def test_split_convex_median():
    cells = split_convex(UNIT, [((F(0), F(0)), (F(1, 2), F(1, 2)))])
    assert sorted(area_units(c) for c in cells) == [F(1, 2), F(1, 2)]


def test_split_convex_three_altitudes():
    alts = [
        ((F(0), F(0)), (F(1, 2), F(1, 2))),
        ((F(1), F(0)), (F(0), F(1, 2))),
        ((F(0), F(1)), (F(1, 2), F(0))),
    ]
    cells = split_convex(UNIT, alts)
    assert len(cells) == 6
    assert sum(area_units(c) for c in cells) == 1
    assert all(area_units(c) == F(1, 6) for c in cells)


def test_split_convex_dangling_segment_is_nonconvex():
    with pytest.raises(NonConvexCell):
        split_convex(UNIT, [((F(0), F(0)), (F(1, 4), F(1, 4)))])


def test_split_convex_rejects_degenerate():
    with pytest.raises(DegeneratePolygon):
        split_convex([(F(0), F(0)), (F(1), F(0)), (F(2), F(0))])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.fractions(0, 1, max_denominator=8), st.fractions(0, 1, max_denominator=8)),
                min_size=1, max_size=3))
def test_split_convex_conserves_area(params):
    # chords between points on the bottom and left edges never cross badly
    segs = [((t, F(0)), (F(0), u)) for t, u in params if t > 0 and u > 0]
    cells = split_convex(UNIT, segs)
    assert sum(area_units(c) for c in cells) == 1


def test_mixed_frame_matches_float_conjugate():
    # equilateral lattice triangle onto a right isoceles Cartesian triangle
    src = UNIT
    dst = [(F(0), F(0)), (F(1), F(0)), (F(0), F(1))]
    piece = affine_from_triangles(src, dst, frame="mixed")
    basis = np.array([[1.0, 0.5], [0.0, math.sqrt(3) / 2]])
    m = np.array([[float(x) for x in row] for row in piece.linear]) @ np.linalg.inv(basis)
    s = np.linalg.svd(m, compute_uv=False)
    d = affine_distortion(piece)
    assert d.ratio is None
    assert math.isclose(float(d), s[0] / s[1], rel_tol=1e-12)
    assert d.upper - d.lower <= F(1, 2**63)

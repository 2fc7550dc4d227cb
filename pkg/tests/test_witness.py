from __future__ import annotations

import csv
import io
import json
import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gasketlab.gasket import ROOT, VAddress, WAddress, edges, enumerate_v, enumerate_w
from gasketlab.triq import in_convex, on_segment, segment_parameter
from gasketlab.witness import (
    BadRadii,
    BudgetInfeasible,
    NonMonotoneSequence,
    RadiiViolation,
    WitnessField,
    build_witness,
    bump_field,
    check_condition_star,
    delta_case1,
    delta_case3,
    energy_report_csv,
    halfplane_block,
    line_energy_check,
    positive_measure_witness,
    radial_block,
    staircase_block,
    staircase_value,
    verify_basic_lemma,
)


@pytest.fixture(scope="module")
def wit5():
    return build_witness(5, F(1, 10))


# -- radial and staircase blocks ------------------------------------------


@pytest.mark.parametrize("ratio", [math.e, math.e**2, math.e**4])
def test_radial_energy_closed_form(ratio):
    b = radial_block(ratio, 1.0)
    assert math.isclose(b.energy, 2 * math.pi / math.log(ratio))
    assert abs(b.quadrature_energy() / b.energy - 1) < 0.05


def test_radial_block_values_and_errors():
    b = radial_block(4.0, 1.0)
    assert float(b(np.array([2.0]))[0]) == pytest.approx(0.5)
    assert float(b(np.array([0.5]))[0]) == 1.0 and float(b(np.array([5.0]))[0]) == 0.0
    assert radial_block(1e6, 1.0).energy < radial_block(10.0, 1.0).energy
    with pytest.raises(BadRadii):
        radial_block(1.0, 1.0)


def test_staircase_single_step_and_increments():
    one = staircase_block(1)
    assert one.quadrature_energy() == pytest.approx(3 * math.pi, rel=1e-3)
    three = staircase_block(3)
    assert max(three.dyadic_increments()) <= 1 / 3 + 1e-12
    for n in (4, 8, 16):
        assert max(staircase_block(n).dyadic_increments()) <= 1 / n + 1e-12


def test_staircase_energy_halves():
    e8 = staircase_block(8).quadrature_energy()
    e16 = staircase_block(16).quadrature_energy()
    assert abs(e16 / e8 - 0.5) < 0.15 * 0.5


def test_staircase_gradient_matches_slope():
    # inside annulus k the slope is 1/(N r_k); centered differences agree within 1%
    blk = staircase_block(4, R1=1.0)
    for k in range(1, 5):
        lo, hi = blk.annulus(k)
        rho = np.linspace(lo, hi, 9)[1:-1]
        h = 1e-6 * lo
        fd = (blk(rho + h) - blk(rho - h)) / (2 * h)
        assert np.allclose(np.abs(fd), 1 / (4 * lo), rtol=0.01)


@given(st.integers(1, 40), st.fractions(min_value=F(1, 2**30), max_value=F(1, 4), max_denominator=2**30))
def test_staircase_value_monotone_and_bounded(n, u):
    v = staircase_value(F(0), F(1), n, u)
    assert 0 <= v <= 1
    assert staircase_value(F(0), F(1), n, u / 2) >= v


def test_halfplane_block_geometric_sequences():
    xs = [4.0**-k for k in range(1, 40)]
    ys = [-(4.0**-k) for k in range(1, 40)]
    g = halfplane_block(xs, ys, 4)
    assert max(g.increments()) <= 0.25 + 1e-12
    assert float(g(np.array([0.0]))[0]) == 1.0
    assert float(g(np.array([g.R1 * 1.01]))[0]) == 0.0
    g8 = halfplane_block(xs, ys, 8)
    ratio = g8.quadrature_energy() / g.quadrature_energy()
    assert abs(ratio - 0.5) < 0.15 * 0.5


def test_halfplane_transition_annuli_hold_sequence_points():
    xs = [3.0**-k for k in range(1, 60)]
    ys = [-(5.0**-k) for k in range(1, 60)]
    g = halfplane_block(xs, ys, 6)
    for Rm, Rn in zip(g.R, g.R[1:]):
        assert any(Rn < x < Rm / 2 for x in xs) and any(Rn < -y < Rm / 2 for y in ys)


def test_halfplane_rejects_non_monotone():
    with pytest.raises(NonMonotoneSequence):
        halfplane_block([0.5, 0.6], [-0.5, -0.25], 3)
    with pytest.raises(NonMonotoneSequence):
        halfplane_block([0.5, 0.25], [-0.25, -0.5], 3)


# -- inductive witness ----------------------------------------------------


def test_level_one_block(wit5):
    r = wit5.record(WAddress(VAddress()))
    assert r.a == 1 and r.c == (0, 0, 0) and r.oscillation == 1


def test_level_two_values(wit5):
    level1 = wit5.record(WAddress(VAddress()))
    allowed = {F(0)} | {level1.edge_value(e, t / F(64)) for e in range(3) for t in range(65)}
    for t in enumerate_w(2)[1:]:
        r = wit5.record(t.address)
        assert set(r.c) <= allowed
        assert r.a == sum(r.c) / 3


def _oracle_values(level_max, eps):
    """Recompute vertex values by geometric search, without stored owners."""
    wit = build_witness(level_max, eps)
    tris = [t for t in enumerate_w(level_max)]
    values = {}
    for t in tris:
        if t.level == 1:
            values[t.address] = (F(0),) * 3
            continue
        vals = []
        for p in t.vertices:
            if any(on_segment(p, a, b) for a, b in edges(ROOT)):
                vals.append(F(0))
                continue
            hosts = [s for s in tris if s.level < t.level and any(on_segment(p, a, b) for a, b in edges(s.vertices))]
            assert len(hosts) == 1
            host = wit.record(hosts[0].address)
            for e, (a, b) in enumerate(edges(host.vertices)):
                if on_segment(p, a, b):
                    vals.append(host.edge_value(e, segment_parameter(p, a, b)))
                    break
        values[t.address] = tuple(vals)
    return wit, values


def test_vertex_values_against_geometric_oracle():
    wit, values = _oracle_values(4, F(1, 10))
    for w, vals in values.items():
        assert wit.record(w).c == vals


def test_budget_realized_per_triangle(wit5):
    for r in wit5.triangles.values():
        assert r.energy_bound <= r.budget**2
    assert wit5.total_energy < 0.1


def test_budget_infeasible():
    with pytest.raises(BudgetInfeasible):
        build_witness(3, F(1, 10), cap=100)


def test_condition_star_exact(wit5):
    rep = check_condition_star(wit5)
    assert rep.ok and rep.checked_pairs > 0 and rep.anchor_checks > 0


def test_monotonicity_on_vertices(wit5):
    # inside every v-triangle, w-vertex values lie between the extremes found on its boundary
    tris = enumerate_w(5)
    for v, verts in enumerate_v(2) + enumerate_v(3):
        inner, boundary = [], []
        for t in tris:
            rec = wit5.record(t.address)
            for p, val in zip(t.vertices, rec.c):
                if not in_convex(p, verts):
                    continue
                if any(on_segment(p, a, b) for a, b in edges(verts)):
                    boundary.append(val)
                else:
                    inner.append(val)
        if inner:
            assert min(boundary) <= min(inner) and max(inner) <= max(boundary)


def test_monotonicity_sampled(wit5):
    fld = WitnessField(wit5)
    rng = np.random.default_rng(3)
    for v, verts in enumerate_v(2):
        from gasketlab.triq import to_euclidean

        c = np.array([to_euclidean(p) for p in verts])
        w = rng.dirichlet([1, 1, 1], size=4000)
        pts = w @ c
        vals = fld(pts[:, 0], pts[:, 1])
        s = np.linspace(0, 1, 4001)
        bd = np.concatenate([np.outer(1 - s, c[i]) + np.outer(s, c[(i + 1) % 3]) for i in range(3)])
        bvals = fld(bd[:, 0], bd[:, 1])
        assert vals.max() <= bvals.max() + 1e-9 and vals.min() >= bvals.min() - 1e-9


def test_energy_additivity_csv(wit5):
    rows = list(csv.DictReader(io.StringIO(energy_report_csv(wit5))))
    assert len(rows) == len(wit5.triangles)
    assert math.isclose(sum(float(r["energy"]) for r in rows), wit5.total_energy, rel_tol=1e-12)


def test_json_serialization(wit5):
    data = json.loads(json.dumps(wit5.to_json()))
    assert set(data) == {"triangles", "r0", "R0", "epsilon"}
    t0 = data["triangles"][0]
    assert t0["address"] == "w" and t0["a"] == {"num": 1, "den": 1} and len(t0["c"]) == 3


# -- recurrences ----------------------------------------------------------


def test_theoretical_sequences():
    d3 = delta_case3(6)
    assert d3[1:] == [F(7, 9) ** (m - 1) for m in range(1, 7)]
    d1 = delta_case1(8, 3, F(0))
    assert [d1[n] for n in range(3, 9)] == [F(2, 3) ** (n - 3) for n in range(3, 9)]


def test_periodic_interior_sequence_dominated():
    wit = build_witness(9, F(1, 10))
    rep = verify_basic_lemma(wit, words=[(3, (0, 1, 2) * 4)])
    assert rep.ok
    assert all(o <= b for o, b in zip(rep.checks[0].oscillations, rep.checks[0].bounds))


def test_sampled_sequences_dominated(wit5):
    rep = verify_basic_lemma(wit5, samples=30, seed=11)
    assert rep.ok and {c.case for c in rep.checks} == {1, 2, 3}


# -- line integrals -------------------------------------------------------


def test_line_through_ball_and_line_missing(wit5):
    rep = line_energy_check(wit5, n_lines=5, samples=4001, cover_refine=4)
    assert rep.min_crossing >= 0.98
    fld = WitnessField(wit5)
    xs = np.linspace(-1, 2, 1000)
    assert np.all(fld(xs, np.full_like(xs, 2.0)) == 0)


def test_energy_chain_small_epsilon():
    wit = build_witness(4, F(1, 20))
    rep = line_energy_check(wit, n_lines=10, samples=4001, cover_refine=4)
    assert rep.off_gasket_norm < 0.05 < rep.threshold
    assert rep.chain_ok


# -- positive-measure witness ---------------------------------------------


def test_positive_measure_p2_n2():
    radii = [0.4 * 3.0 ** -(i) for i in range(60)]
    rep = positive_measure_witness(radii, 2, 2)
    assert all(m == 1 for m in rep.m)
    assert rep.c[3] == pytest.approx(4**-0.5)
    assert rep.normalized_terms[9] == pytest.approx(1 / 10)
    assert rep.full_terms[0] == pytest.approx(3 * math.pi)


def test_positive_measure_p1_n2():
    radii = [8.0 ** -i for i in range(1, 12)]
    rep = positive_measure_witness(radii, 1, 2)
    for m, r in zip(rep.m, radii):
        assert m >= 1 / r - 1e-9 and m * r <= 2


def test_positive_measure_empty_mask():
    radii = [0.4 * 3.0 ** -(i) for i in range(10)]
    rep = positive_measure_witness(radii, 2, 2, mask=lambda i: 0.0)
    assert all(x == 0 for x in rep.omega_norms)


def test_positive_measure_radii_violation():
    with pytest.raises(RadiiViolation):
        positive_measure_witness([0.4, 0.3], 2, 2)
    with pytest.raises(RadiiViolation):
        positive_measure_witness([1.2, 0.1], 2, 2)


def test_bump_gradient_quadrature():
    radii = [0.4 * 3.0 ** -(i) for i in range(4)]
    rep = positive_measure_witness(radii, 2, 2)
    for i in (1, 3):
        phi = bump_field(rep, radii, i)
        r = radii[i - 1]
        rho = np.linspace(r / 2, r, 200001)
        g = np.gradient(phi(rho), rho)
        energy = float(np.trapezoid(g**2 * 2 * np.pi * rho, rho))
        assert energy == pytest.approx(rep.full_terms[i - 1], rel=0.01)

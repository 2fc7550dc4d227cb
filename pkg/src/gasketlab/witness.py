"""Finite-depth Sobolev witness on the gasket complement.

Each w-triangle carries a building block: constant height ``a`` away from
its vertices and, inside a ball of radius edge/4 around vertex ``i``, a
staircase of N annuli that climbs from ``a`` to the vertex value ``c_i``.
Inside an annulus the profile is linear in the radius, so every value on an
edge at a dyadic position is rational and the anchor conditions can be
checked exactly.

Edge coordinates are normalized: an edge has length 1 and ``u`` is the
distance from the nearest vertex.  The staircase annulus ``A_k`` is
``2^(-2-k) <= u <= 2^(-1-k)`` for k = 1..N.
"""
from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .gasket import (
    LEVEL0,
    ROOT,
    VAddress,
    WAddress,
    edges,
    enumerate_v,
    nested_sequence,
)
from .triq import SQRT3, midpoint, on_segment, segment_parameter, to_euclidean

PI_UPPER = Fraction(355, 113)  # rational upper bound for pi
LOG2 = math.log(2.0)


class WitnessError(ValueError):
    pass


class BadRadii(WitnessError):
    pass


class NonMonotoneSequence(WitnessError):
    pass


class BudgetInfeasible(WitnessError):
    pass


class RadiiViolation(WitnessError):
    pass


def frac_json(x: Fraction) -> dict:
    x = Fraction(x)
    return {"num": x.numerator, "den": x.denominator}


# ---------------------------------------------------------------------------
# radial building blocks


@dataclass(frozen=True)
class RadialBlock:
    """Log-radial capacity profile: 1 on |x|<=r, 0 on |x|>=R."""

    R: float
    r: float

    def __call__(self, rho):
        rho = np.asarray(rho, dtype=float)
        val = np.log(self.R / np.maximum(rho, 1e-300)) / math.log(self.R / self.r)
        return np.clip(val, 0.0, 1.0)

    @property
    def energy(self) -> float:
        return 2.0 * math.pi / math.log(self.R / self.r)

    def quadrature_energy(self, n: int = 4000) -> float:
        """Polar midpoint rule on a logarithmic radial grid with centered differences."""
        return _radial_energy(self, self.r, self.R, n)


def radial_block(R: float, r: float) -> RadialBlock:
    """Capacity profile between radii r < R.

    Raises:
        BadRadii: if not 0 < r < R.
    """
    if not (0 < r < R):
        raise BadRadii(f"need 0 < r < R, got r={r}, R={R}")
    return RadialBlock(float(R), float(r))


def _radial_energy(field_fn: Callable, r_in: float, r_out: float, n: int, sector: float = 2 * math.pi) -> float:
    # midpoint rule in log-radius; derivative by centered differences
    s = np.linspace(math.log(r_in), math.log(r_out), n + 1)
    mids = 0.5 * (s[1:] + s[:-1])
    ds = s[1] - s[0]
    h = 1e-4 * ds
    f_plus = field_fn(np.exp(mids + h))
    f_minus = field_fn(np.exp(mids - h))
    dfds = (f_plus - f_minus) / (2 * h)
    # |df/drho|^2 rho drho = (df/ds)^2 ds
    return float(sector * np.sum(dfds**2) * ds)


def staircase_value(a: Fraction, c: Fraction, N: int, u: Fraction) -> Fraction:
    """Exact staircase value at normalized distance u from the vertex."""
    u = Fraction(u)
    if u >= Fraction(1, 4):
        return Fraction(a)
    if u <= 0:
        return Fraction(c)
    # k with 2^(-2-k) <= u <= 2^(-1-k); for u = 2^-j pick the outer circle of A_(j-1)
    k = _floor_log2_inv(u) - 1
    if k > N:
        return Fraction(c)
    step = 2 - u * 2 ** (2 + k)
    return Fraction(a) + (Fraction(c) - Fraction(a)) * (k - 1 + step) / N


def _floor_log2_inv(u: Fraction) -> int:
    # largest e with 2^e <= 1/u
    p, q = u.numerator, u.denominator
    e = q.bit_length() - p.bit_length()
    if (p << e) > q if e >= 0 else p > (q << -e):
        e -= 1
    while (p << (e + 1)) <= q:
        e += 1
    return e


def staircase_profile(u, N: int, a: float = 0.0, c: float = 1.0):
    """Vectorized float staircase at normalized distances u (support 1/4)."""
    u = np.asarray(u, dtype=float)
    out = np.full(u.shape, float(a))
    inside = u < 0.25
    if not np.any(inside):
        return out
    uu = np.maximum(u[inside], 1e-300)
    k = np.floor(-np.log2(uu)) - 1
    # guard against rounding at exact dyadic radii
    k = np.where(uu * 2.0 ** (2 + k) < 1.0, k - 1, k)
    k = np.where(uu * 2.0 ** (1 + k) > 1.0 + 1e-15, k + 1, k)
    frac = (np.minimum(k - 1 + (2.0 - uu * 2.0 ** (2 + k)), N)) / N
    frac = np.where((k > N) | (u[inside] <= 0), 1.0, frac)
    out[inside] = a + (c - a) * frac
    return out


@dataclass(frozen=True)
class StaircaseBlock:
    """Full-plane radial staircase with N unit steps inside B(0, R1)."""

    N: int
    R1: float

    def __call__(self, rho):
        return staircase_profile(np.asarray(rho, dtype=float) / (4.0 * self.R1), self.N)

    def annulus(self, k: int) -> tuple[float, float]:
        return (self.R1 * 2.0**-k, self.R1 * 2.0 ** (1 - k))

    @property
    def energy(self) -> float:
        # each annulus [r, 2r] with slope 1/(N r) carries 3*pi/N^2
        return 3.0 * math.pi / self.N

    def quadrature_energy(self, per_annulus: int = 400) -> float:
        total = 0.0
        for k in range(1, self.N + 1):
            lo, hi = self.annulus(k)
            total += _linear_annulus_quadrature(self, lo, hi, per_annulus)
        return total

    def dyadic_increments(self) -> list:
        pts = [self.R1 * 4.0 * 2.0**-j for j in range(1, self.N + 4)]
        vals = self(np.array(pts))
        return [abs(float(vals[i + 1] - vals[i])) for i in range(len(vals) - 1)]


def _linear_annulus_quadrature(field_fn: Callable, lo: float, hi: float, n: int, sector: float = 2 * math.pi) -> float:
    edges_ = np.linspace(lo, hi, n + 1)
    rho = 0.5 * (edges_[1:] + edges_[:-1])
    d = edges_[1] - edges_[0]
    h = 1e-3 * d
    grad = (field_fn(rho + h) - field_fn(rho - h)) / (2 * h)
    return float(sector * np.sum(grad**2 * rho) * d)


def staircase_block(N: int, R1: float = 0.25) -> StaircaseBlock:
    if N < 1:
        raise WitnessError("N must be >= 1")
    if R1 <= 0:
        raise BadRadii("R1 must be positive")
    return StaircaseBlock(int(N), float(R1))


@dataclass
class HalfPlaneBlock:
    """Radial steps separated by constant transition annuli, on the upper half-plane."""

    N: int
    R: list  # outer radii R_1 > R_2 > ...
    xs: list
    ys: list

    @property
    def R1(self) -> float:
        return self.R[0]

    def _radial(self, rho):
        rho = np.asarray(rho, dtype=float)
        out = np.zeros(rho.shape)
        for m, Rm in enumerate(self.R, start=1):
            rm = Rm / 2.0
            # value (m-1)/N on |x| <= R_m ... rising to m/N at r_m
            ramp = np.clip((Rm - rho) / (Rm - rm), 0.0, 1.0)
            out = np.where(rho <= Rm, (m - 1 + ramp) / self.N, out)
        return out

    def __call__(self, x, y=None):
        x = np.asarray(x, dtype=float)
        rho = np.abs(x) if y is None else np.hypot(x, np.asarray(y, dtype=float))
        return self._radial(rho)

    @property
    def energy(self) -> float:
        # half annulus [r, 2r] with slope 1/(N r): 3*pi/(2 N^2)
        return 1.5 * math.pi / self.N

    def quadrature_energy(self, per_annulus: int = 400) -> float:
        return sum(
            _linear_annulus_quadrature(self._radial, Rm / 2.0, Rm, per_annulus, sector=math.pi) for Rm in self.R
        )

    def increments(self) -> list:
        out = []
        for seq in (self.xs, self.ys):
            vals = self(np.array(seq, dtype=float))
            out.extend(abs(float(vals[i + 1] - vals[i])) for i in range(len(vals) - 1))
        return out


def halfplane_block(x_seq: Sequence[float], y_seq: Sequence[float], N: int, R1: float | None = None) -> HalfPlaneBlock:
    """Half-plane staircase adapted to two boundary sequences converging to 0.

    Args:
        x_seq: strictly decreasing positive numbers.
        y_seq: strictly increasing negative numbers.
        N: number of steps.
        R1: outer radius; defaults to min(x_seq[0], |y_seq[0]|).

    Raises:
        NonMonotoneSequence: if a sequence is not strictly monotone with the right sign.
    """
    xs = [float(v) for v in x_seq]
    ys = [float(v) for v in y_seq]
    if any(v <= 0 for v in xs) or any(b >= a for a, b in zip(xs, xs[1:])):
        raise NonMonotoneSequence("x sequence must be positive and strictly decreasing")
    if any(v >= 0 for v in ys) or any(b <= a for a, b in zip(ys, ys[1:])):
        raise NonMonotoneSequence("y sequence must be negative and strictly increasing")
    if N < 1:
        raise WitnessError("N must be >= 1")
    R = [float(R1) if R1 is not None else min(xs[0], -ys[0])]
    while len(R) < N:
        r = R[-1] / 2.0
        # the transition annulus (R_next, r) must hold a point of each sequence
        x_in = [v for v in xs if v < r]
        y_in = [-v for v in ys if -v < r]
        if not x_in or not y_in:
            raise WitnessError("sequences too short for the requested number of steps")
        R.append(min(x_in[0], y_in[0]) / 2.0)
    return HalfPlaneBlock(int(N), R, xs, ys)


# ---------------------------------------------------------------------------
# the inductive witness


@dataclass
class TriangleRecord:
    address: WAddress
    vertices: tuple  # lattice coordinates
    a: Fraction
    c: tuple
    N: int
    owners: tuple  # w-triangle whose boundary holds each vertex
    energy_exact_factor: Fraction  # sum_i (c_i - a)^2 / (2N); energy = pi * this
    budget: Fraction

    @property
    def level(self) -> int:
        return self.address.level

    @property
    def side(self) -> float:
        return 2.0 ** -self.level

    @property
    def R1(self) -> float:
        return self.side / 4.0

    @property
    def oscillation(self) -> Fraction:
        return max(abs(self.a - ci) for ci in self.c)

    @property
    def energy(self) -> float:
        return math.pi * float(self.energy_exact_factor)

    @property
    def energy_bound(self) -> Fraction:
        return PI_UPPER * self.energy_exact_factor

    def edge_value(self, edge: int, t: Fraction) -> Fraction:
        """Exact value at parameter t along edge ``edge`` (from vertex edge+1)."""
        i, j = (edge + 1) % 3, (edge + 2) % 3
        t = Fraction(t)
        if t < Fraction(1, 4):
            return staircase_value(self.a, self.c[i], self.N, t)
        if 1 - t < Fraction(1, 4):
            return staircase_value(self.a, self.c[j], self.N, 1 - t)
        return self.a


@dataclass
class ScalarWitness:
    level_max: int
    epsilon: Fraction
    triangles: dict  # WAddress -> TriangleRecord
    x0: tuple
    r0: float
    R0: float
    cap: int

    def record(self, w: WAddress) -> TriangleRecord:
        return self.triangles[w]

    def value_at_vertex(self, w: WAddress, j: int) -> Fraction:
        return self.triangles[w].c[j]

    def point_value_on(self, owner: WAddress, p) -> Fraction:
        """Exact value of f at a point on the closed boundary of ``owner``."""
        if owner.is_level0:
            return Fraction(0)
        rec = self.triangles[owner]
        for e, (u, v) in enumerate(edges(rec.vertices)):
            if on_segment(p, u, v):
                return rec.edge_value(e, segment_parameter(p, u, v))
        raise WitnessError(f"{p} not on the boundary of {owner}")

    @property
    def total_energy(self) -> float:
        return sum(r.energy for r in self.triangles.values())

    @property
    def total_energy_bound(self) -> Fraction:
        return sum((r.energy_bound for r in self.triangles.values()), Fraction(0))

    @property
    def gradient_norm(self) -> float:
        return math.sqrt(self.total_energy)

    def to_json(self) -> dict:
        tris = []
        for w in sorted(self.triangles, key=lambda x: x.sort_key()):
            r = self.triangles[w]
            tris.append(
                {
                    "address": str(w),
                    "a": frac_json(r.a),
                    "c": [frac_json(x) for x in r.c],
                    "N": r.N,
                    "R1": r.R1,
                }
            )
        return {"triangles": tris, "r0": self.r0, "R0": self.R0, "epsilon": frac_json(self.epsilon)}


def budget_for_level(epsilon: Fraction, level: int) -> Fraction:
    """Per-triangle gradient-norm budget; sums to epsilon/3 over all levels."""
    return Fraction(epsilon) / (4**level * 3 ** (level - 1))


def choose_steps(c: Sequence[Fraction], a: Fraction, budget: Fraction, cap: int) -> int:
    """Least N >= 3 with pi * sum (c_i - a)^2 / (2N) <= budget^2 (pi bounded above)."""
    s = sum(((ci - a) ** 2 for ci in c), Fraction(0))
    need = PI_UPPER * s / (2 * budget * budget)
    n = max(3, math.ceil(need))
    if n > cap:
        raise BudgetInfeasible(f"budget {float(budget):.3e} needs N={n} > cap {cap}")
    return n


def build_witness(level_max: int, epsilon, cap: int = 2**128) -> ScalarWitness:
    """Inductive witness on all w-triangles up to ``level_max``.

    Args:
        level_max: deepest level, at least 1.
        epsilon: target bound for the gradient norm off the gasket.
        cap: largest admissible staircase resolution.

    Raises:
        BudgetInfeasible: if some triangle needs more than ``cap`` steps.
    """
    if level_max < 1:
        raise WitnessError("level_max must be >= 1")
    epsilon = Fraction(epsilon).limit_denominator(10**12) if not isinstance(epsilon, Fraction) else epsilon
    if epsilon <= 0:
        raise WitnessError("epsilon must be positive")
    wit = ScalarWitness(level_max, epsilon, {}, (0.0, 0.0), 0.0, 0.0, cap)
    frontier = [(VAddress(), ROOT, (LEVEL0, LEVEL0, LEVEL0))]
    for level in range(1, level_max + 1):
        budget = budget_for_level(epsilon, level)
        nxt = []
        for v, verts, owners in frontier:
            w = WAddress(v)
            wv = tuple(midpoint(verts[(j + 1) % 3], verts[(j + 2) % 3]) for j in range(3))
            if level == 1:
                a, c = Fraction(1), (Fraction(0),) * 3
            else:
                c = tuple(wit.point_value_on(owners[j], wv[j]) for j in range(3))
                a = sum(c, Fraction(0)) / 3
            n_steps = choose_steps(c, a, budget, cap)
            factor = sum(((ci - a) ** 2 for ci in c), Fraction(0)) / (2 * n_steps)
            wit.triangles[w] = TriangleRecord(w, wv, a, c, n_steps, owners, factor, budget)
            for i in range(3):
                child = tuple(verts[j] if j == i else midpoint(verts[i], verts[j]) for j in range(3))
                nxt.append((v.child(i), child, tuple(w if j == i else owners[j] for j in range(3))))
        frontier = nxt
    # f = 1 on the inscribed ball of the level-1 triangle, 0 outside the root circumcircle
    cx, cy = to_euclidean((Fraction(1, 3), Fraction(1, 3)))
    wit.x0 = (cx, cy)
    wit.r0 = SQRT3 / 12.0
    wit.R0 = 1.0 / SQRT3
    return wit


def energy_report_csv(wit: ScalarWitness) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["address", "level", "energy", "bound"])
    for w in sorted(wit.triangles, key=lambda x: x.sort_key()):
        r = wit.triangles[w]
        writer.writerow([str(w), r.level, repr(r.energy), repr(float(r.energy_bound))])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# condition (*) on dyadic anchors and its adjacency form


@dataclass
class StarReport:
    checked_pairs: int
    anchor_checks: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def check_condition_star(wit: ScalarWitness) -> StarReport:
    """Exact check of the anchor bound and of the adjacency bound.

    Anchor bound: consecutive dyadic anchors on every half-edge differ by at
    most O(W)/3.  Adjacency bound: two adjacent triangles with vertices z1, z2
    on the boundary of a lower-level triangle W0 satisfy
    |f(z1) - f(z2)| <= O(W0)/3.
    """
    violations = []
    anchors = 0
    for w, r in wit.triangles.items():
        bound = r.oscillation / 3
        for e in range(3):
            for from_start in (True, False):
                # anchors 2^-k for k = 1 .. level_max - level + 2 cover every vertex position in the build
                kmax = wit.level_max - r.level + 2
                prev = None
                for k in range(1, kmax + 1):
                    t = Fraction(1, 2**k)
                    val = r.edge_value(e, t if from_start else 1 - t)
                    if prev is not None:
                        anchors += 1
                        if abs(val - prev) > bound:
                            violations.append(("anchor", str(w), e, k))
                    prev = val
    on_boundary: dict = {}
    for w, r in wit.triangles.items():
        for j in range(3):
            on_boundary.setdefault(r.owners[j], []).append((w, r.c[j]))
    pairs = 0
    for w0, items in on_boundary.items():
        bound = Fraction(0) if w0.is_level0 else wit.triangles[w0].oscillation / 3
        members = {w: val for w, val in items}
        for w1, v1 in items:
            for w2 in set(wit.triangles[w1].owners):
                if w2 in members and w2 != w1:
                    pairs += 1
                    if abs(v1 - members[w2]) > bound:
                        violations.append(("adjacent", str(w0), str(w1), str(w2)))
    return StarReport(pairs, anchors, violations)


# ---------------------------------------------------------------------------
# oscillation recurrences


def delta_case1(n_max: int, N: int, eps: Fraction) -> list:
    """Delta_n = 1 for n <= N, then 2 eps/3 + 2/3 Delta_(n-1)."""
    out = [Fraction(1)] * (N + 1)
    for _ in range(N + 1, n_max + 1):
        out.append(Fraction(2, 3) * eps + Fraction(2, 3) * out[-1])
    return out  # indexed by n


def delta_case2(m_max: int, eps: Fraction) -> list:
    out = [None, Fraction(1)]
    for _ in range(2, m_max + 1):
        out.append(Fraction(2, 3) * eps + Fraction(5, 6) * out[-1])
    return out  # indexed by m


def delta_case3(m_max: int) -> list:
    out = [None, Fraction(1)]
    for _ in range(2, m_max + 1):
        out.append(Fraction(7, 9) * out[-1])
    return out


@dataclass
class SequenceCheck:
    case: int
    word: tuple
    indices: list  # n values
    oscillations: list  # O(W_n)
    bounds: list  # matching Delta
    epsilon: Fraction | None

    @property
    def ok(self) -> bool:
        return all(o <= b for o, b in zip(self.oscillations, self.bounds))


@dataclass
class LemmaReport:
    checks: list
    theoretical: dict
    empirical_max: dict  # case -> {n: max O}
    flagged: list

    @property
    def ok(self) -> bool:
        return not self.flagged


def _generation_index(ns: list, requirements: dict) -> dict:
    """m(n): number of completed induction generations at index n.

    ``requirements[n]`` lists the indices whose bounds the step at n relies
    on, or None if the structural hypothesis fails at n.  N_1 = 0 and N_m is
    the least N such that every later n has all requirements > N_(m-1).
    """
    n_marks = [0]
    last = max(ns)
    while True:
        prev = n_marks[-1]
        cand = None
        for N in range(prev, last + 1):
            if all(requirements[n] is not None and min(requirements[n]) > prev for n in ns if n > N):
                cand = N
                break
        if cand is None or cand >= last or (len(n_marks) > 1 and cand == n_marks[-1]):
            break
        n_marks.append(cand)
    gen = {}
    for n in ns:
        gen[n] = max(m for m, N in enumerate(n_marks, start=1) if n > N or m == 1)
    return gen


def _sequence_data(wit: ScalarWitness, word: tuple, n_max: int) -> list:
    return [nested_sequence(word, n) for n in range(2, n_max + 1)]


def _osc(wit: ScalarWitness, w: WAddress) -> Fraction:
    return wit.triangles[w].oscillation


def check_sequence(wit: ScalarWitness, word: tuple, case: int) -> SequenceCheck:
    """Compare O(W_n) along one nested sequence with its recurrence bound."""
    n_max = min(wit.level_max, len(word))
    data = _sequence_data(wit, word, n_max)
    ns = [d.n for d in data]
    osc = [_osc(wit, d.w) for d in data]
    if case == 3:
        req = {d.n: ([d.n - 1, d.k, d.l] if d.k is not None and d.l is not None else None) for d in data}
        gen = _generation_index(ns, req)
        deltas = delta_case3(max(gen.values()))
        return SequenceCheck(3, word, ns, osc, [deltas[gen[n]] for n in ns], None)
    # cases 1 and 2 use an empirical continuity modulus on the fixed triangles
    if case == 1:
        start = next(
            (i for i in range(len(data)) if all((e.a, e.b) == (data[i].a, data[i].b) for e in data[i:])), len(data) - 1
        )
        N = data[start].n
        tail = data[max(start - 1, 0):]
        eps = _modulus_on(wit, tail, fixed=(data[start].a, data[start].b))
        deltas = delta_case1(max(ns), N, eps)
        return SequenceCheck(1, word, ns, osc, [deltas[n] for n in ns], eps)
    start = next((i for i in range(len(data)) if all(e.b == data[i].b for e in data[i:])), len(data) - 1)
    N = data[start].n
    eps = _modulus_on(wit, data[max(start - 1, 0):], fixed=(data[start].b,))
    req = {d.n: ([d.n - 1, d.k] if d.n > N and d.k is not None else None) for d in data}
    gen = _generation_index(ns, req)
    deltas = delta_case2(max(gen.values()), eps)
    return SequenceCheck(2, word, ns, osc, [deltas[gen[n]] for n in ns], eps)


def _modulus_on(wit: ScalarWitness, tail: list, fixed: tuple) -> Fraction:
    """Oscillation of f over tail vertices that lie on the fixed triangles."""
    vals = []
    for d in tail:
        rec = wit.triangles[d.w]
        for j in range(3):
            if rec.owners[j] in fixed:
                vals.append(rec.c[j])
    return (max(vals) - min(vals)) if vals else Fraction(0)


def sample_words(count: int, length: int, seed: int) -> list:
    """Random words with case-typed tails: constant, two-periodic, three-periodic."""
    rng = random.Random(seed)
    out = []
    for idx in range(count):
        case = 1 + idx % 3
        pre_len = rng.randint(0, max(0, length // 3))
        prefix = [rng.randrange(3) for _ in range(pre_len)]
        if case == 1:
            i = rng.randrange(3)
            tail = [i] * (length - pre_len)
        elif case == 2:
            i, j = rng.sample(range(3), 2)
            tail = [(i, j)[t % 2] for t in range(length - pre_len)]
        else:
            perm = rng.sample(range(3), 3)
            tail = [perm[t % 3] for t in range(length - pre_len)]
        out.append((case, tuple(prefix + tail)))
    return out


def verify_basic_lemma(wit: ScalarWitness, samples: int = 50, seed: int = 0, words: Iterable | None = None) -> LemmaReport:
    """Check the three oscillation recurrences along sampled nested sequences."""
    chosen = list(words) if words is not None else sample_words(samples, wit.level_max, seed)
    checks = [check_sequence(wit, w, case) for case, w in chosen]
    n_top = wit.level_max
    theoretical = {
        1: [float(x) for x in delta_case1(n_top, 1, Fraction(0))[1:]],
        2: [float(x) for x in delta_case2(n_top, Fraction(0))[1:]],
        3: [float(x) for x in delta_case3(n_top)[1:]],
    }
    emp: dict = {1: {}, 2: {}, 3: {}}
    for c in checks:
        for n, o in zip(c.indices, c.oscillations):
            emp[c.case][n] = max(emp[c.case].get(n, Fraction(0)), o)
    flagged = [(c.case, c.word) for c in checks if not c.ok]
    return LemmaReport(checks, theoretical, emp, flagged)


# ---------------------------------------------------------------------------
# float evaluation of the stage-L continuous extension


class WitnessField:
    """Vectorized evaluator of the stage-L function on the plane.

    On built w-triangles it is the block function; on the unbounded
    component it is 0; on each remaining level-L v-triangle it is the cone
    extension of the boundary values towards the mean of the corner values.
    """

    def __init__(self, wit: ScalarWitness):
        self.wit = wit
        L = wit.level_max
        self.L = L
        # block parameters indexed by base-3 code of the parent word, per level
        self.params = []
        for level in range(1, L + 1):
            n = 3 ** (level - 1)
            arr = np.zeros((n, 5))
            self.params.append(arr)
        for w, r in wit.triangles.items():
            code = _code(w.parent.path)
            self.params[r.level - 1][code] = [float(r.a), float(r.c[0]), float(r.c[1]), float(r.c[2]), float(r.N)]
        # cone data for the remaining v-triangles of level L
        self.cone = np.zeros((3**L, 3, 7))  # per side: owner a, c_start, c_end, N, t0, t1, owner_is_set
        self.cone_mean = np.zeros(3**L)
        for v, verts in enumerate_v(L):
            code = _code(v.path)
            owners = _owners(v)
            corner_vals = []
            for j in range(3):
                owner = owners[j]
                p, q = verts[(j + 1) % 3], verts[(j + 2) % 3]
                if owner.is_level0:
                    self.cone[code, j] = [0, 0, 0, 3, 0, 1, 0]
                    continue
                rec = wit.triangles[owner]
                for e, (u0, u1) in enumerate(edges(rec.vertices)):
                    if on_segment(p, u0, u1) and on_segment(q, u0, u1):
                        t0 = segment_parameter(p, u0, u1)
                        t1 = segment_parameter(q, u0, u1)
                        self.cone[code, j] = [
                            float(rec.a),
                            float(rec.c[(e + 1) % 3]),
                            float(rec.c[(e + 2) % 3]),
                            float(rec.N),
                            float(t0),
                            float(t1),
                            1,
                        ]
                        break
            for j in range(3):
                owner = owners[(j + 1) % 3]
                corner_vals.append(float(wit.point_value_on(owner, verts[j])))
            self.cone_mean[code] = sum(corner_vals) / 3.0

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        x = np.broadcast_to(x, shape).ravel()
        y = np.broadcast_to(y, shape).ravel()
        b = 2.0 * y / SQRT3
        a = x - 0.5 * b
        lam = np.stack([1.0 - a - b, a, b], axis=1)
        out = np.zeros(x.shape[0])
        active = np.all(lam >= -1e-15, axis=1)
        code = np.zeros(x.shape[0], dtype=np.int64)
        for level in range(1, self.L + 1):
            idx = np.nonzero(active)[0]
            if idx.size == 0:
                break
            lm = lam[idx]
            central = np.max(lm, axis=1) <= 0.5
            if np.any(central):
                sel = idx[central]
                out[sel] = self._block(level, code[sel], 1.0 - 2.0 * lam[sel])
                active[sel] = False
            rest = idx[~central]
            lr = lam[rest]
            child = np.argmax(lr, axis=1)
            new = 2.0 * lr
            new[np.arange(rest.size), child] -= 1.0
            lam[rest] = new
            code[rest] = code[rest] * 3 + child
        idx = np.nonzero(active)[0]
        if idx.size:
            out[idx] = self._cone(code[idx], lam[idx])
        return out.reshape(shape)

    def _block(self, level: int, codes, mu):
        p = self.params[level - 1][codes]
        a = p[:, 0]
        val = a.copy()
        for j in range(3):
            m1, m2 = mu[:, (j + 1) % 3], mu[:, (j + 2) % 3]
            u = np.sqrt(np.maximum(m1 * m1 + m2 * m2 + m1 * m2, 0.0))
            near = u < 0.25
            if np.any(near):
                val[near] = _profile_rows(u[near], a[near], p[near, 1 + j], p[near, 4])
        return val

    def _edge_value(self, rows, t):
        a, c0, c1, N = rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3]
        out = a.copy()
        lo = t < 0.25
        hi = (1.0 - t) < 0.25
        if np.any(lo):
            out[lo] = _profile_rows(t[lo], a[lo], c0[lo], N[lo])
        if np.any(hi):
            out[hi] = _profile_rows(1.0 - t[hi], a[hi], c1[hi], N[hi])
        return out

    def _cone(self, codes, lam):
        mins = np.min(lam, axis=1)
        t_rad = np.clip(1.0 - 3.0 * mins, 1e-300, 1.0)
        lq = 1.0 / 3.0 + (lam - 1.0 / 3.0) / t_rad[:, None]
        side = np.argmin(lam, axis=1)
        rows = self.cone[codes, side]
        # boundary parameter along side j from vertex j+1 to j+2
        nxt = lq[np.arange(len(codes)), (side + 2) % 3]
        s = np.clip(nxt, 0.0, 1.0)
        t = rows[:, 4] + s * (rows[:, 5] - rows[:, 4])
        g = np.where(rows[:, 6] > 0, self._edge_value(rows, t), 0.0)
        m = self.cone_mean[codes]
        return m + t_rad * (g - m)


def _profile_rows(u, a, c, N):
    uu = np.maximum(u, 1e-300)
    k = np.floor(-np.log2(uu)) - 1
    k = np.where(uu * 2.0 ** (2 + k) < 1.0, k - 1, k)
    k = np.where(uu * 2.0 ** (1 + k) > 1.0 + 1e-15, k + 1, k)
    frac = np.where((k > N) | (u <= 0), 1.0, (k - 1 + (2.0 - uu * 2.0 ** (2 + k))) / N)
    return a + (c - a) * np.clip(frac, 0.0, 1.0)


def _code(path: Sequence[int]) -> int:
    c = 0
    for i in path:
        c = 3 * c + i
    return c


def _owners(v: VAddress) -> tuple:
    owners = (LEVEL0, LEVEL0, LEVEL0)
    cur = VAddress()
    for i in v.path:
        owners = tuple(WAddress(cur) if j == i else owners[j] for j in range(3))
        cur = cur.child(i)
    return owners


# ---------------------------------------------------------------------------
# line integrals and the energy chain


@dataclass
class LineReport:
    crossings: list  # variation of f along each line
    offsets: list
    r0: float
    R0: float
    fubini_integral: float  # lower estimate of the area integral of |grad f| over B(x0,R0)
    off_gasket_norm: float
    cover_energy: float
    full_norm: float
    threshold: float  # r0 / (sqrt(pi) R0)

    @property
    def min_crossing(self) -> float:
        return min(self.crossings)

    @property
    def chain_ok(self) -> bool:
        return self.r0 <= self.fubini_integral <= math.sqrt(math.pi) * self.R0 * self.full_norm


def line_energy_check(wit: ScalarWitness, n_lines: int = 100, samples: int = 20001, cover_refine: int = 8) -> LineReport:
    """Integrate |grad f| along horizontal lines through the f = 1 ball.

    Each line starts at the ball center height offset t in [0, r0) and runs
    past B(x0, R0).  The crossing integral is the total variation of the
    stage-L continuous extension along the line.
    """
    field_ = WitnessField(wit)
    x0, y0 = wit.x0
    xs = np.linspace(x0, x0 + wit.R0 + 0.05, samples)
    offsets = [wit.r0 * (i + 0.5) / n_lines for i in range(n_lines)]
    crossings = []
    for t in offsets:
        vals = field_(xs, np.full_like(xs, y0 + t))
        crossings.append(float(np.sum(np.abs(np.diff(vals)))))
    fubini = float(np.mean(crossings) * wit.r0)
    cover = cover_energy(field_, cover_refine)
    off = wit.total_energy
    return LineReport(
        crossings,
        offsets,
        wit.r0,
        wit.R0,
        fubini,
        math.sqrt(off),
        cover,
        math.sqrt(off + cover),
        wit.r0 / (math.sqrt(math.pi) * wit.R0),
    )


def cover_energy(field_: WitnessField, refine: int = 8) -> float:
    """P1 quadrature of the energy on the remaining level-L v-triangles."""
    L = field_.L
    m = refine
    # reference lattice in barycentric coordinates
    nodes = [(i, j) for i in range(m + 1) for j in range(m + 1 - i)]
    index = {p: k for k, p in enumerate(nodes)}
    tris = []
    for i in range(m):
        for j in range(m - i):
            tris.append((index[(i, j)], index[(i + 1, j)], index[(i, j + 1)]))
            if i + j < m - 1:
                tris.append((index[(i + 1, j)], index[(i + 1, j + 1)], index[(i, j + 1)]))
    tris = np.array(tris)
    nodes = np.array(nodes, dtype=float) / m
    total = 0.0
    verts_all = enumerate_v(L)
    corners = np.array([[to_euclidean(p) for p in vs] for _, vs in verts_all])  # (V, 3, 2)
    # nodes in each triangle: p = v0 + s (v1 - v0) + t (v2 - v0)
    P = corners[:, None, 0, :] + nodes[None, :, 0:1] * (corners[:, None, 1, :] - corners[:, None, 0, :]) + nodes[
        None, :, 1:2
    ] * (corners[:, None, 2, :] - corners[:, None, 0, :])
    # shrink slightly so nodes on shared edges are evaluated inside the cover
    cen = corners.mean(axis=1)[:, None, :]
    P = cen + (P - cen) * (1 - 1e-12)
    vals = field_(P[..., 0], P[..., 1])
    for tri in tris:
        p0, p1, p2 = P[:, tri[0]], P[:, tri[1]], P[:, tri[2]]
        f0, f1, f2 = vals[:, tri[0]], vals[:, tri[1]], vals[:, tri[2]]
        e1 = p1 - p0
        e2 = p2 - p0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        gx = ((f1 - f0) * e2[:, 1] - (f2 - f0) * e1[:, 1]) / det
        gy = (-(f1 - f0) * e2[:, 0] + (f2 - f0) * e1[:, 0]) / det
        total += float(np.sum((gx * gx + gy * gy) * np.abs(det) / 2.0))
    return total


# ---------------------------------------------------------------------------
# the positive-measure witness


@dataclass
class PositiveMeasureReport:
    p: float
    n: int
    c: list
    m: list
    full_terms: list  # ||grad phi_i||_p^p on R^n
    normalized_terms: list  # (c_i m_i r_i^(n/p - 1))^p
    omega_norms: list  # ||grad phi_i||_{L^p(Omega)}
    full_partial_sums: list
    omega_partial_sums: list

    def cauchy_tail(self, start: int | None = None) -> float:
        """Sum of the Omega norms from ``start`` on; bounds every |S_j - S_i| with i >= start."""
        if start is None:
            start = max(1, math.ceil(len(self.omega_norms) / 100))
        return float(sum(self.omega_norms[start:]))


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def sawtooth(t):
    """1-periodic extension of |t| from [-1/2, 1/2]."""
    t = np.asarray(t, dtype=float)
    return np.abs(t - np.round(t))


def positive_measure_witness(radii: Sequence[float], p: float, n: int, mask: Callable | None = None) -> PositiveMeasureReport:
    """Norms of the oscillating bumps phi_i on the annuli r_i/2 <= |x| <= r_i.

    Args:
        radii: r_1 > r_2 > ... with r_(i+1) < r_i / 2 < 1/2.
        p: integrability exponent, p >= 1.
        n: dimension.
        mask: i -> measure of B(0, r_i) intersected with the complement set;
            defaults to the largest admissible value 2^(-i p) r_i^n.

    Raises:
        RadiiViolation: if the halving condition fails.
    """
    r = [float(x) for x in radii]
    for i in range(len(r)):
        if not r[i] / 2 < 0.5:
            raise RadiiViolation(f"r_{i + 1} / 2 must be < 1/2")
        if i + 1 < len(r) and not r[i + 1] < r[i] / 2:
            raise RadiiViolation(f"r_{i + 2} must be < r_{i + 1} / 2")
    if p < 1 or n < 1:
        raise WitnessError("need p >= 1 and n >= 1")
    vol = unit_ball_volume(n)
    cs, ms, full, norm_terms, omega = [], [], [], [], []
    for i, ri in enumerate(r, start=1):
        if p >= n:
            ci = ri ** (1 - n / p) * i ** (-1 / p)
            mi = 1
        else:
            ci = i ** (-1 / p)
            mi = max(1, math.ceil(ri ** (1 - n / p) - 1e-12))
        # |grad phi_i| = 2 c_i m_i / r_i on the annulus; powers of r_i are
        # combined in log space so tiny radii neither underflow nor overflow
        log_r = math.log(ri)
        log_grad = math.log(2.0 * ci * mi) - log_r
        full.append(math.exp(p * log_grad + n * log_r) * vol * (1 - 2.0**-n))
        norm_terms.append(math.exp(p * (math.log(ci * mi) + (n / p - 1) * log_r)))
        log_cap = -i * p * math.log(2.0) + n * log_r
        if mask is None:
            log_meas = log_cap
        else:
            meas = float(mask(i))
            if meas > 0 and math.log(meas) > log_cap + 1e-12:
                raise RadiiViolation(f"mask measure at i={i} exceeds 2^(-ip) r_i^n")
            log_meas = math.log(meas) if meas > 0 else -math.inf
        omega.append(math.exp(log_grad + log_meas / p))
        cs.append(ci)
        ms.append(mi)
    return PositiveMeasureReport(
        p, n, cs, ms, full, norm_terms, omega, list(np.cumsum(norm_terms)), list(np.cumsum(omega))
    )


def bump_field(report: PositiveMeasureReport, radii: Sequence[float], i: int):
    """Radial profile of phi_i (1-based) as a function of |x|."""
    ri = float(radii[i - 1])
    ci, mi = report.c[i - 1], report.m[i - 1]

    def phi(rho):
        rho = np.asarray(rho, dtype=float)
        inside = (rho >= ri / 2) & (rho <= ri)
        return np.where(inside, ci * sawtooth(mi * (2 * rho / ri - 1)), 0.0)

    return phi

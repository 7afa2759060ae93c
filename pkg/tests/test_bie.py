import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calderon.bie import (
    BieSolver,
    assemble_bie,
    equivalence_residual,
    extract_transform_sample,
    factorization_rhs,
    pairing,
    restrict,
    richardson,
    solve_bie,
)
from calderon.carleman import GreenOperator, assemble_single_layer
from calderon.cgo import GLOBAL, Bump, build_cgo_harmonic, build_cgo_schrodinger
from calderon.errors import ExtrapolationUnstable, IndexMismatch, NearSingular, SupportViolation
from calderon.forward import DirichletSolver, PartialDtN, dtn
from calderon.geometry import build_polar_chart, chord_geodesic, classify_boundary

from conftest import gaussian_q


@pytest.fixture(scope="module")
def setup(small_grid):
    g = small_grid
    q = gaussian_q(g, amp=0.5)
    tau = 4.0
    d = classify_boundary(g, tau)
    rows, cols = d.pm_minus, d.pm_plus
    Sq = DirichletSolver(g, q)
    Lq, L0 = dtn(g, q, cols, rows, "q", Sq), dtn(g, None, cols, rows, "0")
    G = GreenOperator(g, tau, decomp=d)
    S = assemble_single_layer(G)
    return dict(g=g, q=q, tau=tau, d=d, rows=rows, cols=cols, Lq=Lq, L0=L0, G=G, S=S, Sq=Sq)


def _cgo(s, lam=0.2):
    g, d, tau = s["g"], s["d"], s["tau"]
    ch = build_polar_chart(g, chord_geodesic(g, 0.3, 0.0), 0.25)
    return build_cgo_harmonic(g, d, ch, tau, lam, Bump(ch.theta0, 0.2), GLOBAL)


def test_factorization_identity(setup, rng):
    s = setup
    g = s["g"]
    B = g.boundary
    pc, pr = np.searchsorted(B, s["cols"]), np.searchsorted(B, s["rows"])
    F = np.zeros((g.n_nodes, 5))
    F[s["cols"]] = rng.standard_normal((s["cols"].size, 5))
    lhs = s["S"].matrix[np.ix_(pc, pr)] @ ((s["Lq"].matrix - s["L0"].matrix) @ F[s["cols"]])
    rhs = factorization_rhs(g, s["G"], s["q"], F, s["Sq"])[pc]
    assert np.linalg.norm(lhs - rhs) <= 1e-8 * np.linalg.norm(rhs)


def test_bie_reproduces_schroedinger_trace(setup):
    s = setup
    op = assemble_bie(s["S"], s["Lq"], s["L0"], s["g"].boundary)
    solver = BieSolver(op)
    bun = _cgo(s)
    h = solver.solve(bun.u0[s["cols"]])
    bun = build_cgo_schrodinger(s["g"], s["G"], s["q"], bun)
    ref = bun.u[s["cols"]]
    assert np.abs(h - ref).max() <= 1e-10 * np.abs(ref).max()
    h2 = solve_bie(op, bun.u0[s["cols"]])
    np.testing.assert_allclose(h2, h, rtol=0, atol=1e-12 * np.abs(h).max())


def test_equivalence_with_volume_equation(setup):
    s = setup
    g = s["g"]
    bun = build_cgo_schrodinger(g, s["G"], s["q"], _cgo(s))
    r = equivalence_residual(g, s["G"], s["q"], bun.u, bun.u0, s["Sq"])
    assert r <= 1e-10


def test_bie_is_identity_without_potential(setup):
    s = setup
    g = s["g"]
    L0 = s["L0"]
    op = assemble_bie(s["S"], L0, L0, g.boundary)
    assert np.array_equal(op.toarray(), np.eye(s["cols"].size))


def test_bie_reads_only_consumed_rows(setup, rng):
    s = setup
    g = s["g"]
    consumed = np.isin(s["rows"], s["S"].consumes)
    poison = s["Lq"].matrix.copy()
    poison[~consumed] = 1e6 * rng.standard_normal(poison[~consumed].shape)
    Lp = PartialDtN(poison, s["Lq"].rows, s["Lq"].cols, "q", s["Lq"].row_weights)
    a = assemble_bie(s["S"], s["Lq"], s["L0"], g.boundary).toarray()
    b = assemble_bie(s["S"], Lp, s["L0"], g.boundary).toarray()
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_bie_rejects_mismatched_sets(setup):
    s = setup
    g = s["g"]
    other = dtn(g, None, s["cols"][1:], s["rows"], "0")
    with pytest.raises(IndexMismatch):
        assemble_bie(s["S"], s["Lq"], other, g.boundary)


def test_near_singular_guard(setup):
    s = setup
    op = assemble_bie(s["S"], s["Lq"], s["L0"], s["g"].boundary)
    with pytest.raises(NearSingular):
        BieSolver(op, cond_limit=1.0)


def test_pairing_is_integral_identity(setup):
    s = setup
    g = s["g"]
    u1 = build_cgo_schrodinger(g, s["G"], s["q"], _cgo(s)).u
    rng = np.random.default_rng(3)
    v = DirichletSolver(g, None).solve(np.where(np.isin(g.boundary, s["rows"]), rng.standard_normal(g.boundary.size), 0.0))
    P = pairing(s["Lq"], s["L0"], v[s["rows"]], u1[s["cols"]])
    # <v, (Lq - L0) h> = conj((q u1 | v)) with the surface-weighted product
    ref = np.sum(g.volume_weights[g.interior] * v[g.interior] * np.conj(s["q"][g.interior] * u1[g.interior]))
    assert abs(P - ref) <= 1e-9 * abs(ref)


def test_pairing_index_checks(setup):
    s = setup
    with pytest.raises(IndexMismatch):
        pairing(s["Lq"], s["L0"], np.zeros(3), np.zeros(s["cols"].size))


def test_restrict_detects_leaks(small_grid):
    g = small_grid
    nodes = g.cap_plus
    v = np.zeros(g.n_nodes)
    v[nodes] = 1.0
    np.testing.assert_array_equal(restrict(v, g, nodes), np.ones(nodes.size))
    v[g.cap_minus[0]] = 1.0
    with pytest.raises(SupportViolation):
        restrict(v, g, nodes)


@settings(max_examples=30, deadline=None)
@given(a=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
       b=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
       c=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_richardson_is_exact_on_its_model(a, b, c):
    taus = [8.0, 16.0, 32.0]
    v1 = [a + b / t for t in taus]
    assert abs(richardson(taus, v1, 1) - a) <= 1e-10 * (1 + abs(a) + abs(b))
    v2 = [a + b / t + c / t**2 for t in taus]
    assert abs(richardson(taus, v2, 2) - a) <= 1e-9 * (1 + abs(a) + abs(b) + abs(c))


def test_richardson_trailing_axes():
    taus = [4.0, 8.0]
    vals = np.array([[1 + 1 / 4, 2 + 3 / 4], [1 + 1 / 8, 2 + 3 / 8]])
    np.testing.assert_allclose(richardson(taus, vals), [1.0, 2.0], atol=1e-14)


def test_extraction_of_vanishing_pairings():
    r = extract_transform_sample([0j, 0j, 0j], [8, 16, 32], 0.3, 0.4, 0.25)
    assert r.value == 0 and r.residual == 0


def test_extraction_scaling():
    lam, mass, eps = -0.4, 0.35, 0.25
    r = extract_transform_sample([2.0, 2.0], [8, 16], lam, mass, eps)
    assert r.value == pytest.approx(math.exp(2 * lam * eps) * 2.0 / mass)


def test_extraction_flags_unstable_ladder():
    with pytest.raises(ExtrapolationUnstable):
        extract_transform_sample([1.0, 5.0, -3.0], [8, 16, 32], 0.0, 1.0, 0.25, rel_tol=1e-3)

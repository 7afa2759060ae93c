import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calderon.carleman import (
    GreenOperator,
    RtauSolver,
    assemble_single_layer,
    dense_min_norm_H,
    left_inverse_fields,
    null_projector,
    null_space_fields,
    padded_support,
    transversal_modes,
)
from calderon.errors import TauZero
from calderon.forward import assemble_conjugated, inner, normal_trace
from calderon.geometry import classify_boundary
from calderon.selftest import green_checks


@pytest.mark.parametrize("tau", [2.0, -3.0, 6.0])
def test_mode_solve_matches_dense_oracle(tiny_grid, tau):
    G = GreenOperator(tiny_grid, tau)
    H = G.dense_interior("H")
    Ho = dense_min_norm_H(tiny_grid, tau)
    assert np.abs(H - Ho).max() <= 1e-10 * np.abs(Ho).max()


@pytest.mark.parametrize("tau", [4.0, -4.0])
def test_green_is_right_inverse(small_grid, rng, tau):
    G = GreenOperator(small_grid, tau)
    L = assemble_conjugated(small_grid, None, tau).matrix
    v = rng.standard_normal(small_grid.interior.size) + 1j * rng.standard_normal(small_grid.interior.size)
    r = L @ G.apply(v) - v
    assert np.linalg.norm(r) <= 1e-8 * np.linalg.norm(v)


@pytest.mark.parametrize("tau", [4.0, -4.0])
def test_green_is_left_inverse_on_opposite_data(small_grid, tau):
    g = small_grid
    u = left_inverse_fields(g, tau, count=2, seed=5)
    cap = classify_boundary(g, -tau).s_plus_tau
    assert np.abs(u[g.boundary]).max() == 0.0
    assert np.abs(normal_trace(g, u)[np.searchsorted(g.boundary, cap)]).max() <= 1e-12
    G = GreenOperator(g, tau)
    L = assemble_conjugated(g, None, tau).matrix
    assert np.abs(G.apply(L @ u) - u).max() <= 1e-8 * np.abs(u).max()


def test_trace_lives_on_free_cap(small_grid, rng):
    tau = 5.0
    d = classify_boundary(small_grid, tau)
    G = GreenOperator(small_grid, tau, decomp=d)
    V = rng.standard_normal((small_grid.interior.size, 4))
    U = G.apply(V)
    off = np.setdiff1d(small_grid.boundary, d.s_plus_tau)
    assert np.abs(U[off]).max() <= 1e-12 * np.abs(U).max()
    # the free cap is the x1 = +L cap for positive tau
    assert np.array_equal(d.s_plus_tau, small_grid.cap_plus)


@settings(max_examples=8, deadline=None)
@given(tau=st.floats(1.0, 10.0), sign=st.sampled_from([-1.0, 1.0]), seed=st.integers(0, 10**6))
def test_adjoint_identity_property(tiny_grid, tau, sign, seed):
    tau = sign * tau
    r = np.random.default_rng(seed)
    n = tiny_grid.interior.size
    v = r.standard_normal(n) + 1j * r.standard_normal(n)
    w = r.standard_normal(n) + 1j * r.standard_normal(n)
    G, Gm = GreenOperator(tiny_grid, tau), GreenOperator(tiny_grid, -tau)
    a = inner(tiny_grid, G.apply(v), w)
    b = inner(tiny_grid, v, Gm.apply(w))
    assert abs(a - b) <= 1e-9 * max(abs(a), 1e-12)


def test_apply_adjoint_matches_reversed_tau(small_grid, rng):
    G, Gm = GreenOperator(small_grid, 3.0), GreenOperator(small_grid, -3.0)
    w = rng.standard_normal(small_grid.interior.size)
    np.testing.assert_allclose(G.apply_adjoint(w), Gm.apply(w)[small_grid.interior], atol=1e-12)


def test_projector_is_orthogonal_with_expected_rank(tiny_grid):
    tau = 3.0
    P = null_projector(tiny_grid, tau).matrix
    W = tiny_grid.volume_weights[tiny_grid.interior]
    assert np.abs(P @ P - P).max() <= 1e-10
    # self-adjoint for the weighted product
    WP = W[:, None] * P
    assert np.abs(WP - WP.T).max() <= 1e-12
    d = classify_boundary(tiny_grid, tau)
    assert np.linalg.matrix_rank(P, 1e-8) == d.s_plus_tau.size - tiny_grid.shape[2]


def test_null_fields_are_conjugated_harmonic(small_grid):
    tau = 4.0
    Z = null_space_fields(small_grid, tau)
    L = assemble_conjugated(small_grid, None, tau).matrix
    assert np.abs(L @ Z).max() <= 1e-9 * np.abs(Z).max()
    d = classify_boundary(small_grid, tau)
    off = np.setdiff1d(small_grid.boundary, d.s_plus_tau)
    assert np.abs(Z[off]).max() == 0.0


def test_projector_fixes_null_fields(small_grid):
    G = GreenOperator(small_grid, 4.0)
    Z = null_space_fields(small_grid, 4.0, G.modes)
    PZ = G.apply_projector(Z[small_grid.interior])
    assert np.abs(PZ - Z).max() <= 1e-10 * np.abs(Z).max()


def test_exact_norm_agrees_with_power_iteration(small_grid):
    G = GreenOperator(small_grid, 6.0)
    assert G.norm_power() == pytest.approx(G.norm(), rel=1e-6)


def test_norm_decreases_with_tau(small_grid):
    norms = [GreenOperator(small_grid, t).norm() for t in (2.0, 4.0, 8.0)]
    assert norms[0] > norms[1] > norms[2]


def test_rtau_constraints(small_grid, rng):
    tau = 5.0
    R = RtauSolver(small_grid, tau)
    f = rng.standard_normal(small_grid.interior.size)
    fm = rng.standard_normal(R.s_minus.size)
    u = R.solve(f, fm)
    L = assemble_conjugated(small_grid, None, tau).matrix
    assert np.abs(L @ u - f).max() <= 1e-9 * max(np.abs(f).max(), np.abs(u).max())
    assert np.array_equal(u[R.s_minus], fm)


def test_rtau_with_zero_dirichlet_is_the_weighted_green(small_grid, rng):
    # zero data on S- leaves a problem whose minimiser is unique; batched = single
    R = RtauSolver(small_grid, 3.0)
    F = rng.standard_normal((small_grid.interior.size, 3))
    U = R.solve(F, np.zeros((R.s_minus.size, 3)))
    np.testing.assert_allclose(U[:, 1], R.solve(F[:, 1], np.zeros(R.s_minus.size)), atol=1e-13)


def test_single_layer_support(small_grid):
    for tau in (4.0, -4.0):
        G = GreenOperator(small_grid, tau)
        S = assemble_single_layer(G)
        assert S.support_residual <= 1e-12
        B = padded_support(small_grid, G.decomp)
        assert np.all(np.isin(G.decomp.s_plus_tau, B))


def test_green_checks_bundle(small_grid):
    c = green_checks(small_grid, 8.0)
    assert c["right_inverse"] <= 1e-8
    assert c["left_inverse"] <= 1e-8
    assert c["support"] <= 1e-12
    assert c["adjoint"] <= 1e-8
    assert c["projector"] <= 1e-8


def test_tau_zero_rejected(tiny_grid):
    with pytest.raises(TauZero):
        GreenOperator(tiny_grid, 0.0)


def test_modes_are_weight_orthonormal(small_grid):
    m = transversal_modes(small_grid)
    gram = m.phiw @ m.phi
    assert np.abs(gram - np.eye(gram.shape[0])).max() <= 1e-12

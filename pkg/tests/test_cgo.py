import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calderon.carleman import GreenOperator, RtauSolver
from calderon.cgo import (
    GLOBAL,
    PARTIAL,
    Bump,
    amplitude,
    build_cgo_harmonic,
    build_cgo_schrodinger,
    build_partner,
    harmonic_batch,
    keep_out_rim,
    neumann_bound,
    schrodinger_batch,
)
from calderon.errors import BumpOutsideE, InvalidConfig, NotContracting
from calderon.forward import laplacian
from calderon.geometry import (
    GammaISpec,
    ManifoldConfig,
    build_manifold,
    build_polar_chart,
    chord_geodesic,
    classify_boundary,
)

from conftest import gaussian_q

GAMMA_I = GammaISpec((math.pi / 2, 3 * math.pi / 2), (-1.0, 1.0))


@pytest.fixture(scope="module")
def partial_grid():
    return build_manifold(ManifoldConfig(nx1=9, nrho=8, ntheta=16, gamma_i=GAMMA_I))


def _chart(grid, s=0.3, a=0.0, eps=0.25):
    return build_polar_chart(grid, chord_geodesic(grid, s, a), eps)


def _residual(grid, u, q=None):
    r = laplacian(grid).matrix @ u
    if q is not None:
        r = r + q[grid.interior] * u[grid.interior]
    return float(np.abs(r).max() / np.abs(u).max())


@settings(max_examples=25, deadline=None)
@given(center=st.floats(-1.0, 1.0), width=st.floats(0.05, 0.6))
def test_plateau_cover_is_one_on_bump_support(center, width):
    b = Bump(center, width)
    p = b.plateau_cover()
    t = np.linspace(center - width, center + width, 101)
    assert np.all(p(t) == 1.0)
    assert np.all(b(t) * p(t) == b(t))


def test_bump_mass_against_quadrature():
    b = Bump(0.3, 0.4)
    t = np.linspace(-0.1, 0.7, 200001)
    ref = np.trapezoid(b(t), t)
    assert b.mass() == pytest.approx(ref, rel=1e-8)


def test_bump_rejects_bad_kind():
    with pytest.raises(InvalidConfig):
        Bump(0.0, 0.2, kind="triangle")


@pytest.mark.parametrize("mode", [GLOBAL, PARTIAL])
def test_harmonic_cgo_solves_laplace_with_supported_trace(partial_grid, mode):
    g = partial_grid
    tau = 4.0
    d = classify_boundary(g, tau, 0.3, GAMMA_I)
    ch = _chart(g, 0.5, 0.0)
    bun = build_cgo_harmonic(g, d, ch, tau, 0.3, Bump(ch.theta0, 0.2), mode)
    assert _residual(g, bun.u0) <= 1e-10
    assert bun.support_max_outside <= 1e-8
    outside = np.setdiff1d(g.boundary, bun.allowed)
    w = bun.a + bun.r0
    assert np.abs(w[outside]).max() <= 1e-8 * np.abs(bun.a).max()


def test_partial_mode_rejects_bump_reaching_inaccessible_arc(partial_grid):
    g = partial_grid
    d = classify_boundary(g, 4.0, 0.3, GAMMA_I)
    ch = _chart(g, 0.5, math.pi)
    with pytest.raises(BumpOutsideE):
        build_cgo_harmonic(g, d, ch, 4.0, 0.3, Bump(ch.theta0, 0.2), PARTIAL)


def test_keep_out_covers_the_delta_band(partial_grid):
    g = partial_grid
    d = classify_boundary(g, 4.0, 0.3, GAMMA_I)
    mask = keep_out_rim(g, d)
    dist = np.abs((g.theta + math.pi) % (2 * math.pi) - math.pi)
    # E is (-pi/2, pi/2); the band reaches delta = 0.3 into it
    assert np.all(mask[dist >= math.pi / 2])
    assert not np.any(mask[dist < math.pi / 2 - 0.3 - 1e-9])
    wide = classify_boundary(g, 4.0, 0.9, GAMMA_I)
    assert keep_out_rim(g, wide).sum() > mask.sum()


def test_amplitude_modulus_is_tau_independent(small_grid):
    ch = _chart(small_grid)
    b = Bump(ch.theta0, 0.2)
    a1 = amplitude(small_grid, ch, 4.0, 0.3, b)
    a2 = amplitude(small_grid, ch, 9.0, 0.3, b)
    np.testing.assert_allclose(np.abs(a1), np.abs(a2), rtol=1e-12, atol=1e-300)


def test_schrodinger_cgo_solves_equation(small_grid):
    g = small_grid
    tau = 6.0
    q = gaussian_q(g, amp=0.5)
    d = classify_boundary(g, tau)
    ch = _chart(g)
    bun = build_cgo_harmonic(g, d, ch, tau, 0.2, Bump(ch.theta0, 0.2), GLOBAL)
    bun = build_cgo_schrodinger(g, GreenOperator(g, tau, decomp=d), q, bun)
    assert _residual(g, bun.u, q) <= 1e-10
    assert bun.neumann_terms <= neumann_bound(bun.contraction, 1e-12)
    assert bun.support_max_outside <= 1e-8


def test_schrodinger_refuses_non_contraction(small_grid):
    g = small_grid
    tau = 2.0
    G = GreenOperator(g, tau)
    q = np.full(g.n_nodes, 2.0 / G.norm())
    ch = _chart(g)
    bun = build_cgo_harmonic(g, G.decomp, ch, tau, 0.0, Bump(ch.theta0, 0.2), GLOBAL)
    with pytest.raises(NotContracting):
        build_cgo_schrodinger(g, G, q, bun)


def test_partner_is_conjugate_of_reversed_tau(small_grid):
    g = small_grid
    tau = 4.0
    dm = classify_boundary(g, -tau)
    ch = _chart(g)
    b = Bump(ch.theta0, 0.2).plateau_cover()
    p = build_partner(g, dm, ch, tau, 0.3, b, GLOBAL)
    raw = build_cgo_harmonic(g, dm, ch, -tau, 0.3, b, GLOBAL)
    np.testing.assert_array_equal(p.u0, np.conj(raw.u0))
    assert _residual(g, p.u0) <= 1e-10


def test_batch_matches_single(small_grid):
    g = small_grid
    tau = 5.0
    d = classify_boundary(g, tau)
    charts = [_chart(g, s, a) for s, a in ((0.0, 0.0), (0.3, 1.0), (-0.4, 2.5))]
    bumps = [Bump(c.theta0, 0.2) for c in charts]
    rs = RtauSolver(g, tau, decomp=d)
    batch = harmonic_batch(g, d, charts, tau, 0.4, bumps, GLOBAL, rs)
    q = gaussian_q(g, amp=0.5)
    G = GreenOperator(g, tau, decomp=d)
    batch = schrodinger_batch(g, G, q, batch)
    for k, (c, b) in enumerate(zip(charts, bumps)):
        one = build_cgo_harmonic(g, d, c, tau, 0.4, b, GLOBAL, rs)
        np.testing.assert_allclose(batch.u0[:, k], one.u0, rtol=0, atol=1e-12 * np.abs(one.u0).max())
        one = build_cgo_schrodinger(g, G, q, one)
        np.testing.assert_allclose(batch.u[:, k], one.u, rtol=0, atol=1e-10 * np.abs(one.u).max())


def test_schrodinger_batch_rejects_partners(small_grid):
    g = small_grid
    d = classify_boundary(g, -4.0)
    ch = _chart(g)
    b = harmonic_batch(g, d, [ch], -4.0, 0.0, [Bump(ch.theta0, 0.2)], GLOBAL, conjugate=True)
    with pytest.raises(InvalidConfig):
        schrodinger_batch(g, GreenOperator(g, 4.0), np.zeros(g.n_nodes), b)


def test_neumann_bound_monotone():
    assert neumann_bound(0.0, 1e-12) == 1
    assert neumann_bound(0.5, 1e-12) < neumann_bound(0.9, 1e-12)

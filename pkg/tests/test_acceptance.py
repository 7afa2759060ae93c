"""Acceptance criteria 1-8 at the reference resolution.

Each check carries ``@pytest.mark.criterion(n)``; the terminal summary
prints one verdict line per criterion followed by the measured values.
Tests marked ``diagnostic=True`` report numbers at other settings and do
not enter the verdict.
"""

import math

import numpy as np
import pytest

from calderon.bie import BieSolver, assemble_bie, factorization_rhs
from calderon.carleman import GreenOperator, assemble_single_layer, left_inverse_fields, transversal_modes
from calderon.cgo import GLOBAL, PARTIAL, Bump, build_cgo_harmonic, build_cgo_schrodinger
from calderon.errors import CalderonError, NearSingular
from calderon.forward import DirichletSolver, assemble_conjugated, dtn, inner, laplacian
from calderon.geometry import (
    GammaISpec,
    ManifoldConfig,
    MetricSpec,
    build_manifold,
    build_polar_chart,
    chord_geodesic,
    classify_boundary,
    transversal_grid,
)
from calderon.pipeline import (
    ForwardResult,
    PhantomSpec,
    compute_dtn_pair,
    chord_setup,
    data_sets,
    phantom,
    phantom_function,
    reference_config,
    restrict_dtn,
    run_forward,
    run_reconstruction,
    transform_samples,
)
from calderon.selftest import green_identity_residual, integral_identity_residual
from calderon.xray import (
    ChordFamily,
    TransformSamples,
    fbp_invert,
    forward_ert,
    lambda_derivative_recover,
    per_lambda_invert,
)

pytestmark = pytest.mark.acceptance

LADDER = (8.0, 16.0, 32.0)
GAMMA_I = GammaISpec((math.pi / 2, 3 * math.pi / 2), (-1.0, 1.0))


def rel(a, b):
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / (nb if nb > 0 else 1.0))


def rel_l2(tg, a, b):
    return math.sqrt(np.sum(tg.area * np.abs(a - b) ** 2) / np.sum(tg.area * np.abs(b) ** 2))


def fmt(values):
    return ", ".join(f"{v:.3g}" for v in values)


@pytest.fixture(scope="module")
def greens(ref_grid):
    modes = transversal_modes(ref_grid)
    return {t: (GreenOperator(ref_grid, t, modes), GreenOperator(ref_grid, -t, modes)) for t in LADDER}


@pytest.fixture(scope="module")
def ref_forward():
    """Gaussian phantom on the reference cylinder; caps only."""
    cfg = reference_config(GLOBAL)
    return cfg, run_forward(cfg)


@pytest.fixture(scope="module")
def q_unit(ref_grid):
    q = phantom(ref_grid, PhantomSpec())
    return q / np.abs(q).max()


# ---------------------------------------------------------------------------
# 1. exact discrete identities
# ---------------------------------------------------------------------------


@pytest.mark.criterion(1)
def test_c1_green_identity(ref_grid, record_property):
    rng = np.random.default_rng(11)
    n = ref_grid.n_nodes
    worst = 0.0
    for _ in range(5):
        u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        worst = max(worst, green_identity_residual(ref_grid, u, v))
    record_property("measured", f"residual {worst:.2e}")
    assert worst <= 1e-10


@pytest.mark.criterion(1)
def test_c1_integral_identity(ref_grid, q_unit, record_property):
    r = integral_identity_residual(ref_grid, q_unit, n_pairs=10, seed=3)
    record_property("measured", f"worst of 10 pairs {r:.2e}")
    assert r <= 1e-10


@pytest.mark.criterion(1)
def test_c1_zero_potential_dtn(ref_grid):
    B = ref_grid.boundary
    Lq, L0 = compute_dtn_pair(ref_grid, np.zeros(ref_grid.n_nodes), B, B)
    assert np.array_equal(Lq.matrix, L0.matrix)


@pytest.mark.criterion(1)
def test_c1_zero_potential_reconstruction(record_property):
    cfg = reference_config(GLOBAL, phantom=PhantomSpec(kind="zero"))
    res = run_reconstruction(cfg, run_forward(cfg))
    m = float(np.abs(res.q).max())
    record_property("measured", f"max |q_rec| {m:.2e}, {res.report['timing_s']['total']:.0f} s")
    # unit scale: the zero phantom has no amplitude of its own
    assert m <= 1e-6


# ---------------------------------------------------------------------------
# 2. Green operator suite
# ---------------------------------------------------------------------------


@pytest.mark.criterion(2)
@pytest.mark.parametrize("tau", LADDER)
def test_c2_right_and_left_inverse(ref_grid, greens, tau, record_property):
    g = ref_grid
    G, _ = greens[tau]
    L = assemble_conjugated(g, None, tau).matrix
    rng = np.random.default_rng(int(tau))
    v = rng.standard_normal(g.interior.size) + 1j * rng.standard_normal(g.interior.size)
    right = rel(L @ G.apply(v), v)
    u = left_inverse_fields(g, tau, count=3, seed=int(tau))
    left = rel(G.apply(L @ u), u)
    record_property("measured", f"right {right:.2e}, left {left:.2e}")
    assert right <= 1e-8 and left <= 1e-8


@pytest.mark.criterion(2)
@pytest.mark.parametrize("tau", LADDER)
def test_c2_trace_support(ref_grid, greens, tau, record_property):
    g = ref_grid
    G, _ = greens[tau]
    rng = np.random.default_rng(2)
    V = rng.standard_normal((g.interior.size, 4))
    out = G.apply(V)
    off = np.setdiff1d(g.boundary, G.decomp.s_plus_tau)
    leak = float(np.abs(out[off]).max())
    record_property("measured", f"max off-support trace {leak:.1e}")
    assert leak == 0.0


@pytest.mark.criterion(2)
@pytest.mark.parametrize("tau", LADDER)
def test_c2_adjoint_is_reversed_tau(ref_grid, greens, tau, record_property):
    g = ref_grid
    G, Gm = greens[tau]
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(3):
        v = rng.standard_normal(g.interior.size) + 1j * rng.standard_normal(g.interior.size)
        w = rng.standard_normal(g.interior.size) + 1j * rng.standard_normal(g.interior.size)
        a, b = inner(g, G.apply(v), w), inner(g, v, Gm.apply(w))
        worst = max(worst, abs(a - b) / abs(a))
    adj = rel(G.apply_adjoint(w), Gm.apply(w)[g.interior])
    record_property("measured", f"pairing {worst:.2e}, operator {adj:.2e}")
    assert worst <= 1e-8 and adj <= 1e-8


@pytest.mark.criterion(2)
@pytest.mark.parametrize("tau", LADDER)
def test_c2_projector_axioms(ref_grid, greens, tau, record_property):
    g = ref_grid
    I = g.interior
    G, _ = greens[tau]
    L = assemble_conjugated(g, None, tau).matrix
    rng = np.random.default_rng(9)
    v, w = rng.standard_normal(I.size), rng.standard_normal(I.size)
    Pv, Pw = G.apply_projector(v), G.apply_projector(w)
    idem = rel(G.apply_projector(Pv[I])[I], Pv[I])
    sym = abs(inner(g, Pv, w) - inner(g, v, Pw)) / abs(inner(g, Pv, w))
    # backward error of L_tau Pi v = 0
    null = float(np.linalg.norm(L @ Pv) / np.linalg.norm(abs(L) @ np.abs(Pv)))
    record_property("measured", f"idempotence {idem:.1e}, symmetry {sym:.1e}, L Pi {null:.1e}")
    assert idem <= 1e-8 and sym <= 1e-8 and null <= 1e-8


@pytest.mark.criterion(2)
def test_c2_norm_slope(greens, record_property):
    norms = [greens[t][0].norm() for t in LADDER]
    slope = float(np.polyfit(np.log(LADDER), np.log(norms), 1)[0])
    record_property("measured", f"norms {fmt(norms)}, slope {slope:.3f}")
    assert -1.3 <= slope <= -0.7


@pytest.mark.criterion(2, diagnostic=True)
def test_c2_norm_slope_fine_x1(record_property):
    g = build_manifold(ManifoldConfig(nx1=65))
    norms = [GreenOperator(g, t).norm() for t in LADDER]
    slope = float(np.polyfit(np.log(LADDER), np.log(norms), 1)[0])
    record_property("measured", f"nx1=65: norms {fmt(norms)}, slope {slope:.3f}")
    assert np.all(np.isfinite(norms))


# ---------------------------------------------------------------------------
# 3. single layer and BIE
# ---------------------------------------------------------------------------


def _positions(g, nodes):
    return np.searchsorted(g.boundary, nodes)


@pytest.mark.criterion(3)
@pytest.mark.parametrize("tau", LADDER)
def test_c3_single_layer_support(ref_grid, greens, tau):
    g = ref_grid
    G, _ = greens[tau]
    S = assemble_single_layer(G)
    rows_out = np.setdiff1d(np.arange(g.boundary.size), _positions(g, S.support))
    cols_out = np.setdiff1d(np.arange(g.boundary.size), _positions(g, S.consumes))
    assert np.all(S.matrix[rows_out] == 0.0)
    assert np.all(S.matrix[:, cols_out] == 0.0)
    assert np.all(np.isin(G.decomp.s_plus_tau, S.support))


@pytest.mark.criterion(3)
@pytest.mark.parametrize("tau", LADDER)
def test_c3_factorization_identity(ref_grid, greens, q_unit, tau, record_property):
    g = ref_grid
    G, _ = greens[tau]
    d = G.decomp
    rows, cols = d.pm_minus, d.pm_plus
    Sq = DirichletSolver(g, q_unit)
    Lq, L0 = dtn(g, q_unit, cols, rows, "q", Sq), dtn(g, None, cols, rows, "0")
    S = assemble_single_layer(G)
    rng = np.random.default_rng(4)
    F = np.zeros((g.n_nodes, 4))
    F[cols] = rng.standard_normal((cols.size, 4))
    pc, pr = _positions(g, cols), _positions(g, rows)
    lhs_in = (Lq.matrix - L0.matrix) @ F[cols]
    lhs = S.matrix[np.ix_(pc, pr)] @ lhs_in
    rhs = factorization_rhs(g, G, q_unit, F, Sq)[pc]
    r = rel(lhs, rhs)
    # round-off floor of the left-hand side product
    floor = np.finfo(float).eps * np.linalg.norm(np.abs(S.matrix[np.ix_(pc, pr)]) @ np.abs(lhs_in)) / np.linalg.norm(rhs)
    record_property("measured", f"residual {r:.2e}, round-off floor {floor:.1e}")
    assert r <= 1e-8


@pytest.fixture(scope="module")
def bie_ops(ref_grid, greens, q_unit):
    g = ref_grid
    out = {}
    Sq = DirichletSolver(g, q_unit)
    for tau in LADDER:
        G, _ = greens[tau]
        d = G.decomp
        Lq, L0 = dtn(g, q_unit, d.pm_plus, d.pm_minus, "q", Sq), dtn(g, None, d.pm_plus, d.pm_minus, "0")
        out[tau] = assemble_bie(assemble_single_layer(G), Lq, L0, g.boundary)
    return out


@pytest.mark.criterion(3)
def test_c3_bie_matches_oracle_trace_at_tau_32(ref_grid, greens, q_unit, bie_ops, record_property):
    g = ref_grid
    tau = 32.0
    G, _ = greens[tau]
    solver = BieSolver(bie_ops[tau], cond_limit=np.inf)
    ch = build_polar_chart(g, chord_geodesic(g, 0.3, 0.0), 0.25)
    bun = build_cgo_harmonic(g, G.decomp, ch, tau, 0.0, Bump(ch.theta0, 0.2), GLOBAL)
    cols = G.decomp.pm_plus
    h = solver.solve(bun.u0[cols])
    ref = build_cgo_schrodinger(g, G, q_unit, bun).u[cols]
    err = float(np.abs(h - ref).max() / np.abs(ref).max())
    record_property("measured", f"cond {solver.cond:.2e}, relative trace error {err:.2e}")
    assert err <= 1e-6


@pytest.mark.criterion(3)
def test_c3_condition_decreases_in_tau(bie_ops, record_property):
    conds = [BieSolver(bie_ops[t], cond_limit=np.inf).cond for t in LADDER]
    record_property("measured", f"cond {fmt(conds)}")
    assert all(b < a for a, b in zip(conds, conds[1:]))


# ---------------------------------------------------------------------------
# 4. CGO suite
# ---------------------------------------------------------------------------


def _residual(g, u, q=None):
    r = laplacian(g).matrix @ u
    if q is not None:
        r = r + q[g.interior] * u[g.interior]
    return float(np.abs(r).max() / np.abs(u).max())


@pytest.fixture(scope="module")
def cgo_ladder(ref_grid, greens, q_unit):
    g = ref_grid
    ch = build_polar_chart(g, chord_geodesic(g, 0.3, 0.0), 0.25)
    b = Bump(ch.theta0, 0.2)
    out = {}
    for lam in (0.0, 0.3):
        for tau in LADDER:
            G, _ = greens[tau]
            bun = build_cgo_harmonic(g, G.decomp, ch, tau, lam, b, GLOBAL)
            r0 = bun.r0_norm
            h_res = _residual(g, bun.u0)
            bun = build_cgo_schrodinger(g, G, q_unit, bun)
            out[lam, tau] = dict(bun=bun, r0=r0, h_res=h_res, s_res=_residual(g, bun.u, q_unit))
    return out


@pytest.mark.criterion(4)
def test_c4_equation_residuals(cgo_ladder, record_property):
    h = max(v["h_res"] for v in cgo_ladder.values())
    s = max(v["s_res"] for v in cgo_ladder.values())
    record_property("measured", f"harmonic {h:.1e}, schroedinger {s:.1e}")
    assert h <= 1e-8 and s <= 1e-8


@pytest.mark.criterion(4)
def test_c4_support_certificate_global(cgo_ladder, record_property):
    worst = max(v["bun"].support_max_outside for v in cgo_ladder.values())
    record_property("measured", f"max outside dM_+ {worst:.1e}")
    assert worst <= 1e-8


@pytest.fixture(scope="module")
def partial_setup():
    cfg = reference_config(PARTIAL)
    g = build_manifold(cfg.manifold)
    return cfg, g, chord_setup(g, cfg)


@pytest.mark.criterion(4)
@pytest.mark.parametrize("tau", LADDER)
def test_c4_support_certificate_partial(partial_setup, tau, record_property):
    cfg, g, setup = partial_setup
    d = classify_boundary(g, tau, cfg.delta, cfg.manifold.gamma_i)
    worst, res = 0.0, 0.0
    for k in range(setup.ids.size):
        bun = build_cgo_harmonic(g, d, setup.charts[k], tau, 0.3, setup.bumps[k], PARTIAL)
        worst = max(worst, bun.support_max_outside)
        res = max(res, _residual(g, bun.u0))
    record_property("measured", f"{setup.ids.size} chords, max outside Gamma_+ {worst:.1e}")
    assert worst <= 1e-8 and res <= 1e-8


@pytest.mark.criterion(4)
@pytest.mark.parametrize("lam", [0.0, 0.3])
def test_c4_r0_decay(cgo_ladder, lam, record_property):
    r0 = [cgo_ladder[lam, t]["r0"] for t in LADDER]
    record_property("measured", f"||r0|| {fmt(r0)}")
    assert r0[-1] <= 0.5 * r0[0]


@pytest.mark.criterion(4)
@pytest.mark.parametrize("lam", [0.0, 0.3])
def test_c4_tau_r1_bounded(cgo_ladder, lam, record_property):
    tr1 = [t * cgo_ladder[lam, t]["bun"].r1_norm for t in LADDER]
    growth = max(tr1) / tr1[0]
    record_property("measured", f"tau ||r1|| {fmt(tr1)}, growth {growth:.3g}")
    # bounded: never more than a decade above its value at the smallest tau
    assert growth <= 10.0


# ---------------------------------------------------------------------------
# 5. transform extraction
# ---------------------------------------------------------------------------


def _extraction(mode, taus, oracle):
    gi = GammaISpec.empty() if mode == PARTIAL else None
    cfg = reference_config(mode, manifold=ManifoldConfig(gamma_i=gi), phantom=PhantomSpec("transversal"),
                           family=ChordFamily(4, 4, True), lambdas=(0.0,), slice_lambdas=(0.0,), taus=taus)
    fwd = run_forward(cfg)
    g = fwd.grid
    cols, rows = data_sets(g, cfg)
    run = transform_samples(g, cfg, restrict_dtn(fwd.dtn_q, rows, cols), restrict_dtn(fwd.dtn_0, rows, cols),
                            fwd.q if oracle else None)
    f = phantom_function(cfg.phantom)
    length = cfg.manifold.x1[1] - cfg.manifold.x1[0]
    exact = forward_ert(lambda x, y: length * f(0.0, x, y), 0.0, cfg.family, step=2e-3)
    m = run.setup.mask
    err = np.abs(run.samples.values[0][m] - exact[m]) / np.abs(exact[m])
    return int(m.sum()), err


@pytest.mark.criterion(5)
def test_c5_extraction_matches_quadrature(record_property):
    try:
        n, err = _extraction(GLOBAL, LADDER, oracle=False)
    except NearSingular as exc:
        record_property("measured", f"NearSingular: {exc}")
        pytest.fail(f"BIE unusable on the reference ladder: {exc}")
    record_property("measured", f"{n} chords, max rel error {err.max():.3g}")
    assert n == 16 and err.max() <= 0.05


@pytest.mark.criterion(5, diagnostic=True)
@pytest.mark.parametrize("mode,taus,oracle", [
    (GLOBAL, LADDER, True),
    (GLOBAL, (4.0, 8.0), False),
    (PARTIAL, (4.0, 8.0), False),
])
def test_c5_extraction_diagnostics(mode, taus, oracle, record_property):
    n, err = _extraction(mode, taus, oracle)
    route = "oracle" if oracle else "bie"
    record_property("measured", f"{mode}/{route} taus {fmt(taus)}: {n} chords, "
                                f"median {np.median(err):.3g}, max {err.max():.3g}")
    assert np.all(np.isfinite(err))


# ---------------------------------------------------------------------------
# 6. ray transform suite
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def tg64():
    return transversal_grid(64, 64)


@pytest.fixture(scope="module")
def fam64():
    return ChordFamily(64, 128, True)


def _gauss(x0=0.0, y0=0.0, s=0.25):
    return lambda x, y: np.exp(-((x - x0) ** 2 + (y - y0) ** 2) / (2 * s * s))


@pytest.mark.criterion(6)
def test_c6_chord_lengths(record_property):
    tg = transversal_grid(16, 32)
    fam = ChordFamily(16, 16)
    T = 2 * np.sqrt(1 - fam.offsets**2)
    D = forward_ert(np.ones(tg.shape[1] * tg.shape[2]), 0.0, fam, tg)
    nodal = float(np.abs(D - T[:, None]).max())
    geo = max(abs(chord_geodesic(MetricSpec(), s, a).length - 2 * math.sqrt(1 - s * s))
              for _, _, s, a in fam.chords())
    record_property("measured", f"nodal {nodal / tg.drho:.2f} steps, geodesic {geo / tg.drho:.1e} steps")
    assert nodal <= 2 * tg.drho and geo <= 2 * tg.drho


@pytest.mark.criterion(6)
def test_c6_fbp_gaussian(tg64, fam64, record_property):
    F = _gauss()
    rec = fbp_invert(forward_ert(F, 0.0, fam64, step=2e-3), fam64, tg64)
    e = rel_l2(tg64, rec, F(tg64.X, tg64.Y))
    record_property("measured", f"rel L2 {e:.3f}")
    assert e <= 0.10


@pytest.mark.criterion(6)
def test_c6_exponential_inversion(tg64, fam64, record_property):
    F = _gauss(0.1, -0.1)
    rec = per_lambda_invert(forward_ert(F, 0.3, fam64, step=2e-3), fam64, 0.3, tg64)
    e = rel_l2(tg64, rec, F(tg64.X, tg64.Y))
    record_property("measured", f"rel L2 {e:.3f}")
    assert e <= 0.15


@pytest.mark.criterion(6)
def test_c6_first_derivative_consistency(record_property):
    lams = np.round(np.linspace(-0.4, 0.4, 9), 12)
    half, center = 0.5, 0.2
    spec = PhantomSpec("separable", center=(0.0, 0.2, -0.1), sigma=0.4, p_center=center, p_halfwidth=half)
    f = phantom_function(spec)
    w = lambda x, y: f(center, x, y)
    mu = 2 * lams
    p_hat = np.full(mu.shape, half, dtype=complex)
    nz = np.abs(mu) > 1e-12
    m = mu[nz]
    p_hat[nz] = np.sin(m * half) / m * math.pi**2 / (math.pi**2 - (m * half) ** 2)
    p_hat *= np.exp(-1j * mu * center)
    fam = ChordFamily(32, 32, True)
    S = TransformSamples(lams, fam, p_hat[:, None, None] * forward_ert(w, lams, fam, step=2e-3))
    rec = lambda_derivative_recover(S, 1, transversal_grid(16, 32))
    # d/dmu of p_hat at 0 for the shifted raised cosine
    d1 = -1j * center * half
    plain = forward_ert(lambda x, y: d1 * w(x, y), 0.0, fam, step=2e-3)
    e = rel(rec.corrected[1], plain)
    record_property("measured", f"rel error {e:.3f}")
    assert e <= 0.10


# ---------------------------------------------------------------------------
# 7. end-to-end global mode
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def calibration(ref_forward):
    cfg, fwd = ref_forward
    try:
        return run_reconstruction(cfg, fwd, oracle=True).report["rel_l2_error"]
    except CalderonError as exc:
        return exc


@pytest.mark.criterion(7)
def test_c7_global_reconstruction(ref_forward, calibration, record_property):
    cfg, fwd = ref_forward
    cal = calibration
    cal_txt = f"{cal:.3g}" if isinstance(cal, float) else f"{type(cal).__name__}: {cal}"
    try:
        err = run_reconstruction(cfg, fwd).report["rel_l2_error"]
    except NearSingular as exc:
        record_property("measured", f"data run NearSingular ({exc}); oracle calibration {cal_txt}")
        pytest.fail(f"data-driven run stopped: {exc}")
    record_property("measured", f"data run {err:.3g}, oracle calibration {cal_txt}")
    assert err <= 0.25
    assert isinstance(cal, float) and err <= 2 * cal


@pytest.mark.criterion(7, diagnostic=True)
def test_c7_feasible_ladder(ref_forward, record_property):
    cfg, fwd = ref_forward
    cfg = cfg.replace(taus=(4.0, 8.0))
    data = run_reconstruction(cfg, fwd).report
    orc = run_reconstruction(cfg, fwd, oracle=True).report
    record_property("measured", f"taus 4, 8: data run {data['rel_l2_error']:.3g}, "
                                f"oracle {orc['rel_l2_error']:.3g}, cond {fmt(data['bie_condition'])}")
    assert math.isfinite(data["rel_l2_error"]) and math.isfinite(orc["rel_l2_error"])


# ---------------------------------------------------------------------------
# 8. determinism and data locality
# ---------------------------------------------------------------------------


def _c8_config():
    # the reference ladder stops at tau = 16 on conditioning (criterion 3)
    return reference_config(GLOBAL, taus=(4.0, 8.0), slice_lambdas=(-0.4, -0.2, 0.0, 0.2, 0.4))


@pytest.mark.criterion(8)
def test_c8_thread_counts(ref_forward, monkeypatch):
    _, fwd = ref_forward
    monkeypatch.setenv("CALDERON_THREADS", "1")
    a = run_reconstruction(_c8_config(), fwd)
    monkeypatch.setenv("CALDERON_THREADS", "4")
    b = run_reconstruction(_c8_config(), fwd)
    assert np.array_equal(a.q, b.q)
    assert np.array_equal(a.samples.values, b.samples.values)


@pytest.mark.criterion(8)
def test_c8_poison_masking(ref_forward):
    _, fwd = ref_forward
    g = fwd.grid
    B = g.boundary
    Lq, L0 = compute_dtn_pair(g, fwd.q, B, B)
    clean = run_reconstruction(_c8_config(), ForwardResult(g, fwd.q, Lq, L0, {}))
    cols, rows = data_sets(g, _c8_config())
    keep = np.zeros((B.size, B.size), dtype=bool)
    keep[np.ix_(np.isin(B, rows), np.isin(B, cols))] = True
    rng = np.random.default_rng(8)
    for op in (Lq, L0):
        op.matrix[~keep] = 1e8 * rng.standard_normal(int((~keep).sum()))
    res = run_reconstruction(_c8_config(), ForwardResult(g, fwd.q, Lq, L0, {}))
    assert np.array_equal(res.q, clean.q)
    assert np.array_equal(res.samples.values, clean.samples.values)

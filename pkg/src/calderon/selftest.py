"""Invariant checks over every module, reported as a CSV of measured constants."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from . import io as cio
from .bie import factorization_rhs
from .carleman import GreenOperator, assemble_single_layer, left_inverse_fields, transversal_modes
from .cgo import GLOBAL, Bump, build_cgo_harmonic, build_cgo_schrodinger
from .errors import NotContracting
from .forward import (
    DirichletSolver,
    assemble_conjugated,
    boundary_inner,
    dtn,
    inner,
    laplacian,
    normal_trace,
)
from .geometry import ManifoldConfig, build_manifold, build_polar_chart, chord_geodesic, classify_boundary, transversal_grid
from .pipeline import RunConfig, phantom, thread_limit
from .xray import ChordFamily, fbp_invert, forward_ert

CSV_COLUMNS = ("check", "tau", "value", "threshold", "passed", "expected_failure", "note")


@dataclass
class CheckRecord:
    check: str
    tau: float
    value: float
    threshold: float
    passed: bool
    expected_failure: bool = False
    note: str = ""

    def row(self):
        return (self.check, self.tau, self.value, self.threshold, int(self.passed),
                int(self.expected_failure), self.note)


@dataclass
class SelftestReport:
    records: List[CheckRecord]
    elapsed: float

    @property
    def ok(self) -> bool:
        return all(r.passed or r.expected_failure for r in self.records)

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 2

    def write_csv(self, path) -> None:
        cio.write_csv(path, CSV_COLUMNS, (r.row() for r in self.records))


def _rel(a, b) -> float:
    nb = float(np.linalg.norm(b))
    return float(np.linalg.norm(a - b)) / (nb if nb > 0 else 1.0)


def green_identity_residual(grid, u, v) -> float:
    """``(u | -Delta v) - (-Delta u | v)`` against the boundary terms."""
    A = laplacian(grid).matrix
    lhs = inner(grid, u, A @ v) - inner(grid, A @ u, v)
    B = grid.boundary
    rhs = boundary_inner(grid, normal_trace(grid, u), v[B]) - boundary_inner(grid, u[B], normal_trace(grid, v))
    scale = abs(inner(grid, u, A @ v)) + abs(inner(grid, A @ u, v))
    return abs(lhs - rhs) / (scale if scale > 0 else 1.0)


def integral_identity_residual(grid, q, n_pairs: int = 10, seed: int = 0) -> float:
    """``<(Lambda_q - Lambda_0) f, h> = (q u_f | v_h)`` for random boundary data."""
    rng = np.random.default_rng(seed)
    B = grid.boundary
    Sq, S0 = DirichletSolver(grid, q), DirichletSolver(grid, None)
    F = rng.standard_normal((B.size, n_pairs)) + 1j * rng.standard_normal((B.size, n_pairs))
    H = rng.standard_normal((B.size, n_pairs)) + 1j * rng.standard_normal((B.size, n_pairs))
    U, U0, V = Sq.solve(F), S0.solve(F), S0.solve(H)
    dL = normal_trace(grid, U) - normal_trace(grid, U0)
    worst = 0.0
    for k in range(n_pairs):
        lhs = boundary_inner(grid, dL[:, k], H[:, k])
        rhs = inner(grid, q * U[:, k], V[:, k])
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
    return worst


def green_checks(grid, tau: float, seed: int = 0) -> dict:
    """Inverse, support, adjoint, projector and norm checks for one ``tau``."""
    rng = np.random.default_rng(seed)
    I = grid.interior
    modes = transversal_modes(grid)
    d = classify_boundary(grid, tau)
    G, Gm = GreenOperator(grid, tau, modes, d), GreenOperator(grid, -tau, modes)
    L = assemble_conjugated(grid, None, tau).matrix
    v = rng.standard_normal(I.size) + 1j * rng.standard_normal(I.size)
    w = rng.standard_normal(I.size) + 1j * rng.standard_normal(I.size)
    Gv = G.apply(v)
    out = {"right_inverse": _rel(L @ Gv, v)}
    u = left_inverse_fields(grid, tau, 2, seed)
    out["left_inverse"] = _rel(G.apply(L @ u), u)
    off = np.setdiff1d(grid.boundary, d.s_plus_tau)
    out["support"] = float(np.abs(Gv[off]).max() / np.abs(Gv).max())
    a, b = inner(grid, Gv, w), inner(grid, v, Gm.apply(w))
    out["adjoint"] = abs(a - b) / max(abs(a), 1e-300)
    Pv = G.apply_projector(v)
    out["projector"] = _rel(G.apply_projector(Pv[I]), Pv)
    out["norm"] = G.norm()
    S = assemble_single_layer(G)
    out["single_layer_support"] = S.support_residual
    return out


def run_selftest(config: Optional[RunConfig] = None, quick: bool = False, out_csv=None,
                 progress: Optional[Callable[[str], None]] = None) -> SelftestReport:
    """Run the invariant suites; ``quick`` uses a coarse grid and two ``tau``."""
    config = config or RunConfig()
    t0 = time.perf_counter()
    recs: List[CheckRecord] = []
    say = progress or (lambda s: None)
    man = config.manifold
    if quick:
        man = ManifoldConfig(x1=man.x1, nx1=9, nrho=8, ntheta=16, metric=man.metric, gamma_i=man.gamma_i, c=man.c)
    grid = build_manifold(man)
    q = phantom(grid, config.phantom)
    taus = list(config.taus[:2]) if quick else list(config.taus)
    rng = np.random.default_rng(config.seed)

    with thread_limit():
        say("forward identities")
        u = rng.standard_normal(grid.n_nodes) + 1j * rng.standard_normal(grid.n_nodes)
        v = rng.standard_normal(grid.n_nodes) + 1j * rng.standard_normal(grid.n_nodes)
        gi = green_identity_residual(grid, u, v)
        recs.append(CheckRecord("green_identity", 0.0, gi, 1e-10, gi <= 1e-10))
        qq = q if np.any(q != 0) else np.ones(grid.n_nodes)
        r = integral_identity_residual(grid, qq, 10, config.seed)
        recs.append(CheckRecord("integral_identity", 0.0, r, 1e-10, r <= 1e-10))
        B = grid.boundary
        dq, d0 = dtn(grid, None, B, B, "q"), dtn(grid, None, B, B, "0")
        z = float(np.abs(dq.matrix - d0.matrix).max())
        recs.append(CheckRecord("zero_potential_dtn", 0.0, z, 0.0, z == 0.0))

        norms = []
        for tau in taus:
            say(f"green operator tau={tau:g}")
            c = green_checks(grid, tau, config.seed)
            norms.append(c["norm"])
            for key, thr in (("right_inverse", 1e-8), ("left_inverse", 1e-8), ("support", 1e-12), ("adjoint", 1e-8),
                             ("projector", 1e-8), ("single_layer_support", 1e-12)):
                recs.append(CheckRecord(key, tau, c[key], thr, c[key] <= thr))
            kappa = c["norm"] * float(np.abs(q).max())
            contr = kappa < 1.0
            recs.append(CheckRecord("contraction", tau, kappa, 1.0, contr, not contr,
                                    "" if contr else "NotContracting: raise tau"))
        if len(taus) >= 2:
            slope = float(np.polyfit(np.log(taus), np.log(norms), 1)[0])
            ok = -1.3 <= slope <= -0.7
            recs.append(CheckRecord("green_norm_slope", float("nan"), slope, -0.7, ok, False, "range [-1.3, -0.7]"))

        say("factorization identity")
        tau = taus[0]
        G = GreenOperator(grid, tau)
        dset = classify_boundary(grid, tau)
        rows, cols = dset.pm_minus, dset.pm_plus
        Sq = DirichletSolver(grid, q)
        Lq, L0 = dtn(grid, q, cols, rows, "q", Sq), dtn(grid, None, cols, rows, "0")
        S = assemble_single_layer(G)
        pc, pr = np.searchsorted(B, cols), np.searchsorted(B, rows)
        F = np.zeros((grid.n_nodes, 4))
        F[cols] = rng.standard_normal((cols.size, 4))
        lhs = S.matrix[np.ix_(pc, pr)] @ ((Lq.matrix - L0.matrix) @ F[cols])
        rhs = factorization_rhs(grid, G, q, F, Sq)[pc]
        fr = _rel(lhs, rhs)
        recs.append(CheckRecord("factorization", tau, fr, 1e-8, fr <= 1e-8))

        say("CGO decay")
        geo = chord_geodesic(grid, 0.3, 0.0)
        chart = build_polar_chart(grid, geo, config.epsilon)
        b = Bump(chart.theta0, config.bump_width)
        r0s, r1s = [], []
        for tau in taus:
            d = classify_boundary(grid, tau)
            bun = build_cgo_harmonic(grid, d, chart, tau, 0.0, b, GLOBAL)
            recs.append(CheckRecord("cgo_support", tau, bun.support_max_outside, 1e-8,
                                    bun.support_max_outside <= 1e-8))
            r0s.append(bun.r0_norm)
            try:
                build_cgo_schrodinger(grid, GreenOperator(grid, tau), q, bun, config.neumann_tol)
                r1s.append(tau * bun.r1_norm)
            except NotContracting as exc:
                recs.append(CheckRecord("neumann", tau, float("nan"), 1.0, False, True, str(exc)))
        if len(taus) >= 2:
            recs.append(CheckRecord("r0_decay", float(taus[-1]), r0s[-1] / r0s[0], 0.5, r0s[-1] <= 0.5 * r0s[0]))
        if len(r1s) >= 2:
            # bounded: never more than a decade above the smallest-tau value
            growth = max(r1s) / max(r1s[0], 1e-300)
            recs.append(CheckRecord("tau_r1_bounded", float("nan"), growth, 10.0, growth <= 10.0))

        say("filtered backprojection")
        tg = transversal_grid(64, 64)
        fam = ChordFamily(64, 128, True)
        gauss = lambda x, y: np.exp(-(x * x + y * y) / (2 * 0.25**2))
        sino = forward_ert(gauss, 0.0, fam, step=2e-3)
        recf = np.real(fbp_invert(sino, fam, tg))
        tru = gauss(tg.X, tg.Y)
        err = math.sqrt(np.sum(tg.area * (recf - tru) ** 2) / np.sum(tg.area * tru**2))
        recs.append(CheckRecord("fbp_gaussian", 0.0, err, 0.10, err <= 0.10))

    rep = SelftestReport(recs, time.perf_counter() - t0)
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        rep.write_csv(out_csv)
    return rep


__all__ = [
    "CheckRecord",
    "SelftestReport",
    "green_identity_residual",
    "integral_identity_residual",
    "green_checks",
    "run_selftest",
]

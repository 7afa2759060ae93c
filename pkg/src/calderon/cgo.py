"""Complex geometrical optics solutions.

With ``E_tau = exp(-tau x1)`` the harmonic solutions are
``u0 = exp(tau x1) (a + r0)`` with amplitude

    a = exp(i tau r) |g|^{-1/4} c^{1/2} exp(i lambda (x1 + i r)) b(theta)

in polar coordinates ``(r, theta)`` centred outside ``M0``.  The remainder
solves ``L_tau r0 = -L_tau a`` with ``tr r0 = f^-`` on ``S-_tau``, so the
trace of ``u0`` vanishes on the prescribed part of ``S-_tau``.  Solutions of
the Schrodinger equation add ``exp(tau x1) r1`` with
``(I + G_tau q) r1 = -G_tau q (a + r0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .carleman import GreenOperator, RtauSolver
from .errors import BumpOutsideE, InvalidConfig, NotContracting, SupportViolation
from .forward import as_values, assemble_conjugated, laplacian, volume_norm
from .geometry import BoundaryDecomposition, ManifoldGrid, PolarChart

PARTIAL = "partial"
GLOBAL = "global"
MODES = (PARTIAL, GLOBAL)


# ---------------------------------------------------------------------------
# angular profiles
# ---------------------------------------------------------------------------


def _smooth_step(t):
    """C-infinity step, 0 for ``t <= 0`` and 1 for ``t >= 1``."""
    t = np.asarray(t, dtype=float)

    def psi(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    a = psi(t)
    b = psi(1.0 - t)
    return a / (a + b)


@dataclass(frozen=True)
class Bump:
    """Angular profile ``b(theta)`` around ``center``.

    ``kind="bump"`` is ``exp(1 - 1/(1 - s^2))`` with ``s = (theta - center)
    / width``, supported in ``|theta - center| < width``.  ``kind="plateau"``
    equals 1 on ``|theta - center| <= width`` and falls smoothly to 0 at
    ``width + ramp``.  ``kind="one"`` is identically 1 and ``kind="zero"``
    vanishes.
    """

    center: float
    width: float = 0.2
    kind: str = "bump"
    ramp: float = 0.1

    def __post_init__(self):
        if self.kind not in ("bump", "plateau", "one", "zero"):
            raise InvalidConfig(f"unknown bump kind {self.kind!r}")
        if self.kind in ("bump", "plateau") and not self.width > 0:
            raise InvalidConfig("bump width must be positive")

    @property
    def support_radius(self) -> float:
        if self.kind == "bump":
            return self.width
        if self.kind == "plateau":
            return self.width + self.ramp
        return math.inf if self.kind == "one" else 0.0

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        d = theta - self.center
        if self.kind == "zero":
            return np.zeros_like(theta)
        if self.kind == "one":
            return np.ones_like(theta)
        if self.kind == "plateau":
            return _smooth_step((self.width + self.ramp - np.abs(d)) / self.ramp)
        s = d / self.width
        out = np.zeros_like(theta)
        inside = np.abs(s) < 1
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
        return out

    def mass(self, n: int = 4001) -> float:
        """``int b(theta) d theta`` (exact to round-off for smooth profiles)."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "one":
            return math.inf
        R = self.support_radius
        t = np.linspace(self.center - R, self.center + R, n)
        v = self(t)
        return float(np.sum(v[1:] + v[:-1]) * 0.5 * (t[1] - t[0]))

    def plateau_cover(self, ramp: Optional[float] = None) -> "Bump":
        """Plateau profile equal to one on the support of ``self``."""
        ramp = self.ramp if ramp is None else ramp
        return Bump(self.center, self.support_radius, "plateau", ramp)


# ---------------------------------------------------------------------------
# amplitude and sources
# ---------------------------------------------------------------------------


def _transversal(grid: ManifoldGrid, arr2d: np.ndarray) -> np.ndarray:
    """Broadcast a transversal ``(nrho, ntheta)`` array to every node."""
    return np.tile(np.asarray(arr2d).ravel(), grid.shape[0])


def keep_out_rim(grid: ManifoldGrid, decomp: BoundaryDecomposition) -> np.ndarray:
    """Rim angles (mask over ``theta``) where a partial-mode amplitude must vanish.

    These are the closure of ``dM0 \\ E`` and the angles of the lateral nodes
    of ``V^{tau,delta}``, whose boundary extension must be zero.
    """
    e_arc = decomp.e_arc
    nt = grid.shape[2]
    mask = np.zeros(nt, dtype=bool)
    if e_arc is not None:
        rel = (grid.theta - e_arc[0]) % (2 * math.pi)
        # both endpoints of E belong to the closure of its complement
        mask |= (rel >= (e_arc[1] - e_arc[0]) - 1e-12) | (rel <= 1e-12) | (rel >= 2 * math.pi - 1e-12)
    lat_v = np.intersect1d(decomp.v_tau_delta, decomp.pm_tan)
    mask[lat_v % nt] = True
    return mask


def _check_bump_in_e(grid: ManifoldGrid, chart: PolarChart, b: Bump, keep_out) -> None:
    """Raise unless ``b`` vanishes at the rim angles flagged in ``keep_out``."""
    if keep_out is None:
        return
    vals = b(chart.theta[-1][keep_out])
    if np.any(vals != 0.0):
        raise BumpOutsideE("bump does not vanish near the inaccessible set")


def _transversal_factor(grid: ManifoldGrid, chart: PolarChart, tau: float, lam: float, b: Bump) -> np.ndarray:
    """x1-independent part ``exp((i tau - lam) r) |g|^{-1/4} c^{1/2} b(theta)`` per transversal node."""
    r = np.asarray(chart.r).ravel()
    th = np.asarray(chart.theta).ravel()
    sg = np.asarray(chart.sqrt_det_g(grid)).ravel()
    return np.exp((1j * tau - lam) * r) * (sg**-0.5 * math.sqrt(grid.c) * b(th))


def _with_x1_phase(grid: ManifoldGrid, lam: float, T: np.ndarray) -> np.ndarray:
    """Nodal field(s) ``exp(i lam x1) T`` from transversal factor(s) ``T``."""
    ph = np.exp(1j * lam * grid.x1)
    out = ph.reshape((-1,) + (1,) * T.ndim) * T[None]
    return out.reshape((grid.n_nodes,) + T.shape[1:])


def amplitude_envelope(grid: ManifoldGrid, chart: PolarChart, lam: float, b: Bump) -> np.ndarray:
    """``|g|^{-1/4} c^{1/2} exp(i lambda (x1 + i r)) b(theta)`` at every node."""
    return _with_x1_phase(grid, lam, _transversal_factor(grid, chart, 0.0, lam, b))


def amplitude(grid: ManifoldGrid, chart: PolarChart, tau: float, lam: float, b: Bump,
              keep_out=None) -> np.ndarray:
    """CGO amplitude ``a`` at every node.

    ``keep_out`` (partial mode, see :func:`keep_out_rim`) flags rim angles
    where ``b`` must vanish; ``BumpOutsideE`` is raised otherwise.
    """
    _check_bump_in_e(grid, chart, b, keep_out)
    return _with_x1_phase(grid, lam, _transversal_factor(grid, chart, tau, lam, b))


def amplitude_source(grid: ManifoldGrid, chart: PolarChart, tau: float, lam: float, b: Bump) -> np.ndarray:
    """``-exp(i tau r) (-Delta_g) v`` on interior nodes, ``v`` the envelope."""
    v = amplitude_envelope(grid, chart, lam, b)
    r = _transversal(grid, chart.r)[grid.interior]
    return -np.exp(1j * tau * r) * (laplacian(grid).matrix @ v)


def direct_source(grid: ManifoldGrid, tau: float, a: np.ndarray) -> np.ndarray:
    """``-L_tau a`` on interior nodes (the source that makes ``u0`` harmonic)."""
    return -(assemble_conjugated(grid, None, tau).matrix @ a)


def boundary_extension(decomp: BoundaryDecomposition, a: np.ndarray, mode: str = PARTIAL,
                       grid: Optional[ManifoldGrid] = None) -> np.ndarray:
    """``f^-`` on ``S-_tau`` (ordered like ``decomp.s_minus_tau``).

    Partial mode: ``-a`` on ``V^{tau,delta}`` and 0 on ``Gamma_a^{tau,delta}``;
    the values on lateral nodes must vanish.  Global mode: ``-a`` throughout.
    """
    if mode not in MODES:
        raise InvalidConfig(f"mode must be one of {MODES}")
    sm = decomp.s_minus_tau
    vals = np.zeros((sm.size,) + np.shape(a)[1:], dtype=np.result_type(a, float))
    if mode == GLOBAL:
        vals[:] = -a[sm]
        return vals
    on_v = np.isin(sm, decomp.v_tau_delta)
    vals[on_v] = -a[sm[on_v]]
    tan = np.isin(sm, decomp.pm_tan)
    if np.any(vals[tan] != 0.0):
        raise SupportViolation("partial-mode boundary extension does not vanish on dM_tan")
    return vals


# ---------------------------------------------------------------------------
# bundles
# ---------------------------------------------------------------------------


@dataclass
class CgoBundle:
    """One CGO solution and its construction data."""

    tau: float
    lam: float
    bump: Bump
    mode: str
    a: np.ndarray
    f: np.ndarray
    f_minus: np.ndarray
    r0: np.ndarray
    u0: np.ndarray
    r0_norm: float
    support_max_outside: float
    allowed: np.ndarray
    r1: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    r1_norm: Optional[float] = None
    neumann_terms: Optional[int] = None
    contraction: Optional[float] = None
    extras: dict = field(default_factory=dict)

    @property
    def solution(self) -> np.ndarray:
        return self.u if self.u is not None else self.u0

    def trace(self, grid: ManifoldGrid, which: str = "u") -> np.ndarray:
        arr = self.solution if which == "u" else self.u0
        return arr[grid.boundary]

    def sidecar(self) -> dict:
        return {
            "tau": self.tau,
            "lambda": self.lam,
            "theta0": self.bump.center,
            "width": self.bump.width,
            "mode": self.mode,
            "r0_norm": self.r0_norm,
            "support_max_outside": self.support_max_outside,
        }


def allowed_trace_set(decomp: BoundaryDecomposition, mode: str) -> np.ndarray:
    """``Gamma_{sgn tau}`` (partial) or ``dM_{sgn tau}`` (global)."""
    s = decomp.sign
    return decomp.gamma_sign(s) if mode == PARTIAL else decomp.pm_sign(s)


def _support_outside(grid, decomp, w, mode):
    allowed = allowed_trace_set(decomp, mode)
    outside = np.setdiff1d(grid.boundary, allowed)
    if outside.size == 0:
        return 0.0, allowed
    return float(np.abs(w[outside]).max()), allowed


def build_cgo_harmonic(
    grid: ManifoldGrid,
    decomp: BoundaryDecomposition,
    chart: PolarChart,
    tau: float,
    lam: float,
    b: Bump,
    mode: str = PARTIAL,
    rsolver: Optional[RtauSolver] = None,
    check_support: bool = True,
) -> CgoBundle:
    """Harmonic CGO ``u0 = exp(tau x1) (a + r0)``.

    The support certificate ``support_max_outside`` is the largest ``|a + r0|``
    on boundary nodes outside the allowed set, relative to ``max |a|``.
    """
    if mode not in MODES:
        raise InvalidConfig(f"mode must be one of {MODES}")
    keep_out = keep_out_rim(grid, decomp) if mode == PARTIAL else None
    a = amplitude(grid, chart, tau, lam, b, keep_out)
    f = direct_source(grid, tau, a)
    fm = boundary_extension(decomp, a, mode)
    rsolver = rsolver or RtauSolver(grid, tau, decomp=decomp)
    if not np.array_equal(rsolver.s_minus, decomp.s_minus_tau):
        raise InvalidConfig("R_tau solver and decomposition disagree on S-_tau")
    r0 = rsolver.solve(f, fm)
    w = a + r0
    u0 = np.exp(tau * grid.node_x1) * w
    amax = float(np.abs(a).max())
    out, allowed = _support_outside(grid, decomp, w, mode)
    rel = out / amax if amax > 0 else out
    if check_support and rel > 1e-8:
        raise SupportViolation(f"CGO trace leaks outside the allowed set ({rel:.2e})")
    return CgoBundle(
        tau=float(tau),
        lam=float(lam),
        bump=b,
        mode=mode,
        a=a,
        f=f,
        f_minus=fm,
        r0=r0,
        u0=u0,
        r0_norm=volume_norm(grid, r0),
        support_max_outside=rel,
        allowed=allowed,
    )


def neumann_bound(contraction: float, tol: float) -> int:
    """Number of terms guaranteed by the geometric-series bound."""
    if contraction <= 0:
        return 1
    return int(1 + math.ceil(math.log(tol) / math.log(contraction)))


def build_cgo_schrodinger(
    grid: ManifoldGrid,
    green: GreenOperator,
    q,
    bundle: CgoBundle,
    tol: float = 1e-12,
    max_terms: int = 500,
    decomp: Optional[BoundaryDecomposition] = None,
) -> CgoBundle:
    """Add ``exp(tau x1) r1`` so that ``(-Delta_g + q) u = 0``.

    ``r1`` is summed as a Neumann series in ``-G_tau q``; requires
    ``||G_tau|| ||q||_inf < 1``.
    """
    if green.tau != bundle.tau:
        raise InvalidConfig("Green operator and bundle have different tau")
    I = grid.interior
    qv = as_values(grid, q)
    qi = qv[I]
    qmax = float(np.abs(qi).max()) if qi.size else 0.0
    kappa = green.norm() * qmax
    if kappa >= 1.0:
        raise NotContracting(f"||G_tau q|| <= {kappa:.3f} is not a contraction; raise tau")
    w = (bundle.a + bundle.r0)[I]
    term = -green.apply(qi * w)
    r1 = term.copy()
    n = 1
    if qmax > 0:
        base = max(volume_norm(grid, term), 1e-300)
        while n < max_terms:
            term = -green.apply(qi * term[I])
            r1 += term
            n += 1
            if volume_norm(grid, term) <= tol * base:
                break
        else:
            raise NotContracting("Neumann series did not converge")
    u = bundle.u0 + np.exp(green.tau * grid.node_x1) * r1
    d = decomp or green.decomp
    out, _ = _support_outside(grid, d, bundle.a + bundle.r0 + r1, bundle.mode)
    amax = float(np.abs(bundle.a).max())
    bundle.r1 = r1
    bundle.u = u
    bundle.r1_norm = volume_norm(grid, r1)
    bundle.neumann_terms = n
    bundle.contraction = kappa
    bundle.support_max_outside = max(bundle.support_max_outside, out / amax if amax > 0 else out)
    return bundle


def build_partner(
    grid: ManifoldGrid,
    decomp_minus: BoundaryDecomposition,
    chart: PolarChart,
    tau: float,
    lam: float,
    b2: Bump,
    mode: str = PARTIAL,
    rsolver: Optional[RtauSolver] = None,
) -> CgoBundle:
    """Harmonic ``u2`` paired with ``u1`` built at ``tau``.

    ``u2`` is the complex conjugate of the harmonic CGO at ``-tau`` with the
    same ``lambda``, so ``u2 conj(u1)`` has no ``tau``-oscillation and its
    trace lives in ``Gamma_{-sgn tau}``.
    """
    bun = build_cgo_harmonic(grid, decomp_minus, chart, -tau, lam, b2, mode, rsolver)
    bun.a = np.conj(bun.a)
    bun.f = np.conj(bun.f)
    bun.f_minus = np.conj(bun.f_minus)
    bun.r0 = np.conj(bun.r0)
    bun.u0 = np.conj(bun.u0)
    bun.extras["conjugated"] = True
    return bun


# ---------------------------------------------------------------------------
# batches over geodesics
# ---------------------------------------------------------------------------


@dataclass
class CgoBatch:
    """Harmonic CGOs for several ``(chart, bump)`` pairs, one column each.

    ``u`` and ``r1`` are filled by :func:`schrodinger_batch`.
    """

    tau: float
    lam: float
    mode: str
    a: np.ndarray
    r0: np.ndarray
    u0: np.ndarray
    r0_norm: np.ndarray
    support_max_outside: np.ndarray
    conjugated: bool = False
    r1: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    r1_norm: Optional[np.ndarray] = None
    neumann_terms: Optional[int] = None

    @property
    def solution(self) -> np.ndarray:
        return self.u if self.u is not None else self.u0


def _column_norms(grid: ManifoldGrid, V: np.ndarray) -> np.ndarray:
    w = grid.volume_weights[grid.interior]
    return np.sqrt(np.sum(w[:, None] * np.abs(V[grid.interior]) ** 2, axis=0))


def harmonic_batch(
    grid: ManifoldGrid,
    decomp: BoundaryDecomposition,
    charts: Sequence[PolarChart],
    tau: float,
    lam: float,
    bumps: Sequence[Bump],
    mode: str = PARTIAL,
    rsolver: Optional[RtauSolver] = None,
    conjugate: bool = False,
    check_support: bool = True,
) -> CgoBatch:
    """Column-stacked :func:`build_cgo_harmonic` (``conjugate`` gives partners)."""
    if mode not in MODES:
        raise InvalidConfig(f"mode must be one of {MODES}")
    if len(charts) != len(bumps):
        raise InvalidConfig("one bump per chart is required")
    keep_out = keep_out_rim(grid, decomp) if mode == PARTIAL else None
    for ch, b in zip(charts, bumps):
        _check_bump_in_e(grid, ch, b, keep_out)
    T = np.stack([_transversal_factor(grid, ch, tau, lam, b) for ch, b in zip(charts, bumps)], axis=1)
    A = _with_x1_phase(grid, lam, T)
    F = direct_source(grid, tau, A)
    FM = boundary_extension(decomp, A, mode)
    rsolver = rsolver or RtauSolver(grid, tau, decomp=decomp)
    if not np.array_equal(rsolver.s_minus, decomp.s_minus_tau):
        raise InvalidConfig("R_tau solver and decomposition disagree on S-_tau")
    R0 = rsolver.solve(F, FM)
    W = A + R0
    allowed = allowed_trace_set(decomp, mode)
    outside = np.setdiff1d(grid.boundary, allowed)
    amax = np.abs(A).max(axis=0)
    amax = np.where(amax > 0, amax, 1.0)
    rel = np.abs(W[outside]).max(axis=0) / amax if outside.size else np.zeros(A.shape[1])
    if check_support and np.any(rel > 1e-8):
        raise SupportViolation(f"CGO trace leaks outside the allowed set ({rel.max():.2e})")
    U0 = np.exp(tau * grid.node_x1)[:, None] * W
    norms = _column_norms(grid, R0)
    if conjugate:
        A, R0, U0 = np.conj(A), np.conj(R0), np.conj(U0)
    return CgoBatch(float(tau), float(lam), mode, A, R0, U0, norms, rel, conjugate)


def schrodinger_batch(grid: ManifoldGrid, green: GreenOperator, q, batch: CgoBatch,
                      tol: float = 1e-12, max_terms: int = 500) -> CgoBatch:
    """Neumann-series correction of every column of ``batch`` (not for partners)."""
    if batch.conjugated:
        raise InvalidConfig("the Schroedinger correction applies to u1, not to partners")
    if green.tau != batch.tau:
        raise InvalidConfig("Green operator and batch have different tau")
    I = grid.interior
    qi = as_values(grid, q)[I]
    qmax = float(np.abs(qi).max()) if qi.size else 0.0
    kappa = green.norm() * qmax
    if kappa >= 1.0:
        raise NotContracting(f"||G_tau q|| <= {kappa:.3f} is not a contraction; raise tau")
    term = -green.apply(qi[:, None] * (batch.a + batch.r0)[I])
    R1 = term.copy()
    n = 1
    if qmax > 0:
        base = np.maximum(_column_norms(grid, term), 1e-300)
        while n < max_terms:
            term = -green.apply(qi[:, None] * term[I])
            R1 += term
            n += 1
            if np.all(_column_norms(grid, term) <= tol * base):
                break
        else:
            raise NotContracting("Neumann series did not converge")
    batch.r1 = R1
    batch.u = batch.u0 + np.exp(green.tau * grid.node_x1)[:, None] * R1
    batch.r1_norm = _column_norms(grid, R1)
    batch.neumann_terms = n
    return batch


__all__ = [
    "PARTIAL",
    "GLOBAL",
    "Bump",
    "amplitude_envelope",
    "amplitude",
    "amplitude_source",
    "direct_source",
    "boundary_extension",
    "CgoBundle",
    "allowed_trace_set",
    "build_cgo_harmonic",
    "build_cgo_schrodinger",
    "build_partner",
    "neumann_bound",
    "CgoBatch",
    "harmonic_batch",
    "schrodinger_batch",
]

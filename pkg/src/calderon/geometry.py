"""Discrete cylinder ``[a, b] x M0`` over the unit disk.

The transversal grid is polar with radial nodes ``rho_m = (m + 1/2) drho``
and ``drho = 1 / (nrho - 1/2)``, so the outermost ring sits exactly on the
unit circle and no node lies on the axis.  Each node owns a finite volume
cell; cell measures give the quadrature weights used by every inner product
in the package.

The metric is ``g = c (dx1^2 + c0(x') e)`` with a constant scalar ``c`` and a
transversal conformal factor ``c0`` taken from a preset.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import ChartFailure, InvalidConfig, MaxStepsExceeded, TangentialExit, TauZero

INTERIOR, CAP_MINUS, CAP_PLUS, LATERAL = 0, 1, 2, 3
PRESETS = ("euclidean", "conformal_gaussian")
MAX_AMPLITUDE = 0.3


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricSpec:
    preset: str = "euclidean"
    amplitude: float = 0.0
    width: float = 0.5

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise InvalidConfig(f"unknown metric preset {self.preset!r}")
        if self.preset == "conformal_gaussian":
            if not (0.0 <= self.amplitude <= MAX_AMPLITUDE):
                raise InvalidConfig(
                    f"conformal_gaussian amplitude must lie in [0, {MAX_AMPLITUDE}], "
                    f"got {self.amplitude}"
                )
            if not self.width > 0.0:
                raise InvalidConfig("conformal_gaussian width must be positive")

    @property
    def is_euclidean(self) -> bool:
        return self.preset == "euclidean" or self.amplitude == 0.0

    def c0(self, x, y):
        """Transversal conformal factor at Cartesian points."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.is_euclidean:
            return np.ones(np.broadcast(x, y).shape)
        return 1.0 + self.amplitude * np.exp(-(x * x + y * y) / self.width**2)

    def grad_sigma(self, x, y):
        """Gradient of ``sigma = log(c0) / 2``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.is_euclidean:
            z = np.zeros(np.broadcast(x, y).shape)
            return z, z.copy()
        e = self.amplitude * np.exp(-(x * x + y * y) / self.width**2)
        k = -e / (self.width**2 * (1.0 + e))
        return k * x, k * y


@dataclass(frozen=True)
class GammaISpec:
    """Inaccessible lateral region ``theta_range x x1_range``.

    ``theta_range`` is read counter-clockwise from its first to its second
    entry, so ``[5.5, 0.8]`` wraps through zero.
    """

    theta_range: tuple = (0.0, 2.0 * math.pi)
    x1_range: tuple = (-math.inf, math.inf)

    @classmethod
    def full(cls) -> "GammaISpec":
        return cls()

    @classmethod
    def empty(cls) -> "GammaISpec":
        """No inaccessible region: the whole lateral band carries data."""
        return cls((0.0, 0.0), (math.inf, -math.inf))

    @property
    def is_empty(self) -> bool:
        return self.x1_range[0] > self.x1_range[1]

    @property
    def angular_span(self) -> float:
        t0, t1 = self.theta_range
        if t1 - t0 >= 2.0 * math.pi - 1e-12:
            return 2.0 * math.pi
        return (t1 - t0) % (2.0 * math.pi)

    def contains_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        span = self.angular_span
        if span >= 2.0 * math.pi:
            return np.ones(theta.shape, dtype=bool)
        rel = (theta - self.theta_range[0]) % (2.0 * math.pi)
        return rel <= span + 1e-12

    def e_arc(self) -> Optional[tuple]:
        """Open accessible arc ``E`` as ``(start, end)`` with ``end > start``."""
        span = self.angular_span
        if self.is_empty:
            return (0.0, 2.0 * math.pi)
        if span >= 2.0 * math.pi:
            return None
        start = self.theta_range[1]
        return (start, start + 2.0 * math.pi - span)


@dataclass(frozen=True)
class ManifoldConfig:
    x1: tuple = (-1.0, 1.0)
    nx1: int = 17
    nrho: int = 16
    ntheta: int = 32
    metric: MetricSpec = field(default_factory=MetricSpec)
    gamma_i: Optional[GammaISpec] = None
    c: float = 1.0

    def validate(self) -> None:
        a, b = self.x1
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            raise InvalidConfig(f"degenerate x1 interval {self.x1}")
        for name in ("nx1", "nrho", "ntheta"):
            if int(getattr(self, name)) < 4:
                raise InvalidConfig(f"{name} must be at least 4")
        if not (np.isfinite(self.c) and self.c > 0.0):
            raise InvalidConfig("conformal factor c must be positive")
        self.metric.validate()

    @classmethod
    def from_dict(cls, d: dict) -> "ManifoldConfig":
        try:
            metric = MetricSpec(**d.get("metric", {}))
            gi = d.get("gamma_i")
            gamma_i = None
            if gi is not None:
                gamma_i = GammaISpec(
                    theta_range=tuple(float(t) for t in gi.get("theta_range", (0.0, 2 * math.pi))),
                    x1_range=tuple(float(t) for t in gi.get("x1_range", (-math.inf, math.inf))),
                )
            cfg = cls(
                x1=tuple(float(t) for t in d.get("x1", (-1.0, 1.0))),
                nx1=int(d.get("nx1", 17)),
                nrho=int(d.get("nrho", 16)),
                ntheta=int(d.get("ntheta", 32)),
                metric=metric,
                gamma_i=gamma_i,
                c=float(d.get("c", 1.0)),
            )
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(f"malformed manifold config: {exc}") from exc
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = {
            "x1": list(self.x1),
            "nx1": self.nx1,
            "nrho": self.nrho,
            "ntheta": self.ntheta,
            "metric": asdict(self.metric),
            "c": self.c,
        }
        if self.gamma_i is not None:
            d["gamma_i"] = {
                "theta_range": list(self.gamma_i.theta_range),
                "x1_range": list(self.gamma_i.x1_range),
            }
        return d

    @classmethod
    def from_json(cls, path) -> "ManifoldConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


class ManifoldGrid:
    """Finite-volume grid on the cylinder.

    Nodes are flattened with ``x1`` outermost, then ``rho``, then ``theta``;
    :meth:`index` gives the flat index of ``(k, m, l)``.

    Attributes
    ----------
    x1, rho, theta : ndarray
        One-dimensional node coordinates.
    c0 : ndarray, shape (nrho, ntheta)
        Transversal conformal factor at the transversal nodes.
    w_perp : ndarray, shape (nrho, ntheta)
        Transversal cell measures ``c0 * area``.
    omega : ndarray, shape (nx1,)
        One-dimensional cell lengths (half cells at the caps).
    volume_weights : ndarray, shape (N,)
        Quadrature weights for ``dVol_g``.
    sigma : ndarray, shape (N,)
        Surface quadrature weights, zero on interior nodes.
    normal_phi : ndarray, shape (N,)
        Outward normal derivative of ``phi = x1``, zero on interior nodes.
    """

    def __init__(self, config: ManifoldConfig):
        config.validate()
        self.config = config
        self.metric = config.metric
        self.c = float(config.c)
        a, b = config.x1
        nx1, nr, nt = config.nx1, config.nrho, config.ntheta
        self.shape = (nx1, nr, nt)
        self.n_nodes = nx1 * nr * nt

        self.x1 = np.linspace(a, b, nx1)
        self.h = (b - a) / (nx1 - 1)
        self.drho = 1.0 / (nr - 0.5)
        self.rho = (np.arange(nr) + 0.5) * self.drho
        self.rho[-1] = 1.0
        self.dtheta = 2.0 * math.pi / nt
        self.theta = np.arange(nt) * self.dtheta

        # transversal finite volumes
        lo = np.maximum(self.rho - 0.5 * self.drho, 0.0)
        hi = np.minimum(self.rho + 0.5 * self.drho, 1.0)
        self.rho_lo, self.rho_hi = lo, hi
        self.X = self.rho[:, None] * np.cos(self.theta)[None, :]
        self.Y = self.rho[:, None] * np.sin(self.theta)[None, :]
        self.c0 = self.metric.c0(self.X, self.Y)
        area = 0.5 * (hi**2 - lo**2) * self.dtheta
        self.area = np.repeat(area[:, None], nt, axis=1)
        self.w_perp = self.c0 * self.area
        self.g0 = self.c0[..., None, None] * np.eye(2)

        self.omega = np.full(nx1, self.h)
        self.omega[0] = self.omega[-1] = 0.5 * self.h

        self.volume_weights = (
            self.c**1.5 * self.omega[:, None, None] * self.w_perp[None, :, :]
        ).ravel()

        # node classes; rim nodes on a cap belong to the cap
        cls = np.zeros(self.shape, dtype=np.int8)
        cls[:, -1, :] = LATERAL
        cls[0] = CAP_MINUS
        cls[-1] = CAP_PLUS
        self.node_class = cls.ravel()
        self.interior = np.flatnonzero(self.node_class == INTERIOR)
        self.boundary = np.flatnonzero(self.node_class != INTERIOR)
        self.cap_minus = np.flatnonzero(self.node_class == CAP_MINUS)
        self.cap_plus = np.flatnonzero(self.node_class == CAP_PLUS)
        self.lateral = np.flatnonzero(self.node_class == LATERAL)
        self.is_boundary = self.node_class != INTERIOR

        sigma = np.zeros(self.shape)
        rim_c0 = self.c0[-1]
        sigma[:, -1, :] = self.c * self.omega[:, None] * np.sqrt(rim_c0)[None, :] * self.dtheta
        sigma[0] = self.c * self.w_perp
        sigma[-1] = self.c * self.w_perp
        self.sigma = sigma.ravel()

        nphi = np.zeros(self.shape)
        nphi[0] = -1.0 / math.sqrt(self.c)
        nphi[-1] = 1.0 / math.sqrt(self.c)
        self.normal_phi = nphi.ravel()

        kk, mm, ll = np.meshgrid(np.arange(nx1), np.arange(nr), np.arange(nt), indexing="ij")
        self.k_of = kk.ravel()
        self.m_of = mm.ravel()
        self.l_of = ll.ravel()
        self.node_x1 = self.x1[self.k_of]
        self.node_x = self.X[self.m_of, self.l_of]
        self.node_y = self.Y[self.m_of, self.l_of]
        self.node_theta = self.theta[self.l_of]

        self._stiffness = None

    # -- indexing ---------------------------------------------------------
    def index(self, k, m, l):
        _, nr, nt = self.shape
        return (np.asarray(k) * nr + np.asarray(m)) * nt + np.asarray(l)

    @property
    def surface_weights(self) -> np.ndarray:
        return self.sigma[self.boundary]

    @property
    def c_field(self) -> np.ndarray:
        return np.full(self.n_nodes, self.c)

    def g0_eigenvalue_bounds(self) -> tuple:
        return float(self.c0.min()), float(self.c0.max())

    # -- finite volume conductances --------------------------------------
    def transversal_stiffness(self) -> sp.csr_matrix:
        """Stiffness of ``-Delta_e`` on the transversal cells (unscaled).

        The two-dimensional Dirichlet form is conformally invariant, so
        ``c0`` does not enter.
        """
        nr, nt = self.shape[1:]
        idx = np.arange(nr * nt).reshape(nr, nt)
        rows, cols, vals = [], [], []
        # radial faces between m and m+1
        rf = self.rho[:-1] + 0.5 * self.drho
        dr = self.rho[1:] - self.rho[:-1]
        kr = rf * self.dtheta / dr
        i0 = idx[:-1, :].ravel()
        i1 = idx[1:, :].ravel()
        kv = np.repeat(kr, nt)
        rows += [i0, i1]
        cols += [i1, i0]
        vals += [-kv, -kv]
        # angular faces between l and l+1
        ka = (self.rho_hi - self.rho_lo) / (self.rho * self.dtheta)
        j0 = idx.ravel()
        j1 = np.roll(idx, -1, axis=1).ravel()
        kv2 = np.repeat(ka, nt)
        rows += [j0, j1]
        cols += [j1, j0]
        vals += [-kv2, -kv2]
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
        off = sp.coo_matrix((v, (r, c)), shape=(nr * nt, nr * nt)).tocsr()
        diag = -np.asarray(off.sum(axis=1)).ravel()
        return (off + sp.diags(diag)).tocsr()

    def x1_stiffness(self) -> sp.csr_matrix:
        n = self.shape[0]
        e = np.full(n - 1, 1.0 / self.h)
        d = np.zeros(n)
        d[:-1] += e
        d[1:] += e
        return sp.diags([-e, d, -e], [-1, 0, 1]).tocsr()

    def stiffness(self) -> sp.csr_matrix:
        """Symmetric stiffness ``K`` with ``(K u, u) = int |du|_g^2 dVol_g``."""
        if self._stiffness is None:
            kperp = self.transversal_stiffness()
            k1 = self.x1_stiffness()
            wp = sp.diags(self.w_perp.ravel())
            om = sp.diags(self.omega)
            K = math.sqrt(self.c) * (sp.kron(k1, wp) + sp.kron(om, kperp))
            self._stiffness = K.tocsr()
        return self._stiffness

    def boundary_adjacency(self) -> sp.csr_matrix:
        """Adjacency among boundary nodes induced by the stencil."""
        K = self.stiffness().tocoo()
        b = self.is_boundary
        keep = b[K.row] & b[K.col] & (K.row != K.col)
        return sp.coo_matrix(
            (np.ones(int(keep.sum())), (K.row[keep], K.col[keep])),
            shape=K.shape,
        ).tocsr()

    def reference_volume(self, nsub: int = 8) -> float:
        """Volume of ``M`` by refined midpoint quadrature of ``c^{3/2} c0``."""
        nr = self.shape[1] * nsub
        nt = self.shape[2] * nsub
        r = (np.arange(nr) + 0.5) / nr
        t = (np.arange(nt) + 0.5) * 2 * math.pi / nt
        R, T = np.meshgrid(r, t, indexing="ij")
        c0 = self.metric.c0(R * np.cos(T), R * np.sin(T))
        area = float(np.sum(c0 * R) * (1.0 / nr) * (2 * math.pi / nt))
        a, b = self.config.x1
        return self.c**1.5 * (b - a) * area


def build_manifold(config) -> ManifoldGrid:
    """Build a :class:`ManifoldGrid` from a config object or mapping."""
    if isinstance(config, dict):
        config = ManifoldConfig.from_dict(config)
    return ManifoldGrid(config)


# ---------------------------------------------------------------------------
# boundary decomposition
# ---------------------------------------------------------------------------


@dataclass
class BoundaryDecomposition:
    """Index sets of boundary nodes for one ``(tau, delta)``.

    All sets hold flat node indices and are sorted.
    """

    tau: float
    delta: float
    pm_plus: np.ndarray
    pm_minus: np.ndarray
    pm_tan: np.ndarray
    gamma_i: np.ndarray
    gamma_a: np.ndarray
    gamma_plus: np.ndarray
    gamma_minus: np.ndarray
    s_plus_tau: np.ndarray
    s_minus_tau_delta: np.ndarray
    s_zero_tau_delta: np.ndarray
    v_tau_delta: np.ndarray
    gamma_a_tau_delta: np.ndarray
    normal_phi: np.ndarray
    e_arc: Optional[tuple]
    gamma_i_spec: GammaISpec

    @property
    def s_minus_tau(self) -> np.ndarray:
        return np.union1d(self.s_minus_tau_delta, self.s_zero_tau_delta)

    @property
    def sign(self) -> int:
        return 1 if self.tau > 0 else -1

    def pm_sign(self, s: int) -> np.ndarray:
        """``dM_+`` for ``s > 0`` and ``dM_-`` otherwise."""
        return self.pm_plus if s > 0 else self.pm_minus

    def gamma_sign(self, s: int) -> np.ndarray:
        return self.gamma_plus if s > 0 else self.gamma_minus


def lateral_distance(grid: ManifoldGrid, nodes: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Boundary distance from lateral ``nodes`` to the lateral set ``targets``.

    The lateral surface is a flat cylinder of radius ``sqrt(c0)`` at the rim
    scaled by ``sqrt(c)``; the distance is measured on that surface.
    """
    nodes = np.asarray(nodes)
    if targets.size == 0:
        return np.full(nodes.size, np.inf)
    rim = math.sqrt(float(grid.metric.c0(1.0, 0.0)))
    dx = grid.node_x1[nodes][:, None] - grid.node_x1[targets][None, :]
    dt = np.abs(grid.node_theta[nodes][:, None] - grid.node_theta[targets][None, :])
    dt = np.minimum(dt, 2 * math.pi - dt)
    d = math.sqrt(grid.c) * np.sqrt(dx**2 + (rim * dt) ** 2)
    return d.min(axis=1)


def classify_boundary(
    grid: ManifoldGrid,
    tau: float,
    delta: float = 0.3,
    gamma_i_spec: Optional[GammaISpec] = None,
) -> BoundaryDecomposition:
    """Split the boundary nodes into the Carleman sets for ``(tau, delta)``.

    ``gamma_i_spec`` defaults to the grid config's entry and, failing that,
    to the whole lateral band.  Ties at the threshold ``1 / (3 |tau|)`` go to
    ``S+``.
    """
    if tau == 0 or not np.isfinite(tau):
        raise TauZero("tau must be a nonzero finite number")
    if not delta > 0:
        raise InvalidConfig("delta must be positive")
    if gamma_i_spec is None:
        gamma_i_spec = grid.config.gamma_i or GammaISpec.full()
    bnd = grid.boundary
    nphi = grid.normal_phi
    s = 1.0 if tau > 0 else -1.0
    thr = 1.0 / (3.0 * abs(tau))
    val = s * nphi[bnd]
    tol = 1e-12
    s_plus = bnd[val >= thr - tol]
    s_minus_d = bnd[val <= -delta + tol]
    s_zero = np.setdiff1d(bnd, np.union1d(s_plus, s_minus_d))
    pm_plus = bnd[nphi[bnd] > tol]
    pm_minus = bnd[nphi[bnd] < -tol]
    pm_tan = bnd[np.abs(nphi[bnd]) <= tol]

    lat = grid.lateral
    lo, hi = gamma_i_spec.x1_range
    in_i = gamma_i_spec.contains_theta(grid.node_theta[lat]) & (
        (grid.node_x1[lat] >= lo - 1e-12) & (grid.node_x1[lat] <= hi + 1e-12)
    )
    gamma_i = lat[in_i]
    gamma_a = np.setdiff1d(pm_tan, gamma_i)
    gamma_plus = np.union1d(pm_plus, gamma_a)
    gamma_minus = np.union1d(pm_minus, gamma_a)

    s_minus = np.setdiff1d(bnd, s_plus)
    opposite = pm_minus if tau > 0 else pm_plus
    near = np.zeros(s_minus.size, dtype=bool)
    is_lat = grid.node_class[s_minus] == LATERAL
    if is_lat.any():
        near[is_lat] = lateral_distance(grid, s_minus[is_lat], gamma_i) < delta
    v = s_minus[near | np.isin(s_minus, opposite)]
    ga_td = np.setdiff1d(s_minus, v)
    return BoundaryDecomposition(
        tau=float(tau),
        delta=float(delta),
        pm_plus=pm_plus,
        pm_minus=pm_minus,
        pm_tan=pm_tan,
        gamma_i=gamma_i,
        gamma_a=gamma_a,
        gamma_plus=gamma_plus,
        gamma_minus=gamma_minus,
        s_plus_tau=s_plus,
        s_minus_tau_delta=s_minus_d,
        s_zero_tau_delta=s_zero,
        v_tau_delta=v,
        gamma_a_tau_delta=ga_td,
        normal_phi=nphi[bnd].copy(),
        e_arc=gamma_i_spec.e_arc(),
        gamma_i_spec=gamma_i_spec,
    )


# ---------------------------------------------------------------------------
# geodesics
# ---------------------------------------------------------------------------


@dataclass
class Geodesic:
    """Unit-speed transversal geodesic ``gamma : [0, T] -> M0``."""

    points: np.ndarray
    t: np.ndarray
    velocity: np.ndarray
    nontangential: bool
    chord_params: Optional[tuple] = None
    metric: MetricSpec = field(default_factory=MetricSpec)

    @property
    def length(self) -> float:
        return float(self.t[-1])

    @property
    def entry(self) -> np.ndarray:
        return self.points[0]

    @property
    def exit(self) -> np.ndarray:
        return self.points[-1]

    def speed_error(self) -> float:
        c0 = self.metric.c0(self.points[:, 0], self.points[:, 1])
        sp_ = np.sqrt(c0) * np.linalg.norm(self.velocity, axis=1)
        return float(np.max(np.abs(sp_ - 1.0)))

    def sample(self, t) -> np.ndarray:
        """Points at arclength ``t`` by linear interpolation of the polyline."""
        t = np.asarray(t, dtype=float)
        x = np.interp(t, self.t, self.points[:, 0])
        y = np.interp(t, self.t, self.points[:, 1])
        return np.stack([x, y], axis=-1)


def default_step(grid: ManifoldGrid) -> float:
    cell = min(grid.drho, grid.rho[0] * grid.dtheta)
    return cell / 4.0


def _chord(entry, direction):
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    w = np.array([d[1], -d[0]])
    s = float(np.dot(entry, w))
    alpha = math.atan2(w[1], w[0])
    return s, alpha


def _geodesic_rhs(metric: MetricSpec, state: np.ndarray) -> np.ndarray:
    x, y, vx, vy = state
    gx, gy = metric.grad_sigma(x, y)
    dot = gx * vx + gy * vy
    v2 = vx * vx + vy * vy
    return np.array([vx, vy, -2 * dot * vx + v2 * gx, -2 * dot * vy + v2 * gy])


def _rk4_step(metric, state, h):
    k1 = _geodesic_rhs(metric, state)
    k2 = _geodesic_rhs(metric, state + 0.5 * h * k1)
    k3 = _geodesic_rhs(metric, state + 0.5 * h * k2)
    k4 = _geodesic_rhs(metric, state + h * k3)
    return state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_geodesic(metric: MetricSpec, state0, length: float, nsteps: int) -> np.ndarray:
    """Final state after arclength ``length`` using ``nsteps`` RK4 steps."""
    state = np.asarray(state0, dtype=float).copy()
    h = length / nsteps
    for _ in range(nsteps):
        state = _rk4_step(metric, state, h)
    return state


def trace_geodesic(
    grid_or_metric,
    entry,
    direction,
    step: Optional[float] = None,
    max_steps: int = 200000,
) -> Geodesic:
    """Trace the transversal geodesic entering ``M0`` at ``entry``.

    Parameters
    ----------
    grid_or_metric : ManifoldGrid or MetricSpec
    entry : array_like, shape (2,)
        Point on the unit circle.
    direction : array_like, shape (2,)
        Initial direction (any length), must point strictly inward.
    step : float, optional
        Arclength step; defaults to a quarter of the smallest cell size.
    """
    if isinstance(grid_or_metric, ManifoldGrid):
        metric = grid_or_metric.metric
        if step is None:
            step = default_step(grid_or_metric)
    else:
        metric = grid_or_metric
        if step is None:
            step = 2e-3
    p0 = np.asarray(entry, dtype=float)
    if abs(np.linalg.norm(p0) - 1.0) > 1e-9:
        raise InvalidConfig("geodesic entry point must lie on the unit circle")
    p0 = p0 / np.linalg.norm(p0)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    cos_in = -float(np.dot(d, p0))
    if cos_in <= 1e-3:
        if cos_in > -1e-3:
            raise TangentialExit("entry direction is tangent to the boundary")
        raise InvalidConfig("geodesic direction must point into the disk")
    chord = _chord(p0, d)

    if metric.is_euclidean:
        T = 2.0 * cos_in
        n = max(int(math.ceil(T / step)), 1)
        t = np.linspace(0.0, T, n + 1)
        pts = p0[None, :] + t[:, None] * d[None, :]
        pts[-1] = pts[-1] / np.linalg.norm(pts[-1])
        vel = np.repeat(d[None, :], n + 1, axis=0)
        return Geodesic(pts, t, vel, cos_in > 1e-3, chord, metric)

    c0 = float(metric.c0(p0[0], p0[1]))
    state0 = np.array([p0[0], p0[1], d[0] / math.sqrt(c0), d[1] / math.sqrt(c0)])
    states = kernels.geodesic_march(
        state0, step, metric.amplitude, metric.width, max_steps
    )
    if states.shape[0] > max_steps:
        raise MaxStepsExceeded("geodesic did not exit the disk")
    # refine the final step so the last point lies on the circle
    prev = states[-2]
    lo, hi = 0.0, step
    f_hi = np.hypot(*states[-1][:2]) - 1.0
    f_lo = np.hypot(*prev[:2]) - 1.0
    s = hi
    for _ in range(80):
        s = hi - f_hi * (hi - lo) / (f_hi - f_lo) if f_hi != f_lo else 0.5 * (lo + hi)
        if not (lo < s < hi):
            s = 0.5 * (lo + hi)
        st = _rk4_step(metric, prev, s)
        f = np.hypot(st[0], st[1]) - 1.0
        if abs(f) < 1e-14:
            break
        if f > 0:
            hi, f_hi = s, f
        else:
            lo, f_lo = s, f
    last = _rk4_step(metric, prev, s)
    states = np.vstack([states[:-1], last[None, :]])
    nstep = states.shape[0] - 1
    t = np.arange(nstep + 1, dtype=float) * step
    t[-1] = t[-2] + s
    pts = states[:, :2].copy()
    vel = states[:, 2:].copy()
    n_out = pts[-1] / np.linalg.norm(pts[-1])
    c0e = float(metric.c0(pts[-1, 0], pts[-1, 1]))
    cos_out = math.sqrt(c0e) * float(np.dot(vel[-1], n_out))
    interior_ok = bool(np.all(np.hypot(pts[1:-1, 0], pts[1:-1, 1]) < 1.0))
    return Geodesic(pts, t, vel, bool(abs(cos_out) > 1e-3 and interior_ok), chord, metric)


def chord_geodesic(grid_or_metric, s: float, alpha: float, step: Optional[float] = None) -> Geodesic:
    """Geodesic with Euclidean chord parameters ``(s, alpha)``.

    The line is ``{x . w = s}`` with ``w = (cos alpha, sin alpha)`` and is
    traversed in direction ``(-sin alpha, cos alpha)``.
    """
    if abs(s) >= 1.0:
        raise InvalidConfig("chord offset must satisfy |s| < 1")
    w = np.array([math.cos(alpha), math.sin(alpha)])
    d = np.array([-w[1], w[0]])
    entry = s * w - math.sqrt(1 - s * s) * d
    entry = entry / np.linalg.norm(entry)
    return trace_geodesic(grid_or_metric, entry, d, step=step)


# ---------------------------------------------------------------------------
# polar chart
# ---------------------------------------------------------------------------


@dataclass
class PolarChart:
    """Geodesic polar coordinates centred at ``p`` outside ``M0``.

    ``r``, ``theta`` and ``jac`` (``|det d(x,y)/d(r,theta)|``) are given on
    the transversal nodes of the grid, shape ``(nrho, ntheta)``.
    """

    p: np.ndarray
    theta0: float
    epsilon: float
    r: np.ndarray
    theta: np.ndarray
    jac: np.ndarray
    eikonal_error: float
    metric: MetricSpec
    radius_ext: float

    def sqrt_det_g(self, grid: ManifoldGrid) -> np.ndarray:
        """``|g|^{1/2}`` in ``(x1, r, theta)`` coordinates per transversal node."""
        return grid.c**1.5 * grid.c0 * self.jac

    def evaluate(self, x, y):
        """``(r, theta)`` at arbitrary points of ``M0``."""
        return _chart_points(self.metric, self.p, self.theta0, np.asarray(x, float), np.asarray(y, float))[:2]


def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def _shoot(metric, p, theta, r, nsteps):
    """Vectorised exponential map ``exp_p(r, theta)`` with RK4."""
    c0p = float(metric.c0(p[0], p[1]))
    v = 1.0 / math.sqrt(c0p)
    n = theta.size
    st = np.empty((4, n))
    st[0] = p[0]
    st[1] = p[1]
    st[2] = v * np.cos(theta)
    st[3] = v * np.sin(theta)
    return kernels.shoot_conformal(st, r / nsteps, nsteps, metric.amplitude, metric.width)


def _chart_points(metric, p, theta0, x, y, nsteps: int = 256):
    shape = np.broadcast(x, y).shape
    x = np.broadcast_to(x, shape).ravel()
    y = np.broadcast_to(y, shape).ravel()
    dx, dy = x - p[0], y - p[1]
    r = np.hypot(dx, dy)
    th = theta0 + _wrap(np.arctan2(dy, dx) - theta0)
    if metric.is_euclidean:
        return r.reshape(shape), th.reshape(shape), r.reshape(shape)
    # Newton on exp_p(r, theta) = x
    dth = 1e-6
    ok = False
    for _ in range(40):
        st = _shoot(metric, p, th, r, nsteps)
        fx, fy = st[0] - x, st[1] - y
        err = np.max(np.hypot(fx, fy))
        st2 = _shoot(metric, p, th + dth, r, nsteps)
        jr = st[2:4]
        jt = (st2[:2] - st[:2]) / dth
        det = jr[0] * jt[1] - jr[1] * jt[0]
        if np.any(det <= 0) or not np.all(np.isfinite(det)):
            raise ChartFailure("exponential map degenerates; preset not simple here")
        if err < 1e-11:
            ok = True
            break
        dr = (jt[1] * fx - jt[0] * fy) / det
        dt = (-jr[1] * fx + jr[0] * fy) / det
        r = r - dr
        th = th - dt
    if not ok:
        raise ChartFailure("geodesic shooting did not converge")
    return r.reshape(shape), th.reshape(shape), np.abs(det).reshape(shape)


def eikonal_error(grid: ManifoldGrid, r: np.ndarray, metric: MetricSpec) -> float:
    """Max of ``| |dr|_{g0} - 1 |`` from discrete derivatives on the polar grid.

    Second-order differences in ``rho`` (across the axis through the
    antipodal node) and a spectral derivative in ``theta``.
    """
    nr, nt = r.shape
    if nt % 2:
        raise InvalidConfig("eikonal check needs an even ntheta")
    rho = grid.rho
    opp = np.roll(r[0], nt // 2)
    ext = np.vstack([opp[None, :], r])
    rext = np.concatenate([[-rho[0]], rho])
    dr = np.empty_like(r)
    # nonuniform central differences (second order)
    for m in range(nr):
        i = m + 1
        if m < nr - 1:
            h1 = rext[i] - rext[i - 1]
            h2 = rext[i + 1] - rext[i]
            dr[m] = (
                -h2 / (h1 * (h1 + h2)) * ext[i - 1]
                + (h2 - h1) / (h1 * h2) * ext[i]
                + h1 / (h2 * (h1 + h2)) * ext[i + 1]
            )
        else:
            h1 = rext[i] - rext[i - 1]
            h2 = rext[i - 1] - rext[i - 2]
            # one-sided three point formula at the rim
            a = (2 * h1 + h2) / (h1 * (h1 + h2))
            b_ = -(h1 + h2) / (h1 * h2)
            c_ = h1 / (h2 * (h1 + h2))
            dr[m] = a * ext[i] + b_ * ext[i - 1] + c_ * ext[i - 2]
    # r is periodic and analytic in theta, so differentiate spectrally there
    k = np.fft.rfftfreq(nt, d=1.0 / nt)
    if nt % 2 == 0:
        k[-1] = 0.0
    dt = np.fft.irfft(1j * k * np.fft.rfft(r, axis=1), n=nt, axis=1)
    grad2 = dr**2 + (dt / rho[:, None]) ** 2
    c0 = metric.c0(grid.X, grid.Y)
    return float(np.max(np.abs(np.sqrt(grad2 / c0) - 1.0)))


def build_polar_chart(grid: ManifoldGrid, target: Geodesic, epsilon: float = 0.25) -> PolarChart:
    """Polar chart at ``p = gamma(-epsilon)`` on the extended disk."""
    if not target.nontangential:
        raise InvalidConfig("polar chart needs a nontangential target geodesic")
    if not epsilon > 0:
        raise InvalidConfig("epsilon must be positive")
    metric = grid.metric
    p0 = target.points[0]
    v0 = target.velocity[0]
    if metric.is_euclidean:
        d = v0 / np.linalg.norm(v0)
        p = p0 - epsilon * d
        dir_p = d
    else:
        nst = max(int(math.ceil(epsilon / 1e-3)), 16)
        st = integrate_geodesic(metric, np.r_[p0, -v0], epsilon, nst)
        p = st[:2]
        dir_p = -st[2:]
        dir_p = dir_p / np.linalg.norm(dir_p)
    radius_ext = 1.0 + 2.0 * epsilon
    if np.linalg.norm(p) >= radius_ext:
        raise ChartFailure("chart centre falls outside the extended disk")
    theta0 = math.atan2(dir_p[1], dir_p[0])
    r, th, jac = _chart_points(metric, p, theta0, grid.X, grid.Y)
    if np.any(r <= 0) or np.any(np.abs(th - theta0) >= math.pi - 1e-9):
        raise ChartFailure("polar chart is not injective on the node set")
    eik = eikonal_error(grid, r, metric) if grid.shape[2] % 2 == 0 else float("nan")
    return PolarChart(
        p=p,
        theta0=theta0,
        epsilon=float(epsilon),
        r=r,
        theta=th,
        jac=jac,
        eikonal_error=eik,
        metric=metric,
        radius_ext=radius_ext,
    )


def transversal_grid(nrho: int, ntheta: int, metric: Optional[MetricSpec] = None) -> ManifoldGrid:
    """Thin cylinder used when only the transversal grid matters."""
    return ManifoldGrid(
        ManifoldConfig(nx1=4, nrho=nrho, ntheta=ntheta, metric=metric or MetricSpec())
    )


__all__: Sequence[str] = [
    "MetricSpec",
    "GammaISpec",
    "ManifoldConfig",
    "ManifoldGrid",
    "build_manifold",
    "BoundaryDecomposition",
    "classify_boundary",
    "Geodesic",
    "trace_geodesic",
    "chord_geodesic",
    "PolarChart",
    "build_polar_chart",
    "transversal_grid",
    "INTERIOR",
    "CAP_MINUS",
    "CAP_PLUS",
    "LATERAL",
]

"""Carleman-weighted Green operators as minimum-norm solves.

Conventions
-----------
``L_tau = E_tau (-Delta_g + q) E_tau^{-1}`` with ``E_tau = exp(-tau x1)``.
With this sign the minimum-norm right inverse whose traces live on
``S+_tau = {sgn(tau) d_nu x1 >= 1/(3|tau|)}`` (outward normal) is bounded
like ``1/|tau|``; pairing ``exp(+tau x1)`` with the same set gives inverses
that grow like ``exp(c |tau|)``.

Separation of variables
-----------------------
On the cylinder the lateral boundary never meets ``S+_tau`` and the Laplacian
splits as ``(1/c)(d_1^2 + c0^{-1} Delta')``.  Expanding interior fields in
the ``W``-orthonormal transversal Dirichlet modes ``K_perp phi = mu W_perp
phi`` turns every constrained problem (``H_tau``, the null projector,
``G_tau``, ``R_tau`` and ``S_tau``) into independent small problems along
``x1``, one per mode.  The mode change of basis is unitary for the discrete
``L^2`` products, so the minimum-norm solutions are the same as those of
the full nodal system; :func:`dense_min_norm_H` solves the nodal system
directly and is used as an oracle on small grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import RankDeficient, TauZero
from .forward import (
    ALL_NODES,
    BOUNDARY_NODES,
    INTERIOR_NODES,
    DiscreteOperator,
    assemble_conjugated,
    carleman_weight,
)
from .geometry import BoundaryDecomposition, ManifoldGrid, classify_boundary

RCOND = 1e-10


# ---------------------------------------------------------------------------
# transversal modes
# ---------------------------------------------------------------------------


class TransversalModes:
    """Dirichlet eigenbasis of the transversal operator ``W^{-1} K_perp``.

    ``phi`` has shape ``(nJ, nJ)`` with ``phi.T @ diag(w) @ phi = I`` where
    ``J`` are the transversal nodes strictly inside the disk.
    """

    def __init__(self, grid: ManifoldGrid):
        nr, nt = grid.shape[1:]
        self.nJ = (nr - 1) * nt
        kp = grid.transversal_stiffness().toarray()
        self.w = grid.w_perp.ravel()[: self.nJ]
        mu, phi = sla.eigh(kp[: self.nJ, : self.nJ], np.diag(self.w))
        self.mu = mu
        self.phi = phi
        self.phiw = (phi * self.w[:, None]).T  # analysis operator

    def analyse(self, u_j: np.ndarray) -> np.ndarray:
        """Mode coefficients of transversal fields, last axis is ``J``."""
        return u_j @ self.phiw.T

    def synthesise(self, c: np.ndarray) -> np.ndarray:
        return c @ self.phi.T


_MODES_CACHE: dict = {}


def transversal_modes(grid: ManifoldGrid) -> TransversalModes:
    key = id(grid)
    hit = _MODES_CACHE.get(key)
    if hit is None or hit[0] is not grid:
        hit = (grid, TransversalModes(grid))
        _MODES_CACHE[key] = hit
    return hit[1]


# ---------------------------------------------------------------------------
# per-mode building blocks
# ---------------------------------------------------------------------------


def _free_end(tau: float, nx1: int) -> tuple:
    """(free index, fixed index) of the x1 line for S+_tau."""
    return (nx1 - 1, 0) if tau > 0 else (0, nx1 - 1)


def mode_rows(grid: ManifoldGrid, modes: TransversalModes, tau: float) -> np.ndarray:
    """Conjugated 1-D operators, shape ``(n_modes, nx1 - 2, nx1)``."""
    n1 = grid.shape[0]
    h = grid.h
    ni = n1 - 2
    nm = modes.mu.size
    M = np.zeros((nm, ni, n1))
    r = np.arange(ni)
    lo = math.exp(-tau * h)  # coefficient of u_{k-1}
    up = math.exp(tau * h)  # coefficient of u_{k+1}
    M[:, r, r] = -lo
    M[:, r, r + 2] = -up
    M[:, r, r + 1] = 2.0 + modes.mu[:, None] * h * h
    return M / (grid.c * h * h)


def _pinv_batched(A: np.ndarray, rcond: float = RCOND, expected_rank=None):
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    smax = s[:, :1]
    keep = s > rcond * smax
    if expected_rank is not None:
        rank = keep.sum(axis=1)
        if np.any(rank < expected_rank):
            raise RankDeficient(
                f"constraint system lost rank (min rank {rank.min()} < {expected_rank})"
            )
    sinv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return np.einsum("nji,nj,nkj->nik", Vt, sinv, U), s


def _log_kernel(grid: ManifoldGrid, modes: TransversalModes, tau: float) -> np.ndarray:
    """``log`` of the conjugated null vector of each mode on the full line.

    The physical null solution with zero value at the fixed end is
    ``sinh(kappa d)`` with ``cosh(kappa h) = 1 + mu h^2 / 2`` and ``d`` the
    distance to the fixed end; conjugation multiplies by ``exp(-tau x1)``.
    """
    n1 = grid.shape[0]
    kf, kz = _free_end(tau, n1)
    h = grid.h
    kappa = np.arccosh(1.0 + 0.5 * modes.mu * h * h) / h
    d = np.abs(np.arange(n1) - kz) * h
    kd = kappa[:, None] * d[None, :]
    with np.errstate(divide="ignore"):
        # log sinh(t) = t + log(1 - exp(-2t)) - log 2
        ls = kd + np.log(-np.expm1(-2.0 * kd)) - math.log(2.0)
    return ls - tau * grid.x1[None, :]


def null_vectors(grid: ManifoldGrid, modes: TransversalModes, tau: float) -> np.ndarray:
    """Null vectors normalised to unit max, shape ``(n_modes, nx1)``."""
    lz = _log_kernel(grid, modes, tau)
    lz = lz - lz.max(axis=1, keepdims=True)
    return np.exp(lz)


@dataclass
class ModeBlocks:
    """Per-mode full-line operators for one ``tau``.

    ``H`` maps interior values (length ``nx1 - 2``) to the full line
    (length ``nx1``) with zero at the fixed end.  ``z`` is the conjugated
    null vector, ``R`` the weighted minimum-norm solver used by
    :func:`rtau_solve`.
    """

    tau: float
    free: int
    fixed: int
    M: np.ndarray
    H: np.ndarray
    z: np.ndarray
    R: np.ndarray
    sv: np.ndarray = field(repr=False, default=None)


def mode_blocks(grid: ManifoldGrid, tau: float, modes: Optional[TransversalModes] = None) -> ModeBlocks:
    if tau == 0:
        raise TauZero("tau must be nonzero")
    modes = modes or transversal_modes(grid)
    n1 = grid.shape[0]
    ni = n1 - 2
    kf, kz = _free_end(tau, n1)
    M = mode_rows(grid, modes, tau)
    Mp = M[:, :, 1:-1]
    mf = M[:, :, kf]
    # H: minimise the interior norm; the free trace is eliminated exactly by
    # projecting out the range of its column.
    qn = mf / np.linalg.norm(mf, axis=1, keepdims=True)
    P = np.eye(ni)[None] - qn[:, :, None] * qn[:, None, :]
    A = P @ Mp
    Ap, sv = _pinv_batched(A, expected_rank=ni - 1)
    Hp = Ap @ P
    resid = np.eye(ni)[None] - Mp @ Hp
    Hf = np.einsum("ni,nij->nj", mf, resid) / np.sum(mf * mf, axis=1)[:, None]
    H = np.zeros((modes.mu.size, n1, ni))
    H[:, 1:-1, :] = Hp
    H[:, kf, :] = Hf
    # R: minimise interior norm plus surface norm of the free trace
    a = grid.c**1.5 * grid.h
    b = grid.c
    Ms = np.concatenate([Mp / math.sqrt(a), mf[:, :, None] / math.sqrt(b)], axis=2)
    Rs, _ = _pinv_batched(Ms, expected_rank=ni)
    R = np.zeros((modes.mu.size, n1, ni))
    R[:, 1:-1, :] = Rs[:, :ni, :] / math.sqrt(a)
    R[:, kf, :] = Rs[:, ni, :] / math.sqrt(b)
    z = null_vectors(grid, modes, tau)
    return ModeBlocks(float(tau), kf, kz, M, H, z, R, sv)


# ---------------------------------------------------------------------------
# nodal <-> mode transforms
# ---------------------------------------------------------------------------


def _layers_interior(grid: ManifoldGrid, v: np.ndarray, nJ: int) -> np.ndarray:
    """Interior values as ``(nx1 - 2, nJ, ...)`` from full or interior input."""
    n1, nr, nt = grid.shape
    v = np.asarray(v)
    tail = v.shape[1:]
    if v.shape[0] == grid.n_nodes:
        full = v.reshape((n1, nr * nt) + tail)
        return full[1:-1, :nJ]
    if v.shape[0] == grid.interior.size:
        return v.reshape((n1 - 2, nJ) + tail)
    raise ValueError("field has neither full nor interior length")


def _layer_matmul(A: np.ndarray, lay: np.ndarray) -> np.ndarray:
    """``A @ lay[l]`` for every layer ``l`` as one real GEMM.

    ``lay`` is ``(n_layers, k, ...)``; stacked real-by-complex ``matmul``
    bypasses BLAS, so complex data are viewed as interleaved reals.
    """
    L, k = lay.shape[:2]
    tail = lay.shape[2:]
    cplx = np.iscomplexobj(lay)
    X = np.ascontiguousarray(np.moveaxis(lay, 1, 0).reshape(k, -1))
    if cplx:
        X = X.astype(complex, copy=False).view(np.float64)
    Y = A @ X
    if cplx:
        Y = Y.view(complex)
    return np.moveaxis(Y.reshape((A.shape[0], L) + tail), 0, 1)


def to_modes(grid, modes, v):
    """Interior field to mode coefficients, shape ``(nx1 - 2, n_modes, ...)``."""
    return _layer_matmul(modes.phiw, _layers_interior(grid, v, modes.nJ))


def line_to_nodes(grid, modes, line, fill_interior_only: bool = False):
    """Full-line mode coefficients ``(nx1, n_modes, ...)`` to a nodal field.

    Lateral and rim nodes are zero.
    """
    n1, nr, nt = grid.shape
    tail = line.shape[2:]
    vals = _layer_matmul(modes.phi, line)
    out = np.zeros((n1, nr * nt) + tail, dtype=vals.dtype)
    out[:, : modes.nJ] = vals
    return out.reshape((grid.n_nodes,) + tail)


def _apply_blocks(blocks: np.ndarray, vhat: np.ndarray) -> np.ndarray:
    """Apply per-mode matrices ``(nm, a, b)`` to coefficients ``(b, nm, ...)``."""
    if vhat.ndim == 2:
        return np.einsum("nab,bn->an", blocks, vhat)
    out = np.matmul(blocks, np.transpose(vhat, (1, 0, 2)))
    return np.transpose(out, (1, 0, 2))


# ---------------------------------------------------------------------------
# Green operators
# ---------------------------------------------------------------------------


class GreenOperator:
    """``G_tau = H_tau + Pi_tau H_{-tau}^*`` in mode form.

    Interior inputs map to full nodal fields whose trace is supported on the
    free cap ``S+_tau``.  Interior-to-interior blocks are adjoint by plain
    transposition because the interior mode weights are uniform.
    """

    def __init__(self, grid: ManifoldGrid, tau: float, modes: Optional[TransversalModes] = None,
                 decomp: Optional[BoundaryDecomposition] = None):
        if tau == 0:
            raise TauZero("tau must be nonzero")
        self.grid = grid
        self.tau = float(tau)
        self.modes = modes or transversal_modes(grid)
        self.decomp = decomp or classify_boundary(grid, tau)
        self.plus = mode_blocks(grid, tau, self.modes)
        self.minus = mode_blocks(grid, -tau, self.modes)
        z = self.plus.z
        zi = z[:, 1:-1]
        self.zi_norm2 = np.sum(zi * zi, axis=1)
        # null projector, full-line output
        self.Pi = z[:, :, None] * zi[:, None, :] / self.zi_norm2[:, None, None]
        Hm_int = self.minus.H[:, 1:-1, :]
        self.G = self.plus.H + self.Pi @ np.transpose(Hm_int, (0, 2, 1))

    # -- application --------------------------------------------------
    def _apply(self, blocks, v):
        vhat = to_modes(self.grid, self.modes, v)
        return line_to_nodes(self.grid, self.modes, _apply_blocks(blocks, vhat))

    def apply(self, v) -> np.ndarray:
        """``G_tau v`` as a full nodal field."""
        return self._apply(self.G, v)

    def apply_H(self, v, minus: bool = False) -> np.ndarray:
        return self._apply((self.minus if minus else self.plus).H, v)

    def apply_projector(self, v) -> np.ndarray:
        return self._apply(self.Pi, v)

    def apply_adjoint(self, v) -> np.ndarray:
        """``G_tau^*`` on interior fields (interior nodal output)."""
        vhat = to_modes(self.grid, self.modes, v)
        Gi = np.transpose(self.G[:, 1:-1, :], (0, 2, 1))
        out = _apply_blocks(Gi, vhat)
        full = np.zeros((self.grid.shape[0],) + out.shape[1:], dtype=out.dtype)
        full[1:-1] = out
        return line_to_nodes(self.grid, self.modes, full)[self.grid.interior]

    # -- summaries ------------------------------------------------------
    def interior_blocks(self) -> np.ndarray:
        return self.G[:, 1:-1, :]

    def norm(self) -> float:
        """Exact ``L^2 -> L^2`` operator norm on interior fields."""
        s = np.linalg.svd(self.interior_blocks(), compute_uv=False)
        return float(s.max())

    def norm_power(self, iters: int = 200, seed: int = 0) -> float:
        """Operator norm by power iteration on the nodal operator."""
        g = self.grid
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(g.interior.size)
        w = g.volume_weights[g.interior]
        lam = 0.0
        for _ in range(iters):
            v = v / math.sqrt(np.sum(w * v * v))
            gv = self.apply(v)[g.interior]
            v = self.apply_adjoint(gv).real
            lam_new = math.sqrt(max(np.sum(w * v * v), 0.0))
            if abs(lam_new - lam) <= 1e-12 * lam_new:
                lam = lam_new
                break
            lam = lam_new
        return math.sqrt(lam)

    def dense_interior(self, which: str = "G") -> np.ndarray:
        """Nodal interior-to-interior matrix of ``G``, ``H`` or ``Pi``."""
        blocks = {"G": self.G, "H": self.plus.H, "Hm": self.minus.H, "Pi": self.Pi}[which][:, 1:-1, :]
        ph, pw = self.modes.phi, self.modes.phiw
        ni = blocks.shape[1]
        nJ = self.modes.nJ
        out = np.empty((ni, nJ, ni, nJ))
        for a in range(ni):
            for b in range(ni):
                out[a, :, b, :] = (ph * blocks[:, a, b][None, :]) @ pw
        return out.reshape(ni * nJ, ni * nJ)


def assemble_green(grid: ManifoldGrid, tau: float, modes=None, decomp=None) -> GreenOperator:
    return GreenOperator(grid, tau, modes, decomp)


def min_norm_solve_H(grid: ManifoldGrid, tau: float) -> DiscreteOperator:
    """Nodal matrix of ``H_tau`` (interior to interior)."""
    G = GreenOperator(grid, tau)
    return DiscreteOperator(G.dense_interior("H"), INTERIOR_NODES, INTERIOR_NODES, False,
                            grid.interior, grid.interior)


def null_projector(grid: ManifoldGrid, tau: float) -> DiscreteOperator:
    """Nodal matrix of the orthogonal projector onto ``P_I A_tau``."""
    G = GreenOperator(grid, tau)
    return DiscreteOperator(G.dense_interior("Pi"), INTERIOR_NODES, INTERIOR_NODES, True,
                            grid.interior, grid.interior)


def null_space_fields(grid: ManifoldGrid, tau: float, modes=None) -> np.ndarray:
    """Full nodal null fields ``L_tau u = 0`` with trace on ``S+_tau``.

    One column per transversal mode.
    """
    modes = modes or transversal_modes(grid)
    z = null_vectors(grid, modes, tau)
    line = np.zeros((grid.shape[0], modes.mu.size, modes.mu.size))
    idx = np.arange(modes.mu.size)
    line[:, idx, idx] = z.T
    return line_to_nodes(grid, modes, line)


def left_inverse_fields(grid: ManifoldGrid, tau: float, count: int = 1, seed: int = 0) -> np.ndarray:
    """Random fields in ``D+_{-tau}``, on which ``G_tau L_tau`` is the identity.

    The fields vanish on ``dM`` and their normal trace vanishes on
    ``S+_{-tau}``.  Random interior values are projected orthogonally onto
    the kernel of the (sparse) normal-trace constraint.

    Returns
    -------
    ndarray, shape (n_nodes, count)
    """
    import scipy.sparse.linalg as spla

    I = grid.interior
    cap = classify_boundary(grid, -tau).s_plus_tau
    C = grid.stiffness().tocsr()[cap][:, I]
    # rim nodes couple to boundary nodes only
    C = C[np.diff(C.indptr) > 0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((I.size, count))
    CCt = (C @ C.T).tocsc()
    # the constraint rows touch disjoint interior neighbours, so CC^T is well conditioned
    lam = spla.splu(CCt).solve(np.asarray(C @ v))
    u = np.zeros((grid.n_nodes, count))
    u[I] = v - C.T @ lam
    return u


# ---------------------------------------------------------------------------
# inhomogeneous solver
# ---------------------------------------------------------------------------


class RtauSolver:
    """Minimum-norm ``u`` with ``L_tau u = f`` and ``tr u = f^-`` on ``S-_tau``.

    The norm is the interior volume norm plus the surface norm of the free
    trace on ``S+_tau``.
    """

    def __init__(self, grid: ManifoldGrid, tau: float, modes=None, decomp=None):
        self.grid = grid
        self.tau = float(tau)
        self.modes = modes or transversal_modes(grid)
        self.decomp = decomp or classify_boundary(grid, tau)
        self.blocks = mode_blocks(grid, tau, self.modes)
        self.L = assemble_conjugated(grid, None, tau).matrix
        self.s_minus = np.setdiff1d(grid.boundary, self.decomp.s_plus_tau)

    def solve(self, f, f_minus) -> np.ndarray:
        g = self.grid
        f = np.asarray(f)
        fm = np.asarray(f_minus)
        if f.shape[0] == g.n_nodes:
            f = f[g.interior]
        tail = f.shape[1:]
        dtype = np.result_type(f, fm, float)
        known = np.zeros((g.n_nodes,) + tail, dtype=dtype)
        if fm.shape[0] == g.n_nodes:
            known[self.s_minus] = fm[self.s_minus]
        else:
            if fm.shape[0] != self.s_minus.size:
                raise ValueError("f_minus must be given on S-_tau (or on all nodes)")
            known[self.s_minus] = fm
        rhs = f - self.L @ known
        bhat = to_modes(g, self.modes, rhs)
        line = _apply_blocks(self.blocks.R, bhat)
        return known + line_to_nodes(g, self.modes, line)


def rtau_solve(grid: ManifoldGrid, tau: float, f, f_minus, solver: Optional[RtauSolver] = None) -> np.ndarray:
    solver = solver or RtauSolver(grid, tau)
    return solver.solve(f, f_minus)


# ---------------------------------------------------------------------------
# single layer
# ---------------------------------------------------------------------------


@dataclass
class SingleLayer:
    """``S_tau h = E^{-1} (tr o (tr o G_tau)^*)^* (E h)`` on boundary nodes.

    ``matrix`` acts on boundary vectors ordered like ``grid.boundary``.
    ``consumes`` is the cap whose values are read, ``support`` the set ``B``.
    """

    tau: float
    matrix: np.ndarray
    consumes: np.ndarray
    support: np.ndarray
    scalars: np.ndarray
    support_residual: float


def _single_layer_scalars(green: GreenOperator) -> np.ndarray:
    g = green.grid
    kf = green.plus.free
    t = green.G[:, kf, :]  # trace row of G_tau
    zm = green.minus.z
    zmi = zm[:, 1:-1]
    coef = np.sum(zmi * t, axis=1) / np.sum(zmi * zmi, axis=1)
    scale = g.c / (g.c**1.5 * g.h)
    return scale * coef * zm[:, green.minus.free]


def assemble_single_layer(green: GreenOperator) -> SingleLayer:
    g = green.grid
    modes = green.modes
    tau = green.tau
    n1, nr, nt = g.shape
    kf, kz = green.plus.free, green.plus.fixed
    s = _single_layer_scalars(green)
    # exp(-tau x_kz) from E on the input, exp(tau x_kf) from E^{-1} on the output
    factor = math.exp(tau * (g.x1[kf] - g.x1[kz]))
    block = (modes.phi * (factor * s)[None, :]) @ modes.phiw
    pos = np.full(g.n_nodes, -1)
    pos[g.boundary] = np.arange(g.boundary.size)
    J = np.arange(modes.nJ)
    out_nodes = g.index(kf, J // nt, J % nt)
    in_nodes = g.index(kz, J // nt, J % nt)
    S = np.zeros((g.boundary.size, g.boundary.size))
    S[np.ix_(pos[out_nodes], pos[in_nodes])] = block
    d = green.decomp
    consumes = d.pm_sign(-d.sign)
    support = padded_support(g, d)
    outside = np.setdiff1d(np.arange(g.boundary.size), pos[support])
    resid = float(np.abs(S[outside]).max()) if outside.size else 0.0
    return SingleLayer(tau, S, consumes, support, factor * s, resid)


def padded_support(grid: ManifoldGrid, decomp: BoundaryDecomposition) -> np.ndarray:
    """``B``: ``S+_tau`` grown by one boundary ring, kept inside ``dM_sgn(tau)``."""
    adj = grid.boundary_adjacency()
    mask = np.zeros(grid.n_nodes, dtype=bool)
    mask[decomp.s_plus_tau] = True
    grown = mask | (adj @ mask.astype(float) > 0)
    allowed = np.zeros(grid.n_nodes, dtype=bool)
    allowed[decomp.pm_sign(decomp.sign)] = True
    return np.flatnonzero(grown & allowed)


# ---------------------------------------------------------------------------
# dense oracle
# ---------------------------------------------------------------------------


def dense_min_norm_H(grid: ManifoldGrid, tau: float, rcond: float = RCOND) -> np.ndarray:
    """``H_tau`` from a truncated SVD of the full nodal constraint system.

    Unknowns are the interior values and the trace on ``S+_tau``; the
    objective is the interior volume norm only.  Intended for small grids.
    """
    d = classify_boundary(grid, tau)
    L = assemble_conjugated(grid, None, tau).toarray()
    I = grid.interior
    Sp = d.s_plus_tau
    w = np.sqrt(grid.volume_weights[I])
    Lp = L[:, I] / w[None, :]
    Lf = L[:, Sp]
    # eliminate the free trace by projecting out the range of its columns
    Q, Rr = np.linalg.qr(Lf)
    rank = int(np.sum(np.abs(np.diag(Rr)) > 1e-12 * np.abs(np.diag(Rr)).max()))
    Q = Q[:, :rank]
    P = np.eye(I.size) - Q @ Q.T
    Ap = np.linalg.pinv(P @ Lp, rcond=rcond)
    return (Ap @ P) / w[:, None]


__all__ = [
    "TransversalModes",
    "transversal_modes",
    "ModeBlocks",
    "mode_blocks",
    "GreenOperator",
    "assemble_green",
    "min_norm_solve_H",
    "null_projector",
    "null_space_fields",
    "RtauSolver",
    "rtau_solve",
    "SingleLayer",
    "assemble_single_layer",
    "padded_support",
    "dense_min_norm_H",
]

"""Finite-volume Schrodinger operator, Dirichlet solves and DtN matrices.

With stiffness ``K`` and volume weights ``w`` the interior operator is

    (-Delta_g u)_i = (K u)_i / w_i,    i interior,

and the normal trace is the summation-by-parts boundary operator

    tr_nu(u)_b = (K u)_b / sigma_b,    b on the boundary.

Because ``K`` is symmetric these two choices make

    (u | -Delta v) - (-Delta u | v) = <tr_nu u, tr v> - <tr u, tr_nu v>

hold to round-off, with ``(.|.)`` the weighted sum over interior nodes and
``<.,.>`` the surface-weighted sum over boundary nodes.  Both products are
linear in the first slot and conjugate linear in the second.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DirichletEigenvalue, IndexMismatch
from .geometry import ManifoldGrid

ALL_NODES = "nodes"
INTERIOR_NODES = "interior"
BOUNDARY_NODES = "boundary"
TRANSVERSAL_NODES = "transversal"

COND_LIMIT = 1e12


@dataclass
class ScalarField:
    """Complex or real values on every node of a grid."""

    values: np.ndarray
    shape: tuple

    @classmethod
    def on(cls, grid: ManifoldGrid, values) -> "ScalarField":
        v = np.asarray(values)
        if v.size != grid.n_nodes:
            raise IndexMismatch("field length does not match the grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite entries")
        return cls(v.reshape(-1), grid.shape)

    def as_grid(self) -> np.ndarray:
        return self.values.reshape(self.shape)


def as_values(grid: ManifoldGrid, q) -> np.ndarray:
    """Normalise a potential given as ``None``, scalar, array or ScalarField."""
    if q is None:
        return np.zeros(grid.n_nodes)
    if isinstance(q, ScalarField):
        return q.values
    q = np.asarray(q)
    if q.ndim == 0:
        return np.full(grid.n_nodes, q[()])
    if q.size != grid.n_nodes:
        raise IndexMismatch("potential length does not match the grid")
    return q.reshape(-1)


def boundary_values(grid: ManifoldGrid, f) -> np.ndarray:
    """Boundary data as a vector ordered like ``grid.boundary``."""
    f = np.asarray(f)
    if f.ndim == 0:
        return np.full(grid.boundary.size, f[()])
    if f.size == grid.n_nodes:
        return f.reshape(-1)[grid.boundary]
    if f.size != grid.boundary.size:
        raise IndexMismatch("boundary data length does not match the grid")
    return f.reshape(-1)


@dataclass
class DiscreteOperator:
    """Linear map between labelled degree-of-freedom spaces.

    ``rows`` and ``cols`` are node indices of the codomain and domain (or
    ``None`` when the label already fixes them).
    """

    matrix: Union[np.ndarray, sp.spmatrix]
    domain_label: str
    codomain_label: str
    symmetric: bool = False
    rows: Optional[np.ndarray] = None
    cols: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x

    def toarray(self) -> np.ndarray:
        m = self.matrix
        return m.toarray() if sp.issparse(m) else np.asarray(m)


def inner(grid: ManifoldGrid, u, v) -> complex:
    """Volume-weighted product over interior nodes, ``sum w u conj(v)``."""
    I = grid.interior
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape[0] == grid.n_nodes:
        u = u[I]
    if v.shape[0] == grid.n_nodes:
        v = v[I]
    return np.sum(grid.volume_weights[I] * u * np.conj(v))


def boundary_inner(grid: ManifoldGrid, f, h, nodes=None) -> complex:
    """Surface-weighted product ``sum sigma f conj(h)`` over ``nodes``."""
    if nodes is None:
        nodes = grid.boundary
    return np.sum(grid.sigma[nodes] * np.asarray(f) * np.conj(np.asarray(h)))


def volume_norm(grid: ManifoldGrid, u) -> float:
    return float(np.sqrt(abs(inner(grid, u, u))))


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def laplacian(grid: ManifoldGrid) -> DiscreteOperator:
    """``-Delta_g`` from all nodes to interior nodes."""
    K = grid.stiffness()
    I = grid.interior
    A = sp.diags(1.0 / grid.volume_weights[I]) @ K[I, :]
    return DiscreteOperator(A.tocsr(), ALL_NODES, INTERIOR_NODES, False, I, None)


def carleman_weight(grid: ManifoldGrid, tau: float, nodes=None) -> np.ndarray:
    """Diagonal of the conjugation ``E_tau``, ``exp(-tau x1)``.

    The conjugated operator is ``L_tau = E_tau (-Delta_g + q) E_tau^{-1}``.
    """
    x1 = grid.node_x1 if nodes is None else grid.node_x1[nodes]
    return np.exp(-tau * x1)


def assemble_conjugated(grid: ManifoldGrid, q=None, tau: float = 0.0) -> DiscreteOperator:
    """``L_tau = e^{-tau x1} (-Delta_g + q) e^{tau x1}`` on interior rows.

    Built as an exact row/column scaling of the ``tau = 0`` matrix.  The
    sign of the exponent pairs this operator with traces supported in
    ``S+_tau``; see the module notes in :mod:`calderon.carleman`.
    """
    A = laplacian(grid).matrix
    I = grid.interior
    qv = as_values(grid, q)
    if np.any(qv[I] != 0):
        Q = sp.csr_matrix((qv[I], (np.arange(I.size), I)), shape=A.shape)
        A = A + Q
    if tau != 0.0:
        A = sp.diags(carleman_weight(grid, tau, I)) @ A @ sp.diags(1.0 / carleman_weight(grid, tau))
    return DiscreteOperator(A.tocsr(), ALL_NODES, INTERIOR_NODES, False, I, None)


def normal_trace(grid: ManifoldGrid, u) -> np.ndarray:
    """``tr_nu u`` on boundary nodes (ordered like ``grid.boundary``)."""
    u = np.asarray(u)
    Ku = grid.stiffness() @ u
    B = grid.boundary
    if u.ndim == 1:
        return Ku[B] / grid.sigma[B]
    return Ku[B] / grid.sigma[B][:, None]


def trace(grid: ManifoldGrid, u) -> np.ndarray:
    return np.asarray(u)[grid.boundary]


# ---------------------------------------------------------------------------
# Dirichlet problem
# ---------------------------------------------------------------------------


class DirichletSolver:
    """Sparse LU of the interior block of ``K + W q``.

    Raises :class:`DirichletEigenvalue` when the factorization fails or the
    one-norm condition estimate exceeds ``cond_limit``.
    """

    def __init__(self, grid: ManifoldGrid, q=None, cond_limit: float = COND_LIMIT):
        self.grid = grid
        self.q = as_values(grid, q)
        K = grid.stiffness()
        I, B = grid.interior, grid.boundary
        A = K[I, :][:, I]
        qi = self.q[I]
        if np.any(qi != 0):
            A = A + sp.diags(grid.volume_weights[I] * qi)
        self.A = A.tocsc()
        self.KIB = K[I, :][:, B].tocsc()
        try:
            self.lu = spla.splu(self.A)
        except RuntimeError as exc:
            raise DirichletEigenvalue(f"Dirichlet factorization failed: {exc}") from exc
        self.cond = self._condition()
        if not np.isfinite(self.cond) or self.cond > cond_limit:
            raise DirichletEigenvalue(
                f"Dirichlet operator is singular to working precision (cond ~ {self.cond:.2e})"
            )

    def _condition(self) -> float:
        n = self.A.shape[0]
        dtype = self.A.dtype
        op = spla.LinearOperator(
            (n, n),
            matvec=lambda x: self.lu.solve(np.asarray(x, dtype=dtype)),
            rmatvec=lambda x: self.lu.solve(np.asarray(x, dtype=dtype), trans="H"),
            dtype=dtype,
        )
        rng = np.random.default_rng(0)
        state = np.random.get_state()
        np.random.seed(int(rng.integers(2**31)))
        try:
            inv_norm = spla.onenormest(op)
        finally:
            np.random.set_state(state)
        return float(spla.norm(self.A, 1) * inv_norm)

    def solve(self, f_boundary, source=None) -> np.ndarray:
        """Full-node solution with boundary values ``f_boundary``.

        ``source`` (optional, interior nodes) is the right-hand side of
        ``(-Delta_g + q) u = source``.
        """
        g = self.grid
        fb = np.asarray(f_boundary)
        multi = fb.ndim == 2
        if not multi:
            fb = fb[:, None]
        rhs = -(self.KIB @ fb)
        if source is not None:
            s = np.asarray(source)
            s = s[:, None] if s.ndim == 1 else s
            rhs = rhs + g.volume_weights[g.interior][:, None] * s
        dtype = np.result_type(self.A.dtype, rhs.dtype)
        ui = self.lu.solve(np.asarray(rhs, dtype=dtype)) if dtype == self.A.dtype else _solve_mixed(self.lu, rhs)
        u = np.zeros((g.n_nodes, fb.shape[1]), dtype=np.result_type(ui, fb))
        u[g.interior] = ui
        u[g.boundary] = fb
        return u if multi else u[:, 0]


def _solve_mixed(lu, rhs):
    return lu.solve(np.ascontiguousarray(rhs.real)) + 1j * lu.solve(np.ascontiguousarray(rhs.imag))


def solve_dirichlet(grid: ManifoldGrid, q, f) -> np.ndarray:
    """Solve ``(-Delta_g + q) u = 0`` with ``tr u = f``."""
    return DirichletSolver(grid, q).solve(boundary_values(grid, f))


class PoissonOperator:
    """``P_q``: boundary values to the discrete solution with that trace."""

    def __init__(self, grid: ManifoldGrid, q=None, solver: Optional[DirichletSolver] = None):
        self.grid = grid
        self.solver = solver or DirichletSolver(grid, q)

    def __call__(self, f) -> np.ndarray:
        f = np.asarray(f)
        if f.ndim == 1:
            f = boundary_values(self.grid, f)
        return self.solver.solve(f)


def poisson_solution_operator(grid: ManifoldGrid, q=None) -> PoissonOperator:
    return PoissonOperator(grid, q)


# ---------------------------------------------------------------------------
# Dirichlet-to-Neumann
# ---------------------------------------------------------------------------


@dataclass
class PartialDtN:
    """``Lambda_q f`` on ``rows`` for nodal data ``f`` supported on ``cols``.

    ``matrix[i, j]`` is ``tr_nu`` at node ``rows[i]`` of the solution whose
    boundary data is the indicator of node ``cols[j]``.
    """

    matrix: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    q_label: str
    row_weights: np.ndarray

    def same_sets(self, other: "PartialDtN") -> bool:
        return np.array_equal(self.rows, other.rows) and np.array_equal(self.cols, other.cols)

    def apply(self, f_cols) -> np.ndarray:
        return self.matrix @ f_cols


def dtn(
    grid: ManifoldGrid,
    q,
    gamma_plus,
    gamma_minus,
    q_label: str = "q",
    solver: Optional[DirichletSolver] = None,
) -> PartialDtN:
    """Partial DtN matrix with rows ``gamma_minus`` and columns ``gamma_plus``."""
    gp = np.asarray(gamma_plus, dtype=np.int64)
    gm = np.asarray(gamma_minus, dtype=np.int64)
    solver = solver or DirichletSolver(grid, q)
    pos = np.full(grid.n_nodes, -1)
    pos[grid.boundary] = np.arange(grid.boundary.size)
    if np.any(pos[gp] < 0) or np.any(pos[gm] < 0):
        raise IndexMismatch("DtN index sets must consist of boundary nodes")
    F = np.zeros((grid.boundary.size, gp.size))
    F[pos[gp], np.arange(gp.size)] = 1.0
    U = solver.solve(F)
    K = grid.stiffness()
    M = (K[gm, :] @ U) / grid.sigma[gm][:, None]
    return PartialDtN(np.asarray(M), gm.copy(), gp.copy(), q_label, grid.sigma[gm].copy())


def smallest_dirichlet_eigenvalue(grid: ManifoldGrid) -> float:
    """Smallest eigenvalue of ``-Delta_g`` with Dirichlet conditions."""
    K = grid.stiffness()
    I = grid.interior
    A = K[I, :][:, I].tocsc()
    W = sp.diags(grid.volume_weights[I]).tocsc()
    vals = spla.eigsh(A, k=1, M=W, sigma=0.0, which="LM", return_eigenvectors=False)
    return float(vals[0])


__all__ = [
    "ScalarField",
    "DiscreteOperator",
    "laplacian",
    "assemble_conjugated",
    "carleman_weight",
    "normal_trace",
    "trace",
    "inner",
    "boundary_inner",
    "volume_norm",
    "DirichletSolver",
    "solve_dirichlet",
    "PoissonOperator",
    "poisson_solution_operator",
    "PartialDtN",
    "dtn",
    "smallest_dirichlet_eigenvalue",
]

"""Boundary integral equation and the transform-sample extraction.

For ``tau > 0`` the unknown ``h = tr(u1)`` lives on ``Gamma_+`` (the DtN
columns) and the single layer reads ``(Lambda_q - Lambda_0) h`` on
``dM_-``, which lies inside ``Gamma_-`` (the DtN rows).  Only those rows and
columns of the data are touched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .carleman import GreenOperator, SingleLayer
from .errors import ExtrapolationUnstable, IndexMismatch, InvalidConfig, NearSingular, SupportViolation
from .forward import BOUNDARY_NODES, DiscreteOperator, DirichletSolver, PartialDtN, as_values
from .geometry import ManifoldGrid

COND_LIMIT = 1e8


@dataclass
class BieOperator(DiscreteOperator):
    """``Id + S_tau (Lambda_q - Lambda_0)`` on vectors supported in ``cols``."""

    tau: float = 0.0
    rows_used: Optional[np.ndarray] = None


def _positions(grid_boundary: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(grid_boundary, nodes)
    if np.any(pos >= grid_boundary.size) or np.any(grid_boundary[np.minimum(pos, grid_boundary.size - 1)] != nodes):
        raise IndexMismatch("nodes are not boundary nodes")
    return pos


def assemble_bie(single_layer: SingleLayer, dtn_q: PartialDtN, dtn_0: PartialDtN,
                 boundary: np.ndarray) -> BieOperator:
    """Matrix of the boundary integral operator.

    ``boundary`` is ``grid.boundary`` (the ordering of ``single_layer.matrix``).
    """
    if not dtn_q.same_sets(dtn_0):
        raise IndexMismatch("DtN matrices use different index sets")
    rows, cols = dtn_q.rows, dtn_q.cols
    consumed = single_layer.consumes
    if not np.all(np.isin(consumed, rows)):
        raise IndexMismatch("single layer reads boundary values outside the measured rows")
    if not np.all(np.isin(single_layer.support, cols)):
        raise IndexMismatch("single layer range is not inside the data columns")
    S = single_layer.matrix
    pc = _positions(boundary, cols)
    pr = _positions(boundary, rows)
    body = S[np.ix_(pc, pr)] @ (dtn_q.matrix - dtn_0.matrix)
    M = np.eye(cols.size) + body
    return BieOperator(M, BOUNDARY_NODES, BOUNDARY_NODES, False, cols, cols,
                       tau=single_layer.tau, rows_used=rows)


def bie_condition(op: DiscreteOperator) -> float:
    return float(np.linalg.cond(op.toarray()))


def solve_bie(op: DiscreteOperator, rhs, cond_limit: float = COND_LIMIT, return_cond: bool = False):
    """Solve ``op h = rhs`` (``rhs`` restricted to the operator's columns)."""
    M = op.toarray()
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > cond_limit:
        raise NearSingular(f"BIE condition number {cond:.3e} exceeds {cond_limit:.1e}; raise tau")
    h = np.linalg.solve(M, np.asarray(rhs))
    return (h, cond) if return_cond else h


class BieSolver:
    """LU factorization of a BIE operator, reused across right-hand sides."""

    def __init__(self, op: DiscreteOperator, cond_limit: float = COND_LIMIT):
        M = op.toarray()
        self.cond = float(np.linalg.cond(M))
        if not np.isfinite(self.cond) or self.cond > cond_limit:
            raise NearSingular(f"BIE condition number {self.cond:.3e} exceeds {cond_limit:.1e}; raise tau")
        self.op = op
        self.lu = sla.lu_factor(M)

    def solve(self, rhs) -> np.ndarray:
        return sla.lu_solve(self.lu, np.asarray(rhs))


def restrict(boundary_or_nodal, grid: ManifoldGrid, nodes: np.ndarray, leak_tol: float = 1e-8) -> np.ndarray:
    """Values on ``nodes`` from a nodal or boundary vector.

    Raises :class:`SupportViolation` if the vector is not supported in ``nodes``.
    """
    v = np.asarray(boundary_or_nodal)
    if v.shape[0] == grid.n_nodes:
        full = v
    elif v.shape[0] == grid.boundary.size:
        full = np.zeros(grid.n_nodes, dtype=v.dtype)
        full[grid.boundary] = v
    elif v.shape[0] == nodes.size:
        return v
    else:
        raise IndexMismatch("vector length matches neither nodes nor boundary")
    other = np.setdiff1d(grid.boundary, nodes)
    scale = float(np.abs(full[grid.boundary]).max()) if grid.boundary.size else 0.0
    if other.size and scale > 0 and np.abs(full[other]).max() > leak_tol * scale:
        raise SupportViolation("trace is not supported in the data set")
    return full[nodes]


def pairing(dtn_q: PartialDtN, dtn_0: PartialDtN, tr_u2: np.ndarray, tr_u1: np.ndarray):
    """``<tr u2, (Lambda_q - Lambda_0) tr u1>`` with the surface weights.

    ``tr_u2`` is given on the DtN rows, ``tr_u1`` on the DtN columns; with
    two-dimensional inputs one pairing per column is returned.
    """
    if not dtn_q.same_sets(dtn_0):
        raise IndexMismatch("DtN matrices use different index sets")
    if tr_u2.shape[0] != dtn_q.rows.size or tr_u1.shape[0] != dtn_q.cols.size:
        raise IndexMismatch("traces do not match the DtN index sets")
    g = (dtn_q.matrix - dtn_0.matrix) @ tr_u1
    if g.ndim == 2:
        return np.sum(dtn_q.row_weights[:, None] * tr_u2 * np.conj(g), axis=0)
    return complex(np.sum(dtn_q.row_weights * tr_u2 * np.conj(g)))


# ---------------------------------------------------------------------------
# oracle-side identities
# ---------------------------------------------------------------------------


def factorization_rhs(grid: ManifoldGrid, green: GreenOperator, q, f_nodal: np.ndarray,
                      solver: Optional[DirichletSolver] = None) -> np.ndarray:
    """``tr(E^{-1} G_tau E q P_q f)`` on all boundary nodes, ``E = exp(-tau x1)``.

    ``f_nodal`` holds boundary data on the boundary entries (any shape
    ``(n_nodes, k)`` or ``(boundary, k)``).
    """
    solver = solver or DirichletSolver(grid, q)
    f_nodal = np.asarray(f_nodal)
    if f_nodal.shape[0] == grid.n_nodes:
        f_nodal = f_nodal[grid.boundary]
    U = solver.solve(f_nodal)
    I = grid.interior
    qv = as_values(grid, q)[I]
    E = np.exp(-green.tau * grid.node_x1)
    v = (E[I] * qv)[:, None] * U[I] if U.ndim == 2 else E[I] * qv * U[I]
    W = green.apply(v)
    Einv = np.exp(green.tau * grid.node_x1[grid.boundary])
    B = W[grid.boundary]
    return Einv[:, None] * B if B.ndim == 2 else Einv * B


def equivalence_residual(grid: ManifoldGrid, green: GreenOperator, q, h_nodal: np.ndarray,
                         f_nodal: np.ndarray, solver_q: Optional[DirichletSolver] = None,
                         solver_0: Optional[DirichletSolver] = None) -> float:
    """``||(Id + E^{-1} G_tau E q) P_q h - P_0 f|| / ||P_0 f||`` on interior nodes."""
    solver_q = solver_q or DirichletSolver(grid, q)
    solver_0 = solver_0 or DirichletSolver(grid, None)
    I = grid.interior
    h_nodal, f_nodal = np.asarray(h_nodal), np.asarray(f_nodal)
    if h_nodal.shape[0] == grid.n_nodes:
        h_nodal = h_nodal[grid.boundary]
    if f_nodal.shape[0] == grid.n_nodes:
        f_nodal = f_nodal[grid.boundary]
    Pq = solver_q.solve(h_nodal)
    P0 = solver_0.solve(f_nodal)
    qv = as_values(grid, q)[I]
    E = np.exp(-green.tau * grid.node_x1)
    corr = (1.0 / E) * green.apply(E[I] * qv * Pq[I])
    lhs = Pq + corr
    w = grid.volume_weights[I]
    num = math.sqrt(np.sum(w * np.abs(lhs[I] - P0[I]) ** 2))
    den = math.sqrt(np.sum(w * np.abs(P0[I]) ** 2))
    return num / den if den > 0 else num


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------


def richardson(taus: Sequence[float], values: Sequence[complex], order: int = 1) -> complex:
    """Limit ``tau -> inf`` of values modelled as a polynomial in ``1/tau``.

    ``order=1`` uses the last two ladder entries; ``order=2`` the last three.
    ``values`` may carry trailing axes (one limit per entry).
    """
    taus = np.asarray(taus, dtype=float)
    vals = np.asarray(values, dtype=complex)
    n = order + 1
    if taus.size < n:
        raise InvalidConfig(f"Richardson order {order} needs {n} tau values")
    x = 1.0 / taus[-n:]
    V = np.vander(x, n, increasing=True)
    tail = vals.shape[1:]
    coef = np.linalg.solve(V, vals[-n:].reshape(n, -1))
    return complex(coef[0, 0]) if not tail else coef[0].reshape(tail)


@dataclass
class ExtractionResult:
    value: complex
    limit_pairing: complex
    successive: tuple
    residual: float


def extract_transform_sample(
    pairings: Sequence[complex],
    taus: Sequence[float],
    lam: float,
    bump_mass: float,
    epsilon: float,
    order: int = 1,
    rel_tol: Optional[float] = None,
    abs_tol: float = 0.0,
) -> ExtractionResult:
    """``D(lambda, gamma)`` from pairings along the tau ladder.

    The pairing tends to ``int b(theta) int exp(-2 lambda r) F(2 lambda, .)
    dr dtheta``; along the target ray ``r = t + epsilon``, so the limit is
    multiplied by ``exp(2 lambda epsilon)`` and divided by the bump mass.
    """
    if not bump_mass > 0:
        raise InvalidConfig("bump mass must be positive")
    taus = list(taus)
    pairings = list(pairings)
    lim = richardson(taus, pairings, order)
    succ = (lim,)
    resid = 0.0
    if len(taus) > order + 1:
        prev = richardson(taus[:-1], pairings[:-1], order)
        succ = (prev, lim)
        resid = abs(lim - prev)
        scale = max(abs(lim), abs(prev))
        if rel_tol is not None and resid > rel_tol * scale + abs_tol:
            raise ExtrapolationUnstable(
                f"successive Richardson estimates differ by {resid:.3e} (scale {scale:.3e})"
            )
    D = math.exp(2.0 * lam * epsilon) * lim / bump_mass
    scale = math.exp(2.0 * lam * epsilon) / bump_mass
    return ExtractionResult(complex(D), lim, succ, resid * scale)


__all__ = [
    "BieOperator",
    "assemble_bie",
    "bie_condition",
    "solve_bie",
    "BieSolver",
    "restrict",
    "pairing",
    "factorization_rhs",
    "equivalence_residual",
    "richardson",
    "ExtractionResult",
    "extract_transform_sample",
]

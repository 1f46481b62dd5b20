"""Sparse SPD solves for the implicit diffusion steps.

A single solver covers every implicit operator in this package: Jacobi
preconditioned conjugate gradients with a fixed, sequential summation order,
so repeated solves of identical systems are bit-identical.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import SolverError

SYMMETRY_RTOL = 1e-13


@dataclass
class SparseMatrix:
    """CSR matrix with an assembly-time symmetry certificate."""

    csr: sp.csr_matrix
    symmetric: bool

    @property
    def n(self) -> int:
        return self.csr.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()


def assemble(rows, cols, vals, n, require_symmetric=True) -> SparseMatrix:
    """Build from COO triplets (duplicates summed) and certify symmetry."""
    m = sp.coo_matrix(
        (np.asarray(vals, dtype=float), (np.asarray(rows), np.asarray(cols))), shape=(n, n)
    ).tocsr()
    m.sum_duplicates()
    if require_symmetric:
        scale = np.abs(m.data).max() if m.nnz else 1.0
        skew = abs(m - m.T)
        worst = skew.data.max() if skew.nnz else 0.0
        if worst > SYMMETRY_RTOL * scale:
            raise SolverError(
                f"assembled matrix is not symmetric (max skew {worst:.3e}, scale {scale:.3e})"
            )
    return SparseMatrix(csr=m, symmetric=require_symmetric)


def solve_spd(A: SparseMatrix, b, tol=1e-10, maxit=None, x0=None) -> np.ndarray:
    """Jacobi-preconditioned CG down to ||Ax - b|| <= tol * ||b||.

    Deterministic: fixed iteration, no parallel reductions.  Raises
    SolverError with the final relative residual on non-convergence.
    """
    if not A.symmetric:
        raise SolverError("solve_spd needs a matrix assembled as symmetric")
    M = A.csr
    b = np.asarray(b, dtype=float)
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return np.zeros_like(b)
    if maxit is None:
        maxit = max(50, int(20 * math.sqrt(A.n)))

    diag = A.diagonal
    if np.any(diag <= 0):
        raise SolverError("non-positive diagonal entry; operator is not SPD")
    inv_diag = 1.0 / diag

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - M @ x
    if float(np.linalg.norm(r)) <= tol * nb:
        return x
    z = inv_diag * r
    p = z.copy()
    rz = float(np.dot(r, z))
    for it in range(1, maxit + 1):
        Ap = M @ p
        alpha = rz / float(np.dot(p, Ap))
        x = x + alpha * p
        r = r - alpha * Ap
        if float(np.linalg.norm(r)) <= tol * nb:
            # recurrence residual can drift; accept only the true residual
            r = b - M @ x
            if float(np.linalg.norm(r)) <= tol * nb:
                return x
        z = inv_diag * r
        rz_new = float(np.dot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    final = float(np.linalg.norm(b - M @ x)) / nb
    raise SolverError(
        f"CG did not reach tol={tol:g} within {maxit} iterations "
        f"(final relative residual {final:.3e})",
        residual=final,
        iterations=maxit,
    )

import numpy as np
import pytest
import scipy.sparse as sp

from chanhom.errors import SolverError
from chanhom.linsolve import SparseMatrix, assemble, solve_spd


def identity_matrix(n):
    return SparseMatrix(csr=sp.identity(n, format="csr"), symmetric=True)


def test_identity_solve_returns_rhs():
    rng = np.random.default_rng(0)
    b = rng.normal(size=40)
    x = solve_spd(identity_matrix(40), b)
    assert np.allclose(x, b, atol=1e-12)


def test_two_by_two_row_sums():
    A = assemble([0, 0, 1, 1], [0, 1, 0, 1], [2.0, -1.0, -1.0, 2.0], 2)
    x = solve_spd(A, np.array([1.0, 1.0]))
    assert x == pytest.approx([1.0, 1.0], abs=1e-12)


def poisson_1d(n, h):
    """TPFA row assembly for -u'' with Dirichlet values pinned at both ends."""
    rows, cols, vals = [], [], []
    for i in range(n):
        diag = 0.0
        for j in (i - 1, i + 1):
            if 0 <= j < n:
                rows.append(i)
                cols.append(j)
                vals.append(-1.0 / h)
                diag += 1.0 / h
            else:
                diag += 2.0 / h  # half-cell to the boundary value
        rows.append(i)
        cols.append(i)
        vals.append(diag)
    return assemble(rows, cols, vals, n)


def test_1d_poisson_linear_profile_against_dense_oracle():
    n, h = 64, 1.0 / 64
    A = poisson_1d(n, h)
    b = np.zeros(n)
    b[-1] = (2.0 / h) * 1.0  # u(1) = 1, u(0) = 0, no source
    x = solve_spd(A, b, tol=1e-12)
    dense = np.linalg.solve(A.csr.toarray(), b)
    assert np.max(np.abs(x - dense)) <= 1e-10
    centers = (np.arange(n) + 0.5) * h
    assert np.max(np.abs(x - centers)) <= 1e-10  # exact linear profile


def random_spd(rng, n):
    m = sp.random(n, n, density=0.05, random_state=np.random.RandomState(rng.integers(2**31)))
    m = m + m.T
    m = m + sp.diags(np.abs(m).sum(axis=1).A1 + 1.0)
    return SparseMatrix(csr=m.tocsr(), symmetric=True)


def test_residual_contract_on_random_spd_systems():
    rng = np.random.default_rng(42)
    for _ in range(100):
        n = int(rng.integers(5, 80))
        A = random_spd(rng, n)
        b = rng.normal(size=n)
        x = solve_spd(A, b, tol=1e-10)
        res = np.linalg.norm(b - A.csr @ x) / np.linalg.norm(b)
        assert res <= 1e-10


def test_solve_is_bit_reproducible():
    rng = np.random.default_rng(1)
    A = random_spd(rng, 200)
    b = rng.normal(size=200)
    x1 = solve_spd(A, b)
    x2 = solve_spd(A, b)
    assert np.array_equal(x1, x2)


def test_zero_rhs_returns_zero():
    A = identity_matrix(7)
    assert np.array_equal(solve_spd(A, np.zeros(7)), np.zeros(7))


def test_nonconvergence_raises_with_residual():
    rng = np.random.default_rng(2)
    A = random_spd(rng, 50)
    b = rng.normal(size=50)
    with pytest.raises(SolverError) as err:
        solve_spd(A, b, tol=1e-14, maxit=1)
    assert err.value.residual is not None
    assert err.value.residual > 0


def test_asymmetric_assembly_rejected():
    with pytest.raises(SolverError, match="not symmetric"):
        assemble([0, 1], [1, 0], [1.0, 2.0], 2)


def test_unsymmetric_flag_refused_by_solver():
    m = sp.identity(3, format="csr")
    with pytest.raises(SolverError, match="symmetric"):
        solve_spd(SparseMatrix(csr=m, symmetric=False), np.ones(3))

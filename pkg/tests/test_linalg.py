import time

import numpy as np
import pytest
import scipy.sparse as sp

from ensmhd.linalg import Factorization, SingularMatrixError, factorize, relative_residual


def laplacian_2d(n):
    """Standard 5-point Laplacian on an n x n grid (n^2 unknowns)."""
    main = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n))
    eye = sp.identity(n)
    return (sp.kron(main, eye) + sp.kron(eye, main)).tocsr()


class TestFactorize:
    def test_identity_returns_rhs(self, rng):
        a = sp.identity(7, format="csr")
        b = rng.standard_normal(7)
        assert np.allclose(factorize(a).solve(b), b, atol=1e-15)

    def test_diagonal(self):
        a = sp.diags([2.0, 4.0]).tocsr()
        x = factorize(a).solve(np.array([2.0, 4.0]))
        assert np.allclose(x, [1.0, 1.0], atol=1e-15)

    def test_against_dense_lu_oracle(self, rng):
        a = sp.random(50, 50, density=0.2, random_state=7, format="csr")
        a = a + 10.0 * sp.identity(50)
        b = rng.standard_normal(50)
        x = factorize(a).solve(b)
        dense = np.linalg.solve(a.toarray(), b)
        assert np.allclose(x, dense, rtol=1e-10, atol=1e-12)
        assert relative_residual(a, x, b) <= 1e-10

    def test_input_not_mutated(self):
        a = laplacian_2d(6)
        data = a.data.copy()
        factorize(a)
        assert np.array_equal(a.data, data)

    def test_singular_matrix_raises(self):
        # row/col 2 empty -> structurally singular
        a = sp.csr_matrix(([1.0, 1.0], ([0, 1], [0, 1])), shape=(3, 3))
        with pytest.raises(SingularMatrixError):
            factorize(a)

    def test_rank_deficient_raises(self):
        # two identical rows
        a = sp.csr_matrix(np.array([[1.0, 2.0], [1.0, 2.0]]))
        with pytest.raises(SingularMatrixError):
            factorize(a)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            factorize(sp.csr_matrix((3, 4)))

    def test_determinism(self, rng):
        a = laplacian_2d(12)
        b = rng.standard_normal(a.shape[0])
        x1 = factorize(a).solve(b)
        x2 = factorize(a).solve(b)
        assert np.array_equal(x1, x2)


class TestSolveBlock:
    def test_identical_columns(self, rng):
        a = laplacian_2d(8)
        col = rng.standard_normal(a.shape[0])
        block = np.tile(col[:, None], (1, 5))
        sol = factorize(a).solve_block(block)
        for j in range(1, 5):
            assert np.array_equal(sol[:, 0], sol[:, j])

    def test_block_equals_separate_solves(self, rng):
        a = laplacian_2d(8)
        fact = factorize(a)
        block = rng.standard_normal((a.shape[0], 6))
        together = fact.solve_block(block)
        separate = np.column_stack([fact.solve(block[:, j]) for j in range(6)])
        assert np.array_equal(together, separate)

    def test_dimension_mismatch_rejected(self, rng):
        fact = factorize(laplacian_2d(5))
        with pytest.raises(ValueError):
            fact.solve_block(rng.standard_normal((7, 3)))
        with pytest.raises(ValueError):
            fact.solve(rng.standard_normal(7))

    def test_residual_on_block(self, rng):
        a = laplacian_2d(20)
        fact = factorize(a)
        block = rng.standard_normal((a.shape[0], 10))
        sol = fact.solve_block(block)
        assert relative_residual(a, sol, block) <= 1e-10


class TestSymbolicReuse:
    def test_reused_pattern_gives_same_solution(self, rng):
        a = laplacian_2d(10)
        fact1 = factorize(a)
        b = rng.standard_normal(a.shape[0])
        if fact1.symbolic is None:
            pytest.skip("backend does not expose symbolic reuse")
        a2 = a.copy()
        a2.data = a2.data * 1.5
        fact2 = factorize(a2, symbolic=fact1.symbolic)
        x = fact2.solve(b)
        assert relative_residual(a2, x, b) <= 1e-12


@pytest.mark.slow
class TestSharedFactorizationEconomy:
    def test_factor_once_beats_factor_per_member(self, rng):
        """Sharing one factorization across 20 right-hand sides must win."""
        a = laplacian_2d(100)  # 10^4 unknowns
        block = rng.standard_normal((a.shape[0], 20))

        t0 = time.perf_counter()
        fact = factorize(a)
        shared_sol = fact.solve_block(block)
        t_shared = time.perf_counter() - t0

        t0 = time.perf_counter()
        per_member = np.column_stack(
            [factorize(a).solve(block[:, j]) for j in range(20)]
        )
        t_separate = time.perf_counter() - t0

        assert np.allclose(shared_sol, per_member, rtol=1e-12, atol=1e-12)
        assert t_shared < t_separate

"""Tests for the linear solvers."""

import numpy as np
import numpy.testing as npt
import pytest
import scipy.sparse

from sdcpse._errors import ConvergenceError, SingularMatrixError
from sdcpse.linalg import csr_from_triplets, gmres, lu_solve


class TestLuSolve:
    """Tests for lu_solve."""

    def test_identity(self):
        """Test that the identity returns the right-hand side."""
        b = np.array([1.0, -2.0, 3.0])
        npt.assert_array_equal(lu_solve(np.eye(3), b), b)

    def test_small_example(self):
        """Test a 2x2 system solved by hand."""
        A = np.array([[2.0, 1.0], [1.0, 3.0]])
        npt.assert_allclose(lu_solve(A, [3.0, 5.0]), [0.8, 1.4])

    def test_random_system_residual(self):
        """Test the residual of a random well-conditioned system."""
        rng = np.random.default_rng(5)
        A = rng.standard_normal((20, 20)) + 20.0 * np.eye(20)
        b = rng.standard_normal(20)
        x = lu_solve(A, b)
        assert np.linalg.norm(A @ x - b) < 1e-12 * np.linalg.norm(b)

    def test_multiple_right_hand_sides(self):
        """Test that a matrix right-hand side is solved column by column."""
        A = np.diag([1.0, 2.0, 4.0])
        B = np.ones((3, 2))
        npt.assert_allclose(lu_solve(A, B), [[1.0, 1.0], [0.5, 0.5], [0.25, 0.25]])

    def test_singular_matrix(self):
        """Test that a rank-deficient matrix raises with its pivot ratio."""
        A = np.array([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(SingularMatrixError) as info:
            lu_solve(A, [1.0, 2.0])
        assert info.value.pivot_ratio < 1e-12

    def test_shape_checks(self):
        """Test input validation."""
        with pytest.raises(ValueError, match="square"):
            lu_solve(np.ones((2, 3)), np.ones(2))
        with pytest.raises(ValueError, match="rows"):
            lu_solve(np.eye(2), np.ones(3))
        with pytest.raises(ValueError, match="non-finite"):
            lu_solve(np.array([[np.nan, 0.0], [0.0, 1.0]]), np.ones(2))


class TestGmres:
    """Tests for the restarted GMRES wrapper."""

    def test_identity(self):
        """Test that the identity converges immediately."""
        b = np.arange(1.0, 6.0)
        result = gmres(scipy.sparse.identity(5, format="csr"), b)
        npt.assert_allclose(result.x, b)
        assert result.iterations <= 2
        assert result.residual <= 1e-10 * np.linalg.norm(b)

    def test_matches_direct_solve(self):
        """Test a diagonally dominant sparse system against LU."""
        rng = np.random.default_rng(11)
        dense = rng.uniform(-1.0, 1.0, size=(50, 50)) * (rng.random((50, 50)) < 0.1)
        dense += np.diag(np.abs(dense).sum(axis=1) + 1.0)
        b = rng.standard_normal(50)

        result = gmres(scipy.sparse.csr_matrix(dense), b)
        npt.assert_allclose(result.x, lu_solve(dense, b), rtol=1e-8, atol=1e-10)

    def test_zero_rhs(self):
        """Test that a zero right-hand side returns the zero vector without iterating."""
        result = gmres(scipy.sparse.identity(4, format="csr"), np.zeros(4))
        npt.assert_array_equal(result.x, 0.0)
        assert result.iterations == 0

    def test_iteration_budget(self):
        """Test that running out of iterations raises with the residual."""
        A = scipy.sparse.diags(np.arange(1.0, 51.0), format="csr")
        with pytest.raises(ConvergenceError) as info:
            gmres(A, np.ones(50), maxiter=2)
        assert 1 <= info.value.iterations <= 2
        assert info.value.residual > 0

    def test_shape_checks(self):
        """Test input validation."""
        with pytest.raises(ValueError, match="shape"):
            gmres(scipy.sparse.identity(3, format="csr"), np.ones(4))
        with pytest.raises(ValueError, match="non-finite"):
            gmres(scipy.sparse.identity(2, format="csr"), np.array([1.0, np.inf]))


class TestCsrFromTriplets:
    """Tests for csr_from_triplets."""

    def test_duplicates_summed(self):
        """Test that repeated entries accumulate."""
        matrix = csr_from_triplets(
            np.array([0, 0, 1, 0]), np.array([1, 1, 0, 0]), np.array([1.0, 2.0, 5.0, 4.0]), 2
        )
        npt.assert_array_equal(matrix.toarray(), [[4.0, 3.0], [5.0, 0.0]])
        assert matrix.has_sorted_indices
        assert matrix.nnz == 3

"""Dense and sparse linear solvers."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from sdcpse._constants import (
    GMRES_ATOL,
    GMRES_MAXITER,
    GMRES_RESTART,
    GMRES_RTOL,
    PIVOT_RATIO_TOL,
)
from sdcpse._errors import ConvergenceError, SingularMatrixError

logger = logging.getLogger(__name__)


def lu_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Solve `A x = b` by LU factorization with partial pivoting.

    Parameters
    ----------
    A
        Square matrix.
    b
        Right-hand side, a vector or a matrix with one column per system.

    Returns
    -------
    np.ndarray
        The solution, shaped like `b`.

    Raises
    ------
    SingularMatrixError
        If the ratio of the smallest to the largest pivot magnitude is below 1e-12.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"b has {b.shape[0]} rows but A is {A.shape[0]}x{A.shape[1]}")
    if not np.all(np.isfinite(A)):
        raise ValueError("A has non-finite entries")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)

    pivots = np.abs(np.diag(lu))
    largest = pivots.max() if pivots.size else 0.0
    ratio = pivots.min() / largest if largest > 0 else 0.0
    if ratio < PIVOT_RATIO_TOL:
        raise SingularMatrixError(
            f"matrix is singular to working precision (pivot ratio {ratio:.3e})",
            pivot_ratio=float(ratio),
        )
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


def csr_from_triplets(
    rows: np.ndarray,
    cols: np.ndarray,
    values: np.ndarray,
    n: int,
) -> scipy.sparse.csr_matrix:
    """Square CSR matrix with sorted, unique column indices; duplicate entries are summed."""
    matrix = scipy.sparse.csr_matrix((values, (rows, cols)), shape=(n, n))
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix


@dataclass(frozen=True, eq=False)
class GMRESResult:
    """Solution of an iterative solve, its inner iteration count and true residual norm."""

    x: np.ndarray
    iterations: int
    residual: float


def gmres(
    A: scipy.sparse.spmatrix | np.ndarray,
    b: np.ndarray,
    *,
    rtol: float = GMRES_RTOL,
    atol: float = GMRES_ATOL,
    restart: int = GMRES_RESTART,
    maxiter: int = GMRES_MAXITER,
    x0: np.ndarray | None = None,
) -> GMRESResult:
    """
    Restarted GMRES without preconditioning.

    Parameters
    ----------
    A
        Square sparse (or dense) matrix.
    b
        Right-hand side.
    rtol, atol
        The solve stops once `||b - A x||_2 <= max(rtol * ||b||_2, atol)`.
    restart
        Krylov subspace size between restarts.
    maxiter
        Budget of inner iterations over all restart cycles.
    x0
        Initial guess, zero by default.

    Returns
    -------
    GMRESResult
        The iterate, the number of inner iterations spent and the true residual norm.

    Raises
    ------
    ConvergenceError
        If the tolerance is not reached within `maxiter` iterations.
    """
    n = A.shape[0]
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if b.shape != (n,):
        raise ValueError(f"b must have shape ({n},), got {b.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError("b has non-finite entries")

    bnorm = float(np.linalg.norm(b))
    target = max(rtol * bnorm, atol)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    residual = float(np.linalg.norm(b - A @ x))

    iterations = 0
    inner_rtol = rtol
    while residual > target and iterations < maxiter:
        counter = [0]

        def count(_presid, counter=counter):
            counter[0] += 1

        budget = maxiter - iterations
        x, info = scipy.sparse.linalg.gmres(
            A,
            b,
            x0=x,
            rtol=inner_rtol,
            atol=atol,
            restart=min(restart, budget),
            maxiter=math.ceil(budget / restart),
            callback=count,
            callback_type="pr_norm",
        )
        if info < 0:
            raise ConvergenceError(
                f"GMRES broke down (status {info})", residual=residual, iterations=iterations
            )
        iterations += counter[0]
        residual = float(np.linalg.norm(b - A @ x))
        if counter[0] == 0:
            # Converged by its own estimate but not by the true residual; tighten and retry once
            if inner_rtol < rtol:
                break
            inner_rtol = 0.5 * target / bnorm if bnorm else rtol
        logger.debug("gmres: %d iterations, residual %.3e", iterations, residual)

    if residual > target:
        raise ConvergenceError(
            f"GMRES did not converge in {iterations} iterations "
            f"(residual {residual:.3e}, target {target:.3e})",
            residual=residual,
            iterations=iterations,
        )
    logger.info("gmres converged in %d iterations", iterations)
    return GMRESResult(x=x, iterations=iterations, residual=residual)

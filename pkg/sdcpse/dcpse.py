"""
Flat-space DC-PSE operators.

A DC-PSE operator approximates a derivative `D^alpha f` at a point `x_p` from the values at its
neighbors `x_q` as

    Q f(x_p) = eps^-|alpha| * sum_q (f(x_q) +- f(x_p)) * eta((x_p - x_q) / eps)

with the kernel `eta(z) = (sum_gamma a_gamma z^gamma) * exp(-|z|^2)`. The coefficients
`a_gamma` are fixed per point by requiring the discrete moments of the kernel to match those of
the continuous derivative up to the requested order of accuracy `r`. The sign is `+` for odd
`|alpha|` and `-` for even `|alpha|`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg

from sdcpse._constants import MOMENT_RCOND, MOMENT_RTOL
from sdcpse._errors import DegenerateDistributionError, SingularMatrixError
from sdcpse.linalg import lu_solve
from sdcpse.pointcloud import NeighborList, average_spacing, build_neighbor_list

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence


@dataclass(frozen=True, order=True)
class MultiIndex:
    """Per-coordinate derivative orders `(alpha_1, ..., alpha_d)`."""

    exponents: tuple[int, ...]

    def __post_init__(self) -> None:
        exponents = tuple(int(e) for e in self.exponents)
        if not exponents:
            raise ValueError("a multi-index needs at least one component")
        if min(exponents) < 0:
            raise ValueError(f"multi-index components must be non-negative, got {exponents}")
        object.__setattr__(self, "exponents", exponents)

    def __repr__(self) -> str:
        return f"MultiIndex{self.exponents}"

    def __add__(self, other: MultiIndex) -> MultiIndex:
        if other.dim != self.dim:
            raise ValueError(f"cannot add {self} and {other}")
        return MultiIndex(tuple(a + b for a, b in zip(self.exponents, other.exponents)))

    @property
    def dim(self) -> int:
        return len(self.exponents)

    @property
    def order(self) -> int:
        """`|alpha|`, the sum of the components."""
        return sum(self.exponents)

    @property
    def factorial(self) -> int:
        """`alpha!`, the product of the component factorials."""
        return math.prod(math.factorial(e) for e in self.exponents)

    def monomial(self, z: np.ndarray) -> np.ndarray:
        """`z^alpha` for points `z` of shape `(..., dim)`."""
        return np.prod(np.asarray(z, dtype=float) ** np.array(self.exponents), axis=-1)

    @classmethod
    def unit(cls, axis: int, dim: int, order: int = 1) -> MultiIndex:
        """Multi-index of the pure derivative of `order` along `axis`."""
        if not 0 <= axis < dim:
            raise ValueError(f"axis must be in [0, {dim}), got {axis}")
        return cls(tuple(order if i == axis else 0 for i in range(dim)))


def _as_multi_index(term: MultiIndex | Sequence[int]) -> MultiIndex:
    return term if isinstance(term, MultiIndex) else MultiIndex(tuple(term))


@dataclass(frozen=True)
class DifferentialOperator:
    """
    A sum of derivatives of equal order, e.g. the Laplacian `(2,0) + (0,2)`.

    Parameters
    ----------
    terms
        Pairwise distinct multi-indices (or integer tuples) of a common dimension and order.
    """

    terms: tuple[MultiIndex, ...]

    def __post_init__(self) -> None:
        terms = tuple(_as_multi_index(t) for t in self.terms)
        if not terms:
            raise ValueError("an operator needs at least one term")
        if len({t.dim for t in terms}) != 1:
            raise ValueError(f"all terms must share one dimension: {terms}")
        if len({t.order for t in terms}) != 1:
            raise ValueError(f"all terms must share one order: {terms}")
        if len(set(terms)) != len(terms):
            raise ValueError(f"terms must be distinct: {terms}")
        if terms[0].order < 1:
            raise ValueError("operator order must be at least 1")
        object.__setattr__(self, "terms", terms)

    @property
    def dim(self) -> int:
        return self.terms[0].dim

    @property
    def order(self) -> int:
        return self.terms[0].order

    @property
    def is_odd(self) -> bool:
        return self.order % 2 == 1

    @property
    def sign(self) -> int:
        """Sign of `f(x_p)` in the evaluation rule: `+1` for odd order, `-1` for even."""
        return 1 if self.is_odd else -1

    def moment_rhs(self, basis: Sequence[MultiIndex]) -> np.ndarray:
        """Right-hand side of the moment conditions over `basis` (summed over terms)."""
        rhs = np.zeros(len(basis))
        position = {beta: i for i, beta in enumerate(basis)}
        for term in self.terms:
            if term not in position:
                raise ValueError(f"{term} is not part of the moment basis")
            rhs[position[term]] += (-1) ** term.order * term.factorial
        return rhs

    @classmethod
    def laplacian(cls, dim: int) -> DifferentialOperator:
        """Sum of the pure second derivatives in `dim` dimensions."""
        return cls(tuple(MultiIndex.unit(axis, dim, 2) for axis in range(dim)))

    @classmethod
    def derivative(cls, axis: int, dim: int, order: int = 1) -> DifferentialOperator:
        """Pure derivative of `order` along `axis`."""
        return cls((MultiIndex.unit(axis, dim, order),))

    @classmethod
    def gradient(cls, dim: int) -> tuple[DifferentialOperator, ...]:
        """The `dim` first-derivative operators."""
        return tuple(cls.derivative(axis, dim) for axis in range(dim))


def basis_multiindices(order: int, r: int, dim: int) -> list[MultiIndex]:
    """
    Multi-indices of the moment conditions, in graded lexicographic order.

    Parameters
    ----------
    order
        `|alpha|` of the operator.
    r
        Requested order of accuracy.
    dim
        Spatial dimension (1, 2 or 3).

    Returns
    -------
    list[MultiIndex]
        Every `beta` with `beta_min <= |beta| <= order + r - 1`, where `beta_min` is 0 for odd
        `order` and 1 for even `order`. Within a degree, larger leading exponents come first.
    """
    if order < 1:
        raise ValueError(f"order must be at least 1, got {order}")
    if r < 1:
        raise ValueError(f"r must be at least 1, got {r}")
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")

    lowest = 0 if order % 2 else 1
    basis = []
    for degree in range(lowest, order + r):
        for exponents in itertools.product(range(degree, -1, -1), repeat=dim):
            if sum(exponents) == degree:
                basis.append(MultiIndex(exponents))
    return basis


def _monomials(z: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """Vandermonde-type matrix `z_q^gamma`, shape `(len(z), len(powers))`."""
    return np.prod(z[:, None, :] ** powers[None, :, :], axis=2)


@dataclass(frozen=True, eq=False)
class KernelCoefficients:
    """
    Polynomial coefficients of the DC-PSE kernel at one point.

    `coeffs[i]` multiplies `z^basis[i]`. `cutoff` is the physical support radius used for
    construction; offsets beyond it evaluate to exactly zero.
    """

    basis: tuple[MultiIndex, ...]
    coeffs: np.ndarray
    epsilon: float
    order: int
    r: int
    cutoff: float | None = None

    @cached_property
    def powers(self) -> np.ndarray:
        return np.array([beta.exponents for beta in self.basis], dtype=float)

    @property
    def dim(self) -> int:
        return self.basis[0].dim

    def evaluate_scaled(self, z: np.ndarray) -> np.ndarray:
        """Kernel values at scaled offsets `z = (x_p - x_q) / epsilon`, shape `(n, dim)`."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return (_monomials(z, self.powers) @ self.coeffs) * np.exp(-np.sum(z * z, axis=1))


def _solve_moments(
    z: np.ndarray,
    ops: Sequence[DifferentialOperator],
    r: int,
) -> tuple[list[MultiIndex], np.ndarray]:
    """Solve the moment system for several operators of one order; one column per operator."""
    order, dim = ops[0].order, ops[0].dim
    basis = basis_multiindices(order, r, dim)
    powers = np.array([beta.exponents for beta in basis], dtype=float)

    # Rows sqrt(eta window) * z^beta, so that the moment matrix is weighted.T @ weighted
    weighted = _monomials(z, powers) * np.exp(-0.5 * np.sum(z * z, axis=1))[:, None]
    gram = weighted.T @ weighted
    rhs = np.column_stack([op.moment_rhs(basis) for op in ops])

    # Symmetric diagonal scaling so the pivot ratio reflects geometry, not monomial magnitudes
    diag = np.diag(gram)
    scale = np.where(diag > 0, 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0)), 1.0)
    scaled = gram * scale[:, None] * scale[None, :]
    try:
        return basis, lu_solve(scaled, rhs * scale[:, None]) * scale[:, None]
    except SingularMatrixError as exc:
        coeffs, residual = _solve_moments_svd(weighted * scale[None, :], rhs * scale[:, None])
        violation = residual / scale[:, None]
        if np.any(violation > MOMENT_RTOL * np.max(np.abs(rhs))):
            raise DegenerateDistributionError(
                f"moment conditions for {[op.terms for op in ops]} cannot be met on this "
                f"neighborhood of {len(z)} points (violation {violation.max():.3e})"
            ) from exc
        return basis, coeffs * scale[:, None]


def _solve_moments_svd(columns: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Minimum-norm solution of `columns.T @ columns @ a = rhs` from the SVD of `columns`.

    Working on `columns` rather than on the moment matrix keeps its condition number from being
    squared; only singular values below `MOMENT_RCOND` times the largest are dropped. Returns the
    coefficients and the moment violation per condition, net of the rounding error of
    recomputing the moments, both in the units of `rhs`.
    """
    _, s, vt = scipy.linalg.svd(columns, full_matrices=False, lapack_driver="gesvd")
    keep = s > MOMENT_RCOND * s[0] if s.size and s[0] > 0 else np.zeros(s.size, dtype=bool)
    vk = vt[keep]
    coeffs = vk.T @ ((vk @ rhs) / (s[keep] ** 2)[:, None])

    values = columns @ coeffs
    moments = columns.T @ values
    rounding = len(columns) * np.finfo(float).eps * (np.abs(columns).T @ np.abs(values))
    return coeffs, np.maximum(np.abs(moments - rhs) - rounding, 0.0)


def _check_offsets(offsets: np.ndarray, dim: int, epsilon: float) -> np.ndarray:
    offsets = np.asarray(offsets, dtype=float)
    if offsets.ndim == 1:
        offsets = offsets[:, None]
    if offsets.size == 0:
        raise ValueError("offsets must not be empty")
    if offsets.shape[1] != dim:
        raise ValueError(f"offsets are {offsets.shape[1]}D but the operator is {dim}D")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return offsets


def build_kernels(
    offsets: np.ndarray,
    ops: Sequence[DifferentialOperator],
    epsilon: float,
    r: int,
    *,
    cutoff: float | None = None,
) -> list[KernelCoefficients]:
    """
    Kernels for several operators of equal order sharing one factorization.

    See `build_kernel` for the meaning of the arguments.
    """
    ops = list(ops)
    if not ops:
        raise ValueError("ops must not be empty")
    if len({(op.order, op.dim) for op in ops}) != 1:
        raise ValueError("all operators must share order and dimension")
    offsets = _check_offsets(offsets, ops[0].dim, epsilon)
    basis, coeffs = _solve_moments(offsets / epsilon, ops, r)
    return [
        KernelCoefficients(
            basis=tuple(basis),
            coeffs=coeffs[:, j].copy(),
            epsilon=float(epsilon),
            order=ops[0].order,
            r=r,
            cutoff=cutoff,
        )
        for j in range(len(ops))
    ]


def build_kernel(
    offsets: np.ndarray,
    op: DifferentialOperator,
    epsilon: float,
    r: int,
    *,
    cutoff: float | None = None,
) -> KernelCoefficients:
    """
    Solve the discrete moment conditions for the kernel of one point.

    Parameters
    ----------
    offsets
        Array of shape `(n, dim)` with the offsets `x_p - x_q` from the center to each neighbor.
    op
        The derivative to approximate.
    epsilon
        Smoothing length `eps(x_p)`.
    r
        Order of accuracy.
    cutoff
        Support radius recorded with the kernel.

    Returns
    -------
    KernelCoefficients
        Coefficients satisfying `sum_q z_q^beta eta(z_q) = (-1)^|alpha| alpha!` for the terms of
        `op` and `0` for the remaining basis entries, with `z_q = offsets_q / epsilon`.

    Raises
    ------
    DegenerateDistributionError
        If the neighborhood cannot resolve the derivative, e.g. all points on a line.
    """
    return build_kernels(offsets, [op], epsilon, r, cutoff=cutoff)[0]


def evaluate_kernel(k: KernelCoefficients, offset: np.ndarray) -> float | np.ndarray:
    """
    Kernel value at one offset `(dim,)` or at many offsets `(n, dim)`.

    Offsets longer than the recorded cutoff give exactly zero.
    """
    offset = np.asarray(offset, dtype=float)
    single = offset.ndim == 1
    offsets = np.atleast_2d(offset)
    values = k.evaluate_scaled(offsets / k.epsilon)
    if k.cutoff is not None:
        values = np.where(np.linalg.norm(offsets, axis=1) > k.cutoff, 0.0, values)
    return float(values[0]) if single else values


def apply_operator(
    field: np.ndarray,
    p: int,
    k: KernelCoefficients,
    nbrs: np.ndarray,
    positions: np.ndarray,
) -> float:
    """
    Evaluate the DC-PSE operator at point `p`.

    Parameters
    ----------
    field
        Values at all points of `positions`.
    p
        Index of the center.
    k
        Kernel built for exactly the neighborhood `nbrs` of `p`.
    nbrs
        Neighbor indices.
    positions
        Array of shape `(N, dim)`.
    """
    field = np.asarray(field, dtype=float)
    positions = np.asarray(positions, dtype=float)
    if positions.ndim == 1:
        positions = positions[:, None]
    nbrs = np.asarray(nbrs, dtype=np.intp)
    eta = evaluate_kernel(k, positions[p] - positions[nbrs])
    sign = 1.0 if k.order % 2 else -1.0
    return float(np.sum((field[nbrs] + sign * field[p]) * eta) / k.epsilon**k.order)


def discrete_moments(k: KernelCoefficients, offsets: np.ndarray) -> np.ndarray:
    """Recompute `Z^beta = sum_q z_q^beta eta(z_q)` for every basis entry of `k`."""
    offsets = np.asarray(offsets, dtype=float)
    if offsets.ndim == 1:
        offsets = offsets[:, None]
    z = offsets / k.epsilon
    return _monomials(z, k.powers).T @ k.evaluate_scaled(z)


@dataclass(frozen=True, eq=False)
class FlatOperator:
    """DC-PSE operator on a whole point cloud; `kernels[i]` belongs to `centers[i]`."""

    op: DifferentialOperator
    positions: np.ndarray
    nbrs: NeighborList
    centers: np.ndarray
    kernels: tuple[KernelCoefficients, ...]

    def evaluate(self, field: np.ndarray) -> np.ndarray:
        """Operator values at `centers`."""
        return np.array(
            [
                apply_operator(field, p, k, self.nbrs[p], self.positions)
                for p, k in zip(self.centers, self.kernels)
            ]
        )


def build_flat_operator(
    positions: np.ndarray,
    op: DifferentialOperator,
    r: int,
    r_c: float,
    *,
    eps_factor: float = 1.0,
    centers: Iterable[int] | None = None,
    nbrs: NeighborList | None = None,
) -> FlatOperator:
    """
    Build DC-PSE kernels for `op` at `centers` (default: every point).

    `epsilon` at each center is its average neighbor spacing times `eps_factor`.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim == 1:
        positions = positions[:, None]
    if nbrs is None:
        nbrs = build_neighbor_list(positions, r_c)
    centers = np.arange(len(positions)) if centers is None else np.asarray(list(centers))

    kernels = []
    for p in centers:
        epsilon = average_spacing(positions, p, nbrs) * eps_factor
        try:
            kernels.append(
                build_kernel(positions[p] - positions[nbrs[p]], op, epsilon, r, cutoff=r_c)
            )
        except DegenerateDistributionError as exc:
            raise DegenerateDistributionError(f"point {p}: {exc}", index=int(p)) from exc
    return FlatOperator(op, positions, nbrs, centers, tuple(kernels))

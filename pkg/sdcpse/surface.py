"""
Surface DC-PSE operators.

Surface points are extended virtually along their normals with constant field values. A flat
DC-PSE kernel is built in the embedding space over the extended neighborhood of each point, and
its values are summed per originating surface point. The sums are the surface kernels, so the
extended points never have to be stored.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from sdcpse._constants import COMPLEX_EIG_TOL
from sdcpse._errors import DegenerateDistributionError, IllConditionedShapeError, IsolatedPointError
from sdcpse.dcpse import DifferentialOperator, KernelCoefficients, _solve_moments
from sdcpse.linalg import csr_from_triplets
from sdcpse.pointcloud import NeighborList, SurfacePointCloud, average_spacing, build_neighbor_list

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    import scipy.sparse

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SurfaceNeighborhood:
    """
    Extended neighborhood of one surface point.

    `entries` holds the scaled offsets `d / epsilon` of all kept extended points; `group_index`
    assigns each entry to its surface neighbor (`0 .. len(neighbors) - 1`) or to the final group
    `len(neighbors)` made of the normal copies of the center itself.
    """

    center: int
    neighbors: np.ndarray
    entries: np.ndarray
    group_index: np.ndarray
    epsilon: float
    delta_n: float
    n_layers: int
    cutoff: float

    @property
    def n_groups(self) -> int:
        return len(self.neighbors) + 1

    @property
    def groups(self) -> list[np.ndarray]:
        """Scaled offsets per group, the center's own copies last."""
        return [self.entries[self.group_index == g] for g in range(self.n_groups)]


def build_surface_neighborhood(
    cloud: SurfacePointCloud,
    p: int,
    nbrs: NeighborList,
    delta_n: float | None = None,
    n_layers: int | None = None,
    r_c: float | None = None,
    *,
    eps_factor: float = 1.0,
) -> SurfaceNeighborhood:
    """
    Collect the normal copies of `p` and of its surface neighbors that lie within the cutoff.

    Parameters
    ----------
    cloud
        Surface points with unit normals.
    p
        Index of the center.
    nbrs
        Surface neighbor lists.
    delta_n
        Spacing of the copies along the normals. Defaults to the average spacing at `p`.
    n_layers
        Copies on each side of the surface. Defaults to `round(r_c / delta_n)` (at least 1).
    r_c
        Cutoff radius, `nbrs.cutoff` by default.
    eps_factor
        `epsilon` is the average spacing at `p` times this factor.

    Returns
    -------
    SurfaceNeighborhood
        For each neighbor `s`: `x_p - x_s - i * delta_n * n_s` for `i` in `[-n_layers, n_layers]`;
        then `-i * delta_n * n_p` for `i != 0`. Offsets longer than `r_c` are dropped, the rest
        divided by `epsilon`.
    """
    r_c = nbrs.cutoff if r_c is None else float(r_c)
    surface = nbrs[p]
    if surface.size == 0:
        raise IsolatedPointError(f"point {p} has no surface neighbors within r_c={r_c}", index=p)

    spacing = average_spacing(cloud, p, nbrs)
    if delta_n is None:
        delta_n = spacing
    if n_layers is None:
        n_layers = max(1, int(round(r_c / delta_n)))
    if not delta_n > 0:
        raise ValueError(f"delta_n must be positive, got {delta_n}")
    if n_layers < 1:
        raise ValueError(f"n_layers must be at least 1, got {n_layers}")

    positions, normals = cloud.positions, cloud.normals
    layers = np.arange(-n_layers, n_layers + 1) * delta_n

    copies = (positions[p] - positions[surface])[:, None, :] - (
        layers[None, :, None] * normals[surface][:, None, :]
    )
    kept = np.linalg.norm(copies, axis=2) <= r_c

    own = layers[layers != 0]
    own_copies = -own[:, None] * normals[p][None, :]
    own_kept = np.linalg.norm(own_copies, axis=1) <= r_c

    epsilon = spacing * eps_factor
    entries = np.vstack([copies[kept], own_copies[own_kept]]) / epsilon
    group_index = np.concatenate(
        [np.nonzero(kept)[0], np.full(int(own_kept.sum()), surface.size)]
    )
    return SurfaceNeighborhood(
        center=int(p),
        neighbors=surface,
        entries=entries,
        group_index=group_index,
        epsilon=float(epsilon),
        delta_n=float(delta_n),
        n_layers=int(n_layers),
        cutoff=r_c,
    )


@dataclass(frozen=True, eq=False)
class SurfaceOperator:
    """
    Surface kernels of one operator at every point, in compressed-row layout.

    `weights[indptr[p]:indptr[p + 1]]` are the kernel values for the neighbors
    `indices[indptr[p]:indptr[p + 1]]` of `p`; `self_weights[p]` is the value for `p` itself.
    Points for which no kernel was built have no neighbors and `epsilon` NaN.
    """

    op: DifferentialOperator
    r: int
    cutoff: float
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    self_weights: np.ndarray
    epsilon: np.ndarray
    delta_n: np.ndarray
    n_layers: np.ndarray
    kernels: tuple[KernelCoefficients | None, ...] | None = None

    def __len__(self) -> int:
        return len(self.self_weights)

    @property
    def order(self) -> int:
        return self.op.order

    @property
    def is_odd(self) -> bool:
        return self.op.is_odd

    def neighbors(self, p: int) -> np.ndarray:
        return self.indices[self.indptr[p] : self.indptr[p + 1]]

    def kernel_values(self, p: int) -> np.ndarray:
        """Neighbor kernel values of `p` followed by its self value."""
        return np.append(self.weights[self.indptr[p] : self.indptr[p + 1]], self.self_weights[p])

    def scale(self) -> np.ndarray:
        """`epsilon^-|alpha|` per point, zero where no kernel was built."""
        with np.errstate(invalid="ignore"):
            return np.where(np.isnan(self.epsilon), 0.0, self.epsilon ** -float(self.order))

    def evaluate(self, field: np.ndarray, *, include_self: bool | None = None) -> np.ndarray:
        return evaluate_surface_operator(field, self, include_self=include_self)

    def to_sparse(self) -> scipy.sparse.csr_matrix:
        """
        Matrix `A` with `A @ f == evaluate(f)` up to rounding.

        Off-diagonal entries are the scaled neighbor weights; the diagonal collects
        `sign * sum(weights)` plus, for odd operators, twice the self weight.
        """
        n = len(self)
        rows = np.repeat(np.arange(n), np.diff(self.indptr))
        scale = self.scale()
        off = self.weights * scale[rows]
        sign = self.op.sign
        diag = sign * np.bincount(rows, weights=off, minlength=n)
        diag = diag + (1 + sign) * self.self_weights * scale
        return csr_from_triplets(
            np.concatenate([rows, np.arange(n)]),
            np.concatenate([self.indices, np.arange(n)]),
            np.concatenate([off, diag]),
            n,
        )


def evaluate_surface_operator(
    field: np.ndarray,
    sop: SurfaceOperator,
    *,
    include_self: bool | None = None,
) -> np.ndarray:
    """
    Apply a surface operator to a field given on all surface points.

    Parameters
    ----------
    field
        One value per point.
    sop
        The operator.
    include_self
        Whether to add the self term `(f_p +- f_p) * eta_S(p, p)`. It vanishes identically for
        even operators, so by default it is added only for odd ones.

    Returns
    -------
    np.ndarray
        `eps^-|alpha| * (sum_s (f_s +- f_p) eta_S(p, s) + (f_p +- f_p) eta_S(p, p))` per point.
    """
    field = np.asarray(field, dtype=float)
    n = len(sop)
    if field.shape != (n,):
        raise ValueError(f"field must have shape ({n},), got {field.shape}")
    if include_self is None:
        include_self = sop.is_odd

    sign = float(sop.op.sign)
    rows = np.repeat(np.arange(n), np.diff(sop.indptr))
    contributions = (field[sop.indices] + sign * field[rows]) * sop.weights
    total = np.bincount(rows, weights=contributions, minlength=n)
    if include_self:
        total = total + (field + sign * field) * sop.self_weights
    return total * sop.scale()


class _PointResult(NamedTuple):
    neighbors: np.ndarray
    values: list[np.ndarray]
    epsilon: float
    delta_n: float
    n_layers: int
    kernels: list[KernelCoefficients] | None


def build_surface_operators(
    cloud: SurfacePointCloud,
    ops: Sequence[DifferentialOperator],
    r: int,
    r_c: float,
    delta_n: float | None = None,
    n_layers: int | None = None,
    eps_factor: float = 1.0,
    *,
    nbrs: NeighborList | None = None,
    centers: Iterable[int] | np.ndarray | None = None,
    keep_kernels: bool = False,
    n_jobs: int = 1,
) -> list[SurfaceOperator]:
    """
    Surface operators for several derivatives of equal order, sharing neighborhoods and solves.

    See `build_surface_operator` for the parameters.
    """
    ops = list(ops)
    if not ops:
        raise ValueError("ops must not be empty")
    for op in ops:
        if op.dim != cloud.dim:
            raise ValueError(
                f"operator terms are {op.dim}D but the cloud is embedded in {cloud.dim}D"
            )
    if n_jobs < 1:
        raise ValueError(f"n_jobs must be at least 1, got {n_jobs}")
    if nbrs is None:
        nbrs = build_neighbor_list(cloud, r_c)

    n = len(cloud)
    if centers is None:
        centers = np.arange(n)
    else:
        centers = np.asarray(centers)
        if centers.dtype == bool:
            centers = np.flatnonzero(centers)

    def build_point(p: int) -> _PointResult:
        hood = build_surface_neighborhood(
            cloud, p, nbrs, delta_n, n_layers, r_c, eps_factor=eps_factor
        )
        try:
            basis, coeffs = _solve_moments(hood.entries, ops, r)
        except DegenerateDistributionError as exc:
            raise DegenerateDistributionError(f"point {p}: {exc}", index=int(p)) from exc

        kernels = [
            KernelCoefficients(
                basis=tuple(basis),
                coeffs=coeffs[:, j].copy(),
                epsilon=hood.epsilon,
                order=op.order,
                r=r,
                cutoff=r_c,
            )
            for j, op in enumerate(ops)
        ]
        values = [
            np.bincount(
                hood.group_index,
                weights=kernel.evaluate_scaled(hood.entries),
                minlength=hood.n_groups,
            )
            for kernel in kernels
        ]
        return _PointResult(
            hood.neighbors,
            values,
            hood.epsilon,
            hood.delta_n,
            hood.n_layers,
            kernels if keep_kernels else None,
        )

    start = time.perf_counter()
    if n_jobs == 1:
        results = [build_point(int(p)) for p in centers]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as executor:
            results = list(executor.map(build_point, (int(p) for p in centers)))
    logger.debug(
        "built %d surface kernel(s) at %d points in %.2f s",
        len(ops),
        len(centers),
        time.perf_counter() - start,
    )

    counts = np.zeros(n, dtype=np.intp)
    epsilon = np.full(n, np.nan)
    normal_spacing = np.full(n, np.nan)
    layers = np.zeros(n, dtype=np.intp)
    for p, result in zip(centers, results):
        counts[p] = result.neighbors.size
        epsilon[p] = result.epsilon
        normal_spacing[p] = result.delta_n
        layers[p] = result.n_layers
    indptr = np.concatenate([[0], np.cumsum(counts)])

    indices = np.zeros(indptr[-1], dtype=np.intp)
    weights = [np.zeros(indptr[-1]) for _ in ops]
    self_weights = [np.zeros(n) for _ in ops]
    kernels: list[list[KernelCoefficients | None]] = [[None] * n for _ in ops]
    for p, result in zip(centers, results):
        lo, hi = indptr[p], indptr[p + 1]
        indices[lo:hi] = result.neighbors
        for j in range(len(ops)):
            weights[j][lo:hi] = result.values[j][:-1]
            self_weights[j][p] = result.values[j][-1]
            if result.kernels is not None:
                kernels[j][p] = result.kernels[j]

    return [
        SurfaceOperator(
            op=op,
            r=r,
            cutoff=float(r_c),
            indptr=indptr,
            indices=indices,
            weights=weights[j],
            self_weights=self_weights[j],
            epsilon=epsilon,
            delta_n=normal_spacing,
            n_layers=layers,
            kernels=tuple(kernels[j]) if keep_kernels else None,
        )
        for j, op in enumerate(ops)
    ]


def build_surface_operator(
    cloud: SurfacePointCloud,
    op: DifferentialOperator,
    r: int,
    r_c: float,
    delta_n: float | None = None,
    n_layers: int | None = None,
    eps_factor: float = 1.0,
    *,
    nbrs: NeighborList | None = None,
    centers: Iterable[int] | np.ndarray | None = None,
    keep_kernels: bool = False,
    n_jobs: int = 1,
) -> SurfaceOperator:
    """
    Build the surface kernels of `op` at every point of `cloud`.

    Parameters
    ----------
    cloud
        Surface points with unit normals.
    op
        Derivative with multi-indices in the embedding dimension, e.g. `(2,0) + (0,2)` for the
        Laplace-Beltrami operator on a curve in the plane.
    r
        Order of accuracy.
    r_c
        Cutoff radius for surface neighbors and extended points.
    delta_n, n_layers
        Normal spacing and layers per side; per-point defaults as in
        `build_surface_neighborhood`.
    eps_factor
        Multiplier on the average spacing giving `epsilon`.
    nbrs
        Precomputed surface neighbor list for `r_c`.
    centers
        Indices (or a boolean mask) of the points that get kernels; the rest stay empty.
    keep_kernels
        Retain the embedding-space kernel of every point in `SurfaceOperator.kernels`.
    n_jobs
        Worker threads for the per-point construction. The result does not depend on it.

    Raises
    ------
    DegenerateDistributionError
        With `index` set to the offending point.
    IsolatedPointError
        If a center has no surface neighbor.
    """
    return build_surface_operators(
        cloud,
        [op],
        r,
        r_c,
        delta_n,
        n_layers,
        eps_factor,
        nbrs=nbrs,
        centers=centers,
        keep_kernels=keep_kernels,
        n_jobs=n_jobs,
    )[0]


def save_surface_operator(sop: SurfaceOperator, path: str | Path) -> Path:
    """Write the surface kernels to a compressed `.npz` file."""
    path = Path(path)
    np.savez_compressed(
        path,
        terms=np.array([t.exponents for t in sop.op.terms]),
        r=sop.r,
        cutoff=sop.cutoff,
        indptr=sop.indptr,
        indices=sop.indices,
        weights=sop.weights,
        self_weights=sop.self_weights,
        epsilon=sop.epsilon,
        delta_n=sop.delta_n,
        n_layers=sop.n_layers,
    )
    # numpy appends the suffix when it is missing
    return path if path.suffix == ".npz" else path.with_name(path.name + ".npz")


def load_surface_operator(path: str | Path) -> SurfaceOperator:
    """Read surface kernels written by `save_surface_operator`."""
    with np.load(Path(path)) as data:
        return SurfaceOperator(
            op=DifferentialOperator(tuple(tuple(int(e) for e in row) for row in data["terms"])),
            r=int(data["r"]),
            cutoff=float(data["cutoff"]),
            indptr=data["indptr"],
            indices=data["indices"],
            weights=data["weights"],
            self_weights=data["self_weights"],
            epsilon=data["epsilon"],
            delta_n=data["delta_n"],
            n_layers=data["n_layers"],
        )


def shape_tensor(
    cloud: SurfacePointCloud,
    r: int,
    r_c: float,
    delta_n: float | None = None,
    n_layers: int | None = None,
    eps_factor: float = 1.0,
    *,
    nbrs: NeighborList | None = None,
    n_jobs: int = 1,
    operators: Sequence[SurfaceOperator] | None = None,
) -> np.ndarray:
    """
    Embedded shape tensor `grad_S n` at every point of a surface in 3D.

    `operators` may supply the three first-derivative surface operators, built earlier with the
    same parameters, in which case nothing is rebuilt.

    Returns
    -------
    np.ndarray
        Array of shape `(N, 3, 3)` whose row `i` at each point is the surface gradient of the
        normal component `n_i`.
    """
    if cloud.dim != 3:
        raise ValueError(f"the shape tensor needs a surface in 3D, got dim={cloud.dim}")
    if operators is not None:
        gradient = list(operators)
        if [sop.op for sop in gradient] != list(DifferentialOperator.gradient(3)):
            raise ValueError("operators must be the x, y and z first derivatives")
    else:
        gradient = build_surface_operators(
            cloud,
            DifferentialOperator.gradient(3),
            r,
            r_c,
            delta_n,
            n_layers,
            eps_factor,
            nbrs=nbrs,
            n_jobs=n_jobs,
        )
    shape = np.empty((len(cloud), 3, 3))
    for i in range(3):
        for j, sop in enumerate(gradient):
            shape[:, i, j] = sop.evaluate(cloud.normals[:, i])
    return shape


class Curvatures(NamedTuple):
    """Mean and Gauss curvature per point, with principal curvatures `kappa1 >= kappa2`."""

    mean: np.ndarray
    gauss: np.ndarray
    principal: np.ndarray


def curvatures(shape: np.ndarray) -> Curvatures:
    """
    Curvatures from shape tensors.

    `H` is half the trace (positive on the unit sphere with outward normals). `K` is the product
    of the two eigenvalues of largest magnitude; the remaining one belongs to the normal direction.

    Raises
    ------
    IllConditionedShapeError
        If an eigenvalue has an imaginary part above 1e-6 times the norm of its matrix.
    """
    shape = np.asarray(shape, dtype=float)
    if shape.ndim != 3 or shape.shape[1:] != (3, 3):
        raise ValueError(f"expected shape (N, 3, 3), got {shape.shape}")

    eigenvalues = np.linalg.eigvals(shape)
    scale = np.linalg.norm(shape, axis=(1, 2))
    complex_pair = np.abs(eigenvalues.imag).max(axis=1) > COMPLEX_EIG_TOL * scale
    if np.any(complex_pair):
        p = int(np.flatnonzero(complex_pair)[0])
        raise IllConditionedShapeError(
            f"shape tensor at point {p} has complex eigenvalues {eigenvalues[p]}", index=p
        )

    real = eigenvalues.real
    by_magnitude = np.argsort(-np.abs(real), axis=1, kind="stable")
    leading = np.take_along_axis(real, by_magnitude[:, :2], axis=1)
    principal = -np.sort(-leading, axis=1)
    return Curvatures(
        mean=0.5 * np.trace(shape, axis1=1, axis2=2),
        gauss=leading[:, 0] * leading[:, 1],
        principal=principal,
    )

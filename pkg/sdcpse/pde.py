"""Surface PDE building blocks: Poisson assembly, mirror ghosts and Dormand-Prince stepping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from sdcpse._constants import DOPRI5_A, DOPRI5_B_STAR, DOPRI5_C
from sdcpse._errors import BlowUpError, UnsupportedGeometryError
from sdcpse.linalg import GMRESResult, csr_from_triplets, gmres
from sdcpse.pointcloud import BumpSurfaceSpec, SurfacePointCloud, bump_profile

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Mapping

    import scipy.sparse

    from sdcpse.surface import SurfaceOperator

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SparseSystem:
    """Implicit operator matrix with its right-hand side and pinned values."""

    matrix: scipy.sparse.csr_matrix
    rhs: np.ndarray
    dirichlet: dict[int, float] = field(default_factory=dict)

    def solve(self, **kwargs) -> GMRESResult:
        """Solve with `linalg.gmres`; keyword arguments are passed through."""
        return gmres(self.matrix, self.rhs, **kwargs)


def assemble_poisson(
    sop: SurfaceOperator,
    rhs_field: np.ndarray,
    dirichlet: Mapping[int, float] | Iterable[tuple[int, float]],
    *,
    fold_dirichlet: bool = True,
) -> SparseSystem:
    """
    Assemble `Q f = rhs_field` with Dirichlet values at selected points.

    Parameters
    ----------
    sop
        Even-order surface operator, normally the Laplace-Beltrami operator.
    rhs_field
        Right-hand side at every point.
    dirichlet
        Pinned points and their values, as a mapping or `(index, value)` pairs. Must not be
        empty: the Laplace-Beltrami operator has the constants in its nullspace.
    fold_dirichlet
        Move the columns of pinned points into the right-hand side of the other rows. The
        solution is the same either way.

    Returns
    -------
    SparseSystem
        Rows of free points hold the scaled surface kernels off the diagonal and minus their sum
        on it; rows of pinned points are identity rows.
    """
    if sop.is_odd:
        raise ValueError("assemble_poisson needs an even-order operator")
    dirichlet = {int(p): float(v) for p, v in dict(dirichlet).items()}
    if not dirichlet:
        raise ValueError("at least one Dirichlet point is required")

    n = len(sop)
    rhs = np.array(rhs_field, dtype=float)
    if rhs.shape != (n,):
        raise ValueError(f"rhs_field must have shape ({n},), got {rhs.shape}")
    pinned = np.fromiter(dirichlet.keys(), dtype=np.intp)
    values = np.fromiter(dirichlet.values(), dtype=float)
    if pinned.min() < 0 or pinned.max() >= n:
        raise ValueError(f"Dirichlet indices must lie in [0, {n})")

    is_pinned = np.zeros(n, dtype=bool)
    is_pinned[pinned] = True
    known = np.zeros(n)
    known[pinned] = values

    coo = sop.to_sparse().tocoo()
    rows, cols, vals = coo.row, coo.col, coo.data
    keep = ~is_pinned[rows]
    if fold_dirichlet:
        folded = keep & is_pinned[cols] & (rows != cols)
        rhs -= np.bincount(rows[folded], weights=vals[folded] * known[cols[folded]], minlength=n)
        keep &= ~folded

    rhs[pinned] = values
    matrix = csr_from_triplets(
        np.concatenate([rows[keep], pinned]),
        np.concatenate([cols[keep], pinned]),
        np.concatenate([vals[keep], np.ones(pinned.size)]),
        n,
    )
    return SparseSystem(matrix=matrix, rhs=rhs, dirichlet=dirichlet)


@dataclass(frozen=True, eq=False)
class GhostMap:
    """
    Mirror points outside a square domain.

    `mirror[g]` gives, per planar axis, the edge that ghost `g` was reflected across: `-1` for
    the lower edge, `+1` for the upper edge, `0` for none.
    """

    ghosts: np.ndarray
    sources: np.ndarray
    mirror: np.ndarray

    def __len__(self) -> int:
        return len(self.ghosts)


def build_ghosts(
    cloud: SurfacePointCloud,
    spec: BumpSurfaceSpec,
    r_c: float,
    *,
    width: float | None = None,
) -> tuple[SurfacePointCloud, GhostMap]:
    """
    Reflect points near the edges of the domain to impose zero-flux boundaries.

    Parameters
    ----------
    cloud
        Graph-surface points over `spec.domain`.
    spec
        Geometry of the surface.
    r_c
        Kernel cutoff radius.
    width
        Band next to each edge whose points are mirrored. Defaults to `r_c`. Points lying exactly
        on an edge are their own mirror image and are skipped.

    Returns
    -------
    tuple[SurfacePointCloud, GhostMap]
        The cloud followed by its ghosts (labeled `"ghost"`), and the ghost-to-source map. Points
        near a corner get three ghosts: one per edge and one across the corner.

    Raises
    ------
    UnsupportedGeometryError
        If the bump reaches into the reflected band.
    """
    if cloud.dim != 3:
        raise ValueError(f"ghosts are built for graph surfaces in 3D, got dim={cloud.dim}")
    width = float(r_c if width is None else width)
    if not width > 0:
        raise ValueError(f"width must be positive, got {width}")
    if spec.distance_to_boundary() < width:
        raise UnsupportedGeometryError(
            f"the bump support lies within {width} of the domain boundary; "
            "reflection of curved regions is not supported"
        )

    lo, hi = spec.domain
    eligible = ~cloud.mask("ghost")

    def edge_side(coord: np.ndarray) -> np.ndarray:
        upper = (hi - coord > 0) & (hi - coord <= width)
        lower = (coord - lo > 0) & (coord - lo <= width)
        return np.where(upper, 1, np.where(lower, -1, 0)) * eligible

    side_x = edge_side(cloud.positions[:, 0])
    side_y = edge_side(cloud.positions[:, 1])

    groups = [
        (np.flatnonzero(side_x), True, False),
        (np.flatnonzero(side_y), False, True),
        (np.flatnonzero(side_x * side_y), True, True),
    ]
    sources = np.concatenate([g[0] for g in groups]).astype(np.intp)
    mirror = np.zeros((sources.size, 2), dtype=np.intp)
    offset = 0
    for indices, across_x, across_y in groups:
        block = slice(offset, offset + indices.size)
        if across_x:
            mirror[block, 0] = side_x[indices]
        if across_y:
            mirror[block, 1] = side_y[indices]
        offset += indices.size

    positions = cloud.positions[sources].copy()
    normals = cloud.normals[sources].copy()
    for axis in range(2):
        flipped = mirror[:, axis] != 0
        edge = np.where(mirror[flipped, axis] > 0, hi, lo)
        positions[flipped, axis] = 2.0 * edge - positions[flipped, axis]
        normals[flipped, axis] = -normals[flipped, axis]

    ghosts = SurfacePointCloud(positions, normals, np.full(sources.size, "ghost", dtype=object))
    augmented = cloud.concatenate(ghosts)
    gmap = GhostMap(
        ghosts=np.arange(len(cloud), len(augmented)),
        sources=sources,
        mirror=mirror,
    )
    logger.debug("built %d ghost points (band width %.4g)", len(gmap), width)
    return augmented, gmap


def sync_ghosts(field: np.ndarray, gmap: GhostMap) -> np.ndarray:
    """Copy each source value onto its ghosts (even reflection)."""
    out = np.array(field, dtype=float)
    out[gmap.ghosts] = out[gmap.sources]
    return out


def bump_initial_condition(cloud: SurfacePointCloud, spec: BumpSurfaceSpec) -> np.ndarray:
    """`sigma^-2 * zeta(|x| / sigma)` at every point, `x` taken in the embedding space."""
    sigma = spec.init_sigma
    return bump_profile(np.linalg.norm(cloud.positions, axis=1) / sigma) / sigma**2


def _stage_state(y: np.ndarray, dt: float, row: tuple[float, ...], k: list[np.ndarray]):
    increment = None
    for a, kj in zip(row, k):
        if a == 0.0:
            continue
        increment = a * kj if increment is None else increment + a * kj
    return y if increment is None else y + dt * increment


def dopri5_step(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    t: float,
    y: np.ndarray,
    dt: float,
    *,
    sync: Callable[[np.ndarray], np.ndarray] | None = None,
    k1: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    One Dormand-Prince step.

    Parameters
    ----------
    rhs
        `rhs(t, y)` giving `dy/dt`.
    t, y, dt
        Current time, state and step size.
    sync
        Applied to every stage state before `rhs` is evaluated on it.
    k1
        Slope at `(t, y)` if already known (first-same-as-last reuse).

    Returns
    -------
    tuple[np.ndarray, np.ndarray, np.ndarray]
        The fifth-order solution, the embedded fourth-order solution and the slope at the new
        state.
    """
    k: list[np.ndarray] = []
    state = y
    for stage, (c, row) in enumerate(zip(DOPRI5_C, DOPRI5_A)):
        state = _stage_state(y, dt, row, k)
        if sync is not None:
            state = sync(state)
        if stage == 0 and k1 is not None:
            k.append(k1)
        else:
            k.append(np.asarray(rhs(t + c * dt, state), dtype=float))
    # The last stage state carries the fifth-order weights
    y5 = state
    y4 = _stage_state(y, dt, DOPRI5_B_STAR, k)
    return y5, y4, k[-1]


def dopri5_integrate(
    initial: np.ndarray,
    rhs: Callable[[float, np.ndarray], np.ndarray],
    dt: float,
    t_final: float,
    *,
    sync: Callable[[np.ndarray], np.ndarray] | None = None,
    observer: Callable[[int, float, np.ndarray], None] | None = None,
    t0: float = 0.0,
) -> np.ndarray:
    """
    Integrate `dy/dt = rhs(t, y)` from `t0` to `t0 + t_final` with fixed Dormand-Prince steps.

    Parameters
    ----------
    initial
        State at `t0`.
    rhs
        Right-hand side.
    dt
        Step size. When `t_final` is not a multiple of `dt` the last step is shortened.
    t_final
        Length of the time interval.
    sync
        Applied to the initial state and to every stage state, e.g. `sync_ghosts`.
    observer
        Called as `observer(step, t, y)` for the initial state (step 0) and after every step.

    Returns
    -------
    np.ndarray
        The fifth-order solution at the final time.

    Raises
    ------
    BlowUpError
        As soon as a step produces a non-finite value.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if t_final < 0:
        raise ValueError(f"t_final must be non-negative, got {t_final}")

    n_full = int(np.floor(t_final / dt + 1e-9))
    remainder = t_final - n_full * dt
    steps = [dt] * n_full
    if remainder > 1e-12 * max(1.0, t_final):
        steps.append(remainder)

    y = np.array(initial, dtype=float)
    if sync is not None:
        y = sync(y)
    t = t0
    if observer is not None:
        observer(0, t, y)

    k1 = None
    for step, h in enumerate(steps, start=1):
        y, _, k1 = dopri5_step(rhs, t, y, h, sync=sync, k1=k1)
        t = t0 + min(step * dt, t_final)
        if not np.all(np.isfinite(y)):
            raise BlowUpError(f"non-finite value after step {step} (t={t:.6g})", step=step)
        if observer is not None:
            observer(step, t, y)

    logger.debug("dopri5: %d steps to t=%.6g", len(steps), t)
    return y

"""Point clouds on surfaces: data model, neighbor search, analytic generators and spacing."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.spatial import cKDTree

from sdcpse._constants import (
    BUMP_CENTER,
    BUMP_CUTOFF,
    BUMP_DOMAIN,
    BUMP_INIT_SIGMA,
    BUMP_RADIUS,
    BUMP_REFINEMENT,
    COINCIDENCE_TOL,
    GOLDEN_ANGLE,
    POINT_LABELS,
    UNIT_NORMAL_TOL,
)
from sdcpse._errors import IsolatedPointError

if TYPE_CHECKING:
    from collections.abc import Sequence


@dataclass(frozen=True, eq=False)
class SurfacePointCloud:
    """
    Collocation points of a surface together with their unit normals.

    Parameters
    ----------
    positions
        Array of shape `(N, dim)` with `dim` equal to 2 (curves in the plane) or 3.
    normals
        Array of the same shape holding unit normals.
    labels
        Optional per-point tags, each one of `"interior"`, `"dirichlet"` or `"ghost"`. Defaults
        to `"interior"` everywhere.

    The arrays are copied and made read-only. Construction fails when a normal is not of unit
    length or when two points coincide.
    """

    positions: np.ndarray
    normals: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        positions = np.array(self.positions, dtype=float)
        normals = np.array(self.normals, dtype=float)

        if positions.ndim != 2 or positions.shape[1] not in (2, 3):
            raise ValueError(
                f"positions must have shape (N, 2) or (N, 3), got {positions.shape}"
            )
        if normals.shape != positions.shape:
            raise ValueError(
                f"normals must match positions: {normals.shape} != {positions.shape}"
            )

        n = len(positions)
        if self.labels is None:
            labels = np.full(n, "interior", dtype=object)
        else:
            labels = np.array(self.labels, dtype=object)
            if labels.shape != (n,):
                raise ValueError(f"expected {n} labels, got {labels.shape[0]}")
            unknown = set(labels) - set(POINT_LABELS)
            if unknown:
                raise ValueError(
                    f"unknown point labels {sorted(unknown)}; expected one of {POINT_LABELS}"
                )

        if n:
            lengths = np.linalg.norm(normals, axis=1)
            bad = np.flatnonzero(np.abs(lengths - 1.0) > UNIT_NORMAL_TOL)
            if bad.size:
                raise ValueError(
                    f"normal at point {bad[0]} has length {lengths[bad[0]]!r}; "
                    "normals must have unit length"
                )
        if n > 1:
            _check_no_coincident_points(positions)

        for array in (positions, normals, labels):
            array.setflags(write=False)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.positions)

    def __repr__(self) -> str:
        counts = {label: int(np.sum(self.labels == label)) for label in POINT_LABELS}
        parts = [f"{count} {label}" for label, count in counts.items() if count]
        return f"<SurfacePointCloud: dim={self.dim}, {', '.join(parts) or 'empty'}>"

    @property
    def dim(self) -> int:
        """Embedding dimension."""
        return self.positions.shape[1]

    @property
    def diameter(self) -> float:
        """Length of the bounding-box diagonal."""
        if not len(self):
            return 0.0
        return float(np.linalg.norm(np.ptp(self.positions, axis=0)))

    def with_labels(self, labels: Sequence[str] | np.ndarray) -> SurfacePointCloud:
        """Return a copy carrying new labels."""
        return SurfacePointCloud(self.positions, self.normals, labels)

    def subset(self, indices: np.ndarray) -> SurfacePointCloud:
        """Return the cloud restricted to `indices` (in that order)."""
        indices = np.asarray(indices)
        return SurfacePointCloud(
            self.positions[indices], self.normals[indices], self.labels[indices]
        )

    def concatenate(self, other: SurfacePointCloud) -> SurfacePointCloud:
        """Return this cloud followed by `other`."""
        if other.dim != self.dim:
            raise ValueError(f"cannot join a {other.dim}D cloud to a {self.dim}D cloud")
        return SurfacePointCloud(
            np.vstack([self.positions, other.positions]),
            np.vstack([self.normals, other.normals]),
            np.concatenate([self.labels, other.labels]),
        )

    def mask(self, label: str) -> np.ndarray:
        """Boolean mask of the points carrying `label`."""
        return self.labels == label


def _check_no_coincident_points(positions: np.ndarray) -> None:
    diameter = float(np.linalg.norm(np.ptp(positions, axis=0)))
    distances, nearest = cKDTree(positions).query(positions, k=2)
    i = int(np.argmin(distances[:, 1]))
    if distances[i, 1] <= COINCIDENCE_TOL * diameter:
        raise ValueError(f"points {i} and {int(nearest[i, 1])} coincide")


@dataclass(frozen=True, eq=False)
class NeighborList:
    """
    Fixed-radius neighbors in compressed-row layout.

    The neighbors of point `p` are `indices[indptr[p]:indptr[p + 1]]`, sorted ascending and never
    containing `p` itself.
    """

    cutoff: float
    indptr: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indptr) - 1

    def __getitem__(self, p: int) -> np.ndarray:
        return self.indices[self.indptr[p] : self.indptr[p + 1]]

    @property
    def counts(self) -> np.ndarray:
        """Number of neighbors per point."""
        return np.diff(self.indptr)

    def rows(self) -> np.ndarray:
        """Center index of every entry of `indices`."""
        return np.repeat(np.arange(len(self)), self.counts)


def _as_positions(cloud: SurfacePointCloud | np.ndarray) -> np.ndarray:
    if isinstance(cloud, SurfacePointCloud):
        return cloud.positions
    positions = np.asarray(cloud, dtype=float)
    if positions.ndim == 1:
        positions = positions[:, None]
    return positions


def build_neighbor_list(cloud: SurfacePointCloud | np.ndarray, r_c: float) -> NeighborList:
    """
    Find all pairs of points closer than the cutoff using a cell list.

    Points are binned into cubic cells of edge `r_c`; candidates are taken from the 3^dim
    surrounding cells and kept when their Euclidean distance is at most `r_c`.

    Parameters
    ----------
    cloud
        A `SurfacePointCloud` or a plain `(N, dim)` array of positions.
    r_c
        Cutoff radius. Pairs at exactly `r_c` are included.

    Returns
    -------
    NeighborList
        Symmetric neighbor lists, excluding each point itself.
    """
    if not r_c > 0:
        raise ValueError(f"r_c must be positive, got {r_c}")

    positions = _as_positions(cloud)
    n, dim = positions.shape
    if n == 0:
        return NeighborList(float(r_c), np.zeros(1, dtype=np.intp), np.zeros(0, dtype=np.intp))

    # One empty cell of padding on each side keeps the shifted keys from wrapping
    cells = np.floor((positions - positions.min(axis=0)) / r_c).astype(np.int64) + 1
    shape = cells.max(axis=0) + 2
    if np.prod(shape.astype(float)) >= 2.0**62:
        raise ValueError(f"r_c={r_c} is too small for the extent of the cloud")
    strides = np.concatenate([[1], np.cumprod(shape[:-1])]).astype(np.int64)
    keys = cells @ strides

    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]

    row_chunks = []
    col_chunks = []
    for offset in itertools.product((-1, 0, 1), repeat=dim):
        target = keys + int(np.dot(offset, strides))
        start = np.searchsorted(sorted_keys, target, side="left")
        count = np.searchsorted(sorted_keys, target, side="right") - start
        total = int(count.sum())
        if total == 0:
            continue
        rows = np.repeat(np.arange(n), count)
        shift = np.repeat(start - (np.cumsum(count) - count), count)
        cols = order[np.arange(total) + shift]
        distance = np.linalg.norm(positions[rows] - positions[cols], axis=1)
        keep = (rows != cols) & (distance <= r_c)
        row_chunks.append(rows[keep])
        col_chunks.append(cols[keep])

    rows = np.concatenate(row_chunks) if row_chunks else np.zeros(0, dtype=np.intp)
    cols = np.concatenate(col_chunks) if col_chunks else np.zeros(0, dtype=np.intp)
    order = np.lexsort((cols, rows))
    indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n))])

    return NeighborList(float(r_c), indptr.astype(np.intp), cols[order].astype(np.intp))


def average_spacing(cloud: SurfacePointCloud | np.ndarray, p: int, nbrs: NeighborList) -> float:
    """
    Arithmetic mean of the L1 distances from point `p` to its neighbors.

    Raises
    ------
    IsolatedPointError
        If `p` has no neighbors.
    """
    positions = _as_positions(cloud)
    idx = nbrs[p]
    if idx.size == 0:
        raise IsolatedPointError(
            f"point {p} has no neighbors within r_c={nbrs.cutoff}", index=int(p)
        )
    return float(np.abs(positions[p] - positions[idx]).sum(axis=1).mean())


def spacing_field(cloud: SurfacePointCloud | np.ndarray, nbrs: NeighborList) -> np.ndarray:
    """`average_spacing` at every point at once."""
    positions = _as_positions(cloud)
    counts = nbrs.counts
    isolated = np.flatnonzero(counts == 0)
    if isolated.size:
        p = int(isolated[0])
        raise IsolatedPointError(
            f"{isolated.size} point(s) have no neighbors within r_c={nbrs.cutoff}, first is {p}",
            index=p,
        )
    rows = nbrs.rows()
    l1 = np.abs(positions[rows] - positions[nbrs.indices]).sum(axis=1)
    return np.bincount(rows, weights=l1, minlength=len(nbrs)) / counts


def nearest_point(
    cloud: SurfacePointCloud,
    target: Sequence[float],
    *,
    label: str | None = "interior",
) -> tuple[int, float]:
    """
    Index of and distance to the point closest to `target`.

    Only the leading `len(target)` coordinates are compared, so a 2D target finds the point whose
    projection onto the plane is closest. Points with a different label are skipped unless
    `label=None`.
    """
    target = np.asarray(target, dtype=float)
    candidates = np.arange(len(cloud)) if label is None else np.flatnonzero(cloud.mask(label))
    if candidates.size == 0:
        raise ValueError(f"no points labeled {label!r}")
    distance = np.linalg.norm(cloud.positions[candidates, : target.size] - target, axis=1)
    best = int(np.argmin(distance))
    return int(candidates[best]), float(distance[best])


def farthest_point_subsample(positions: np.ndarray, n: int, *, start: int = 0) -> np.ndarray:
    """
    Pick `n` indices by greedy farthest-point sampling, beginning at `start`.

    Deterministic; the result spreads evenly over the input.
    """
    positions = np.asarray(positions, dtype=float)
    if not 0 < n <= len(positions):
        raise ValueError(f"n must be in [1, {len(positions)}], got {n}")
    chosen = np.empty(n, dtype=np.intp)
    chosen[0] = start
    distance = np.linalg.norm(positions - positions[start], axis=1)
    for i in range(1, n):
        chosen[i] = int(np.argmax(distance))
        np.minimum(distance, np.linalg.norm(positions - positions[chosen[i]], axis=1), out=distance)
    return chosen


def _normalize_rows(vectors: np.ndarray) -> np.ndarray:
    return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)


def generate_circle(n_points: int) -> SurfacePointCloud:
    """
    Equi-angular points on the unit circle with outward normals.

    Parameters
    ----------
    n_points
        Number of points, at least 3. Point `i` sits at angle `2 * pi * i / n_points`.
    """
    if n_points < 3:
        raise ValueError(f"a circle needs at least 3 points, got {n_points}")
    theta = 2.0 * np.pi * np.arange(n_points) / n_points
    positions = np.column_stack([np.cos(theta), np.sin(theta)])
    return SurfacePointCloud(positions, positions)


def generate_fibonacci_sphere(n_points: int) -> SurfacePointCloud:
    """
    Quasi-uniform points on the unit sphere from the golden-angle spiral.

    Parameters
    ----------
    n_points
        Number of points, at least 10.
    """
    if n_points < 10:
        raise ValueError(f"a Fibonacci sphere needs at least 10 points, got {n_points}")
    i = np.arange(n_points)
    z = 1.0 - (2.0 * i + 1.0) / n_points
    ring = np.sqrt(1.0 - z * z)
    phi = GOLDEN_ANGLE * i
    positions = _normalize_rows(np.column_stack([ring * np.cos(phi), ring * np.sin(phi), z]))
    return SurfacePointCloud(positions, positions)


def ellipsoid_normals(positions: np.ndarray, axes: Sequence[float]) -> np.ndarray:
    """Outward unit normals of `x^2/a^2 + y^2/b^2 + z^2/c^2 = 1` at `positions`."""
    axes = np.asarray(axes, dtype=float)
    return _normalize_rows(np.asarray(positions, dtype=float) / axes**2)


def generate_ellipsoid(a: float, b: float, c: float, n_points: int) -> SurfacePointCloud:
    """
    Fibonacci-sphere points scaled onto the ellipsoid with semi-axes `a`, `b`, `c`.

    Normals follow from the gradient of the implicit form and point outward.
    """
    if min(a, b, c) <= 0:
        raise ValueError(f"semi-axes must be positive, got {(a, b, c)}")
    sphere = generate_fibonacci_sphere(n_points)
    positions = sphere.positions * np.array([a, b, c])
    return SurfacePointCloud(positions, ellipsoid_normals(positions, (a, b, c)))


def bump_profile(d: np.ndarray) -> np.ndarray:
    """Smooth bump `exp(-1 / (1 - d^2))`, cut to zero from `d = 0.975` on."""
    d = np.asarray(d, dtype=float)
    out = np.zeros_like(d)
    inside = np.abs(d) < BUMP_CUTOFF
    out[inside] = np.exp(-1.0 / (1.0 - d[inside] ** 2))
    return out


def _bump_profile_slope(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    out = np.zeros_like(d)
    inside = np.abs(d) < BUMP_CUTOFF
    di = d[inside]
    out[inside] = np.exp(-1.0 / (1.0 - di**2)) * (-2.0 * di / (1.0 - di**2) ** 2)
    return out


@dataclass(frozen=True)
class BumpSurfaceSpec:
    """
    Graph surface `z = u(x, y)` over a square with one smooth bump.

    `u(x) = bump_height * zeta(|x - bump_center| / bump_radius)`, where `zeta` is `bump_profile`.
    `init_sigma` is the width of the initial concentration used by the diffusion experiment.
    """

    bump_height: float = 0.0
    bump_center: tuple[float, float] = BUMP_CENTER
    bump_radius: float = BUMP_RADIUS
    domain: tuple[float, float] = BUMP_DOMAIN
    init_sigma: float = BUMP_INIT_SIGMA

    def __post_init__(self) -> None:
        if self.bump_height < 0:
            raise ValueError(f"bump_height must be non-negative, got {self.bump_height}")
        if self.bump_radius <= 0:
            raise ValueError(f"bump_radius must be positive, got {self.bump_radius}")
        if self.domain[1] <= self.domain[0]:
            raise ValueError(f"domain must be an increasing interval, got {self.domain}")

    @property
    def support_radius(self) -> float:
        """Radius of the disc outside of which `u` vanishes."""
        return BUMP_CUTOFF * self.bump_radius

    @property
    def box(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """Square around the bump that receives the refined point placement."""
        (cx, cy), r = self.bump_center, self.bump_radius
        return (cx - r, cx + r), (cy - r, cy + r)

    def height(self, xy: np.ndarray) -> np.ndarray:
        """`u` at the planar points `xy` of shape `(N, 2)`."""
        d = np.linalg.norm(np.asarray(xy, dtype=float) - self.bump_center, axis=1)
        return self.bump_height * bump_profile(d / self.bump_radius)

    def gradient(self, xy: np.ndarray) -> np.ndarray:
        """`(du/dx, du/dy)` at the planar points `xy`."""
        rel = np.asarray(xy, dtype=float) - self.bump_center
        dist = np.linalg.norm(rel, axis=1)
        slope = self.bump_height * _bump_profile_slope(dist / self.bump_radius) / self.bump_radius
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(dist[:, None] > 0, rel / dist[:, None], 0.0)
        return slope[:, None] * unit

    def distance_to_boundary(self) -> float:
        """Gap between the bump support and the nearest domain edge."""
        lo, hi = self.domain
        cx, cy = self.bump_center
        return min(cx - lo, hi - cx, cy - lo, hi - cy) - self.support_radius


def _spiral_patch(spec: BumpSurfaceSpec, h: float) -> np.ndarray:
    """Golden-angle spiral over the bump box, spaced for uniform surface-area density."""
    r = spec.bump_radius
    outer = r * np.sqrt(2.0)
    s = np.linspace(0.0, outer, 4001)
    slope = spec.bump_height * _bump_profile_slope(s / r) / r
    area = cumulative_trapezoid(2.0 * np.pi * s * np.sqrt(1.0 + slope**2), s, initial=0.0)

    n_disc = int(round(BUMP_REFINEMENT**2 * area[-1] / h**2))
    i = np.arange(n_disc)
    rho = np.interp((i + 0.5) / n_disc * area[-1], area, s)
    theta = GOLDEN_ANGLE * i
    rel = np.column_stack([rho * np.cos(theta), rho * np.sin(theta)])
    inside = np.all(np.abs(rel) < r, axis=1)
    return rel[inside] + spec.bump_center


def generate_bump_surface(spec: BumpSurfaceSpec, h: float) -> SurfacePointCloud:
    """
    Points on the bump surface: a regular grid in the flat part and a refined patch on the bump.

    Parameters
    ----------
    spec
        Geometry of the surface.
    h
        Grid spacing of the flat part. The box around the bump receives a golden-angle spiral
        whose density matches a grid of spacing `h / 2.05` per unit surface area.

    Returns
    -------
    SurfacePointCloud
        Points lifted to `z = u(x, y)` with upward normals `normalize(-u_x, -u_y, 1)`, all
        labeled interior.
    """
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    lo, hi = spec.domain
    n_side = int(round((hi - lo) / h)) + 1
    ticks = np.linspace(lo, hi, n_side)
    gx, gy = np.meshgrid(ticks, ticks)
    grid = np.column_stack([gx.ravel(), gy.ravel()])

    (x0, x1), (y0, y1) = spec.box
    in_box = (grid[:, 0] >= x0) & (grid[:, 0] <= x1) & (grid[:, 1] >= y0) & (grid[:, 1] <= y1)
    xy = np.vstack([grid[~in_box], _spiral_patch(spec, h)])

    grad = spec.gradient(xy)
    positions = np.column_stack([xy, spec.height(xy)])
    normals = _normalize_rows(np.column_stack([-grad, np.ones(len(xy))]))
    return SurfacePointCloud(positions, normals)

"""
Benchmark experiments: analytic reference fields, error norms, convergence fits and file I/O.

Every `run_*` driver is deterministic given its `ExperimentConfig`; the point generators use no
random numbers.
"""

from __future__ import annotations

import io
import logging
import math
import tarfile
import time
import warnings
from collections.abc import Callable, Iterable, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import httpx
import numpy as np
import polars as pl
import scipy.fft
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree
from scipy.spatial import cKDTree

from sdcpse._constants import (
    BUNNY_ARCHIVE,
    BUNNY_MEMBER,
    BUNNY_POINTS,
    BUNNY_URL,
    BUMP_PROBES,
    CONVERGENCE_SCHEMA,
    CURVATURE_COLUMNS,
    DEFAULT_NORMAL_NEIGHBORS,
    ELLIPSOID_AXES,
    EXPERIMENT_DEFAULTS,
    GHOST_BAND,
    GMRES_MAXITER,
    GMRES_RTOL,
    KERNEL_COLUMNS,
    MIN_NORMAL_NEIGHBORS,
    PROBE_INTERVAL,
    RENORMALIZE_TOL,
    TIME_SERIES_COLUMNS,
    Y40_NORM,
)
from sdcpse._errors import DegenerateDistributionError, MissingNormalsError, PointCloudFormatError
from sdcpse._parsing import (
    COORDINATE_COLUMNS,
    NORMAL_COLUMNS,
    parse_point_cloud_csv,
    parse_ply,
    point_cloud_columns,
    results_dataframe,
    results_schema,
)
from sdcpse.dcpse import DifferentialOperator, KernelCoefficients
from sdcpse.linalg import gmres
from sdcpse.pde import (
    assemble_poisson,
    bump_initial_condition,
    build_ghosts,
    dopri5_integrate,
    sync_ghosts,
)
from sdcpse.pointcloud import (
    BumpSurfaceSpec,
    NeighborList,
    SurfacePointCloud,
    build_neighbor_list,
    bump_profile,
    ellipsoid_normals,
    farthest_point_subsample,
    generate_bump_surface,
    generate_circle,
    generate_ellipsoid,
    generate_fibonacci_sphere,
    nearest_point,
    spacing_field,
)
from sdcpse.surface import (
    SurfaceOperator,
    build_surface_operators,
    curvatures,
    load_surface_operator,
    save_surface_operator,
    shape_tensor,
)

logger = logging.getLogger(__name__)

DN_RULES = ("linear", "cbrt", "sqrt", "fixed", "auto")


# ---------------------------------------------------------------------------
# Configuration and records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Parameters of one benchmark run.

    Use `ExperimentConfig.for_experiment()` to start from the defaults of an experiment.

    Parameters
    ----------
    experiment
        Experiment name, e.g. `"circle-lb"`.
    resolutions
        Point counts to run, ascending.
    order
        Order of accuracy `r` of the operators.
    rc_factor
        Cutoff radius in units of the normal spacing.
    dn_rule, dn_scale
        How the normal spacing follows from the point count; see `normal_spacing()`.
    n_layers
        Extension layers per side of the surface (`N_n`).
    eps_factor
        Multiplier on the average spacing giving the kernel width.
    dn
        Fixed normal spacing overriding `dn_rule`.
    spacing, dt, t_final, alpha
        Flat grid spacing, time step, final time and bump height of the diffusion experiment.
    axes
        Ellipsoid semi-axes of the curvature experiment.
    input_path, output_path
        Point-cloud input (bunny curvature) and result CSV.
    cache_dir
        Directory for saved surface operators; reused when the parameters match.
    n_jobs
        Worker threads for operator construction.
    estimate_normals, normal_neighbors
        Estimate missing normals on load, from this many nearest neighbors.
    gmres_rtol, gmres_maxiter
        Implicit solve tolerance and iteration budget.
    """

    experiment: str
    resolutions: tuple[int, ...] = ()
    order: int = 2
    rc_factor: float = 2.9
    dn_rule: str = "auto"
    dn_scale: float = 1.0
    n_layers: int = 2
    eps_factor: float = 1.0
    dn: float | None = None
    spacing: float | None = None
    dt: float | None = None
    t_final: float | None = None
    alpha: float = 0.0
    axes: tuple[float, float, float] = ELLIPSOID_AXES
    input_path: Path | None = None
    output_path: Path | None = None
    cache_dir: Path | None = None
    n_jobs: int = 1
    estimate_normals: bool = False
    normal_neighbors: int = DEFAULT_NORMAL_NEIGHBORS
    gmres_rtol: float = GMRES_RTOL
    gmres_maxiter: int = GMRES_MAXITER

    def __post_init__(self) -> None:
        object.__setattr__(self, "resolutions", tuple(int(n) for n in self.resolutions))
        for name in ("input_path", "output_path", "cache_dir"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, Path(value))

        if any(n <= 0 for n in self.resolutions):
            raise ValueError(f"resolutions must be positive, got {self.resolutions}")
        if list(self.resolutions) != sorted(self.resolutions):
            raise ValueError(f"resolutions must be ascending, got {self.resolutions}")
        if self.order < 1:
            raise ValueError(f"order must be at least 1, got {self.order}")
        if not self.rc_factor > 0:
            raise ValueError(f"rc_factor must be positive, got {self.rc_factor}")
        if self.dn_rule not in DN_RULES:
            raise ValueError(f"dn_rule must be one of {DN_RULES}, got {self.dn_rule!r}")
        if self.dn is not None and not self.dn > 0:
            raise ValueError(f"dn must be positive, got {self.dn}")
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be at least 1, got {self.n_layers}")
        if not self.eps_factor > 0:
            raise ValueError(f"eps_factor must be positive, got {self.eps_factor}")
        if self.n_jobs < 1:
            raise ValueError(f"n_jobs must be at least 1, got {self.n_jobs}")
        if self.normal_neighbors < MIN_NORMAL_NEIGHBORS:
            raise ValueError(
                f"normal_neighbors must be at least {MIN_NORMAL_NEIGHBORS}, "
                f"got {self.normal_neighbors}"
            )
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")

    @classmethod
    def for_experiment(cls, name: str, **overrides) -> ExperimentConfig:
        """
        Defaults of experiment `name`, updated with `overrides`.

        Overrides that are `None` are ignored, so unset command-line options can be passed on
        directly.
        """
        if name not in EXPERIMENT_DEFAULTS:
            raise ValueError(
                f"unknown experiment {name!r}; available: {', '.join(EXPERIMENT_DEFAULTS)}"
            )
        params = dict(EXPERIMENT_DEFAULTS[name])
        params.update({k: v for k, v in overrides.items() if v is not None})
        return cls(experiment=name, **params)

    def normal_spacing(self, n_points: int) -> float | None:
        """
        Normal spacing for a cloud of `n_points` points.

        `"linear"`, `"cbrt"` and `"sqrt"` give `dn_scale / (m - 1)` with `m` the point count, its
        cube root or its square root; `"fixed"` gives `dn_scale * spacing`; `"auto"` gives `None`
        (per-point average spacing). An explicit `dn` takes precedence.
        """
        if self.dn is not None:
            return self.dn
        if self.dn_rule == "auto":
            return None
        if self.dn_rule == "fixed":
            if self.spacing is None:
                raise ValueError("dn_rule 'fixed' needs a spacing")
            return self.dn_scale * self.spacing
        root = {"linear": 1.0, "cbrt": 1.0 / 3.0, "sqrt": 0.5}[self.dn_rule]
        m = n_points**root
        if m <= 1:
            raise ValueError(f"too few points ({n_points}) for dn_rule {self.dn_rule!r}")
        return self.dn_scale / (m - 1.0)

    def cutoff(self, n_points: int, base: float | None = None) -> float:
        """`rc_factor` times the normal spacing, or times `base` under the `"auto"` rule."""
        dn = self.normal_spacing(n_points)
        if dn is None:
            if base is None:
                raise ValueError("dn_rule 'auto' needs a base spacing for the cutoff")
            dn = base
        return self.rc_factor * dn


@dataclass(frozen=True)
class ConvergenceRecord:
    """Errors at one resolution, with every parameter needed to reproduce them."""

    experiment: str
    n_points: int
    h: float
    l2: float
    linf: float
    wall_time: float
    order: int
    rc_factor: float
    dn: float
    n_layers: int
    eps_factor: float

    def __post_init__(self) -> None:
        if self.l2 > self.linf * (1.0 + 1e-12):
            raise ValueError(f"L2 error {self.l2} exceeds Linf error {self.linf}")

    def as_row(self) -> dict:
        """The record under the output CSV column names."""
        row = {
            "experiment": self.experiment,
            "N_p": self.n_points,
            "h": self.h,
            "order_r": self.order,
            "rc_factor": self.rc_factor,
            "dn": self.dn,
            "N_n": self.n_layers,
            "eps_factor": self.eps_factor,
            "L2": self.l2,
            "Linf": self.linf,
            "wall_time_s": self.wall_time,
        }
        return {name: row[name] for name in CONVERGENCE_SCHEMA}


def _record(
    cfg: ExperimentConfig,
    n_points: int,
    h: float,
    dn: float | None,
    errors: tuple[float, float],
    started: float,
    *,
    experiment: str | None = None,
) -> ConvergenceRecord:
    record = ConvergenceRecord(
        experiment=experiment or cfg.experiment,
        n_points=n_points,
        h=h,
        l2=errors[0],
        linf=errors[1],
        wall_time=time.perf_counter() - started,
        order=cfg.order,
        rc_factor=cfg.rc_factor,
        dn=math.nan if dn is None else dn,
        n_layers=cfg.n_layers,
        eps_factor=cfg.eps_factor,
    )
    logger.info(
        "%s N_p=%d h=%.4g: L2=%.3e Linf=%.3e (%.1f s)",
        record.experiment,
        n_points,
        h,
        record.l2,
        record.linf,
        record.wall_time,
    )
    return record


# ---------------------------------------------------------------------------
# Reference fields
# ---------------------------------------------------------------------------


def y40(positions: np.ndarray) -> np.ndarray:
    """Real spherical harmonic `Y_40` of the polar angle of each position."""
    positions = np.asarray(positions, dtype=float)
    cos_theta = positions[:, 2] / np.linalg.norm(positions, axis=1)
    c2 = cos_theta**2
    return Y40_NORM * (35.0 * c2**2 - 30.0 * c2 + 3.0)


def ellipsoid_curvatures(
    positions: np.ndarray,
    axes: Sequence[float] = ELLIPSOID_AXES,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Analytic mean and Gauss curvature of an ellipsoid at points on its surface.

    The ellipsoid is parametrized as `(a cos u sin v, b sin u sin v, c cos v)`; `H` is positive
    for outward normals.
    """
    a, b, c = (float(s) for s in axes)
    positions = np.asarray(positions, dtype=float)
    u = np.arctan2(positions[:, 1] / b, positions[:, 0] / a)
    v = np.arccos(np.clip(positions[:, 2] / c, -1.0, 1.0))
    cos_u2, sin_u2 = np.cos(u) ** 2, np.sin(u) ** 2
    cos_v2, sin_v2 = np.cos(v) ** 2, np.sin(v) ** 2

    common = a**2 * b**2 * cos_v2 + c**2 * (b**2 * cos_u2 + a**2 * sin_u2) * sin_v2
    numerator = (
        3.0 * (a**2 + b**2)
        + 2.0 * c**2
        + (a**2 + b**2 - 2.0 * c**2) * np.cos(2.0 * v)
        - 2.0 * (a**2 - b**2) * np.cos(2.0 * u) * sin_v2
    )
    mean = a * b * c * numerator / (8.0 * common**1.5)
    gauss = a**2 * b**2 * c**2 / common**2
    return mean, gauss


class ReferenceField(NamedTuple):
    """
    Analytic input field and analytic result of a benchmark.

    For the Poisson problems `field` is the exact solution and `result` the right-hand side. For
    `ellipsoid_curvature` the field is the normal and the result has columns `H` and `K`.
    `result` is `None` when no closed form exists.
    """

    field: Callable[[np.ndarray], np.ndarray]
    result: Callable[[np.ndarray], np.ndarray] | None


REFERENCE_NAMES = (
    "circle_trig",
    "sphere_Y40",
    "circle_poisson",
    "sphere_poisson",
    "ellipsoid_curvature",
    "bump_init",
)


def _polar(positions: np.ndarray) -> np.ndarray:
    positions = np.asarray(positions, dtype=float)
    return np.arctan2(positions[:, 1], positions[:, 0])


def reference_fields(
    name: str,
    *,
    axes: Sequence[float] = ELLIPSOID_AXES,
    spec: BumpSurfaceSpec | None = None,
) -> ReferenceField:
    """
    Analytic field and operator result of a benchmark.

    Parameters
    ----------
    name
        One of `REFERENCE_NAMES`.
    axes
        Semi-axes for `"ellipsoid_curvature"`.
    spec
        Surface for `"bump_init"`; the default bump surface if `None`.

    Returns
    -------
    ReferenceField
        Evaluators taking positions of shape `(N, dim)`.
    """
    if name == "circle_trig":
        return ReferenceField(
            field=lambda x: np.sin(_polar(x)) + np.cos(_polar(x)),
            result=lambda x: -(np.sin(_polar(x)) + np.cos(_polar(x))),
        )
    if name in ("sphere_Y40", "sphere_poisson"):
        return ReferenceField(field=y40, result=lambda x: -20.0 * y40(x))
    if name == "circle_poisson":
        # Laplace-Beltrami of sin(2 theta) on the unit circle is -4 sin(2 theta)
        return ReferenceField(
            field=lambda x: np.sin(2.0 * _polar(x)),
            result=lambda x: -4.0 * np.sin(2.0 * _polar(x)),
        )
    if name == "ellipsoid_curvature":
        axes = tuple(float(s) for s in axes)
        return ReferenceField(
            field=lambda x: ellipsoid_normals(x, axes),
            result=lambda x: np.column_stack(ellipsoid_curvatures(x, axes)),
        )
    if name == "bump_init":
        sigma = (spec or BumpSurfaceSpec()).init_sigma
        return ReferenceField(
            field=lambda x: bump_profile(np.linalg.norm(x, axis=1) / sigma) / sigma**2,
            result=None,
        )
    raise ValueError(f"unknown reference field {name!r}; available: {', '.join(REFERENCE_NAMES)}")


# ---------------------------------------------------------------------------
# Error analysis
# ---------------------------------------------------------------------------


def error_norms(numeric: np.ndarray, analytic: np.ndarray) -> tuple[float, float]:
    """
    Root-mean-square and maximum absolute error.

    Returns
    -------
    tuple[float, float]
        `(sqrt(mean(e^2)), max|e|)` with `e = numeric - analytic`.
    """
    numeric = np.asarray(numeric, dtype=float).ravel()
    analytic = np.asarray(analytic, dtype=float).ravel()
    if numeric.shape != analytic.shape:
        raise ValueError(
            f"numeric and analytic differ in length: {numeric.size} != {analytic.size}"
        )
    if numeric.size == 0:
        raise ValueError("cannot take error norms of empty input")
    e = np.abs(numeric - analytic)
    linf = float(e.max())
    if linf == 0.0:
        return 0.0, 0.0
    # Scaled by the maximum so that squaring cannot overflow
    l2 = linf * float(np.sqrt(np.mean((e / linf) ** 2)))
    return min(l2, linf), linf


def _log_slope(h: np.ndarray, errors: np.ndarray) -> float:
    return float(np.polyfit(np.log10(h), np.log10(errors), 1)[0])


def fit_convergence_order(records: Sequence[ConvergenceRecord]) -> dict[str, float]:
    """
    Least-squares slope of `log10(error)` against `log10(h)` for each norm.

    Raises
    ------
    ValueError
        With fewer than three records, repeated spacings, or errors or spacings that are not
        positive.
    """
    if len(records) < 3:
        raise ValueError(f"need at least 3 records to fit an order, got {len(records)}")
    h = np.array([rec.h for rec in records], dtype=float)
    if np.unique(h).size != h.size:
        raise ValueError("records must have distinct spacings h")
    if np.any(h <= 0):
        raise ValueError("spacings h must be positive")
    orders = {}
    for norm, values in (
        ("L2", [rec.l2 for rec in records]),
        ("Linf", [rec.linf for rec in records]),
    ):
        errors = np.asarray(values, dtype=float)
        if np.any(errors <= 0):
            raise ValueError(f"{norm} errors must be positive to fit an order")
        orders[norm] = _log_slope(h, errors)
    return orders


# ---------------------------------------------------------------------------
# Operator construction with an optional on-disk cache
# ---------------------------------------------------------------------------


def _cache_stem(cfg: ExperimentConfig, n_points: int, r_c: float, dn: float | None) -> str:
    dn_part = "auto" if dn is None else f"{dn:.9e}"
    return (
        f"{cfg.experiment}-N{n_points}-r{cfg.order}-rc{r_c:.9e}-dn{dn_part}"
        f"-nn{cfg.n_layers}-eps{cfg.eps_factor:g}"
    )


def _surface_operators(
    cfg: ExperimentConfig,
    cloud: SurfacePointCloud,
    ops: Sequence[DifferentialOperator],
    r_c: float,
    dn: float | None,
    *,
    nbrs: NeighborList,
    tag: str,
    centers: np.ndarray | None = None,
) -> list[SurfaceOperator]:
    """Build surface operators, or load them from `cfg.cache_dir` if saved with equal parameters."""
    paths = None
    if cfg.cache_dir is not None:
        stem = _cache_stem(cfg, len(cloud), r_c, dn)
        paths = [cfg.cache_dir / f"{stem}-{tag}{j}.npz" for j in range(len(ops))]
        if all(path.exists() for path in paths):
            loaded = [load_surface_operator(path) for path in paths]
            if all(len(sop) == len(cloud) and sop.op == op for sop, op in zip(loaded, ops)):
                logger.info("loaded %d surface operator(s) from %s", len(loaded), cfg.cache_dir)
                return loaded
            logger.warning("ignoring mismatched cached operators %s", stem)

    sops = build_surface_operators(
        cloud,
        ops,
        cfg.order,
        r_c,
        dn,
        cfg.n_layers,
        cfg.eps_factor,
        nbrs=nbrs,
        centers=centers,
        n_jobs=cfg.n_jobs,
    )
    if paths is not None:
        cfg.cache_dir.mkdir(parents=True, exist_ok=True)
        for sop, path in zip(sops, paths):
            save_surface_operator(sop, path)
    return sops


def _laplacian_setup(
    cfg: ExperimentConfig, cloud: SurfacePointCloud
) -> tuple[SurfaceOperator, float, float | None]:
    """Surface Laplace-Beltrami operator of `cloud` with the mean spacing and normal spacing."""
    dn = cfg.normal_spacing(len(cloud))
    r_c = cfg.cutoff(len(cloud))
    nbrs = build_neighbor_list(cloud, r_c)
    h = float(spacing_field(cloud, nbrs).mean())
    (sop,) = _surface_operators(
        cfg, cloud, [DifferentialOperator.laplacian(cloud.dim)], r_c, dn, nbrs=nbrs, tag="lb"
    )
    return sop, h, dn


def _check_resolutions(cfg: ExperimentConfig) -> None:
    if not cfg.resolutions:
        raise ValueError(f"{cfg.experiment} needs at least one resolution")


# ---------------------------------------------------------------------------
# Laplace-Beltrami and Poisson
# ---------------------------------------------------------------------------


def _run_laplace_beltrami(
    cfg: ExperimentConfig,
    generate: Callable[[int], SurfacePointCloud],
    reference: str,
) -> list[ConvergenceRecord]:
    _check_resolutions(cfg)
    ref = reference_fields(reference)
    records = []
    for n in cfg.resolutions:
        started = time.perf_counter()
        cloud = generate(n)
        sop, h, dn = _laplacian_setup(cfg, cloud)
        numeric = sop.evaluate(ref.field(cloud.positions))
        errors = error_norms(numeric, ref.result(cloud.positions))
        records.append(_record(cfg, n, h, dn, errors, started))
    return records


def run_circle_lb(cfg: ExperimentConfig) -> list[ConvergenceRecord]:
    """Laplace-Beltrami of `sin + cos` of the angle on the unit circle, per resolution."""
    return _run_laplace_beltrami(cfg, generate_circle, "circle_trig")


def run_sphere_lb(cfg: ExperimentConfig) -> list[ConvergenceRecord]:
    """Laplace-Beltrami of `Y_40` on Fibonacci spheres, one record per resolution."""
    return _run_laplace_beltrami(cfg, generate_fibonacci_sphere, "sphere_Y40")


def _run_poisson(
    cfg: ExperimentConfig,
    generate: Callable[[int], SurfacePointCloud],
    reference: str,
    pinned: Callable[[SurfacePointCloud, float], np.ndarray],
) -> list[ConvergenceRecord]:
    _check_resolutions(cfg)
    ref = reference_fields(reference)
    records = []
    for n in cfg.resolutions:
        started = time.perf_counter()
        cloud = generate(n)
        sop, h, dn = _laplacian_setup(cfg, cloud)
        exact = ref.field(cloud.positions)

        fixed = pinned(cloud, h)
        system = assemble_poisson(
            sop, ref.result(cloud.positions), {int(p): exact[p] for p in fixed}
        )
        solution = gmres(
            system.matrix, system.rhs, rtol=cfg.gmres_rtol, maxiter=cfg.gmres_maxiter
        )
        free = np.ones(n, dtype=bool)
        free[fixed] = False
        errors = error_norms(solution.x[free], exact[free])
        records.append(_record(cfg, n, h, dn, errors, started))
    return records


def run_circle_poisson(cfg: ExperimentConfig) -> list[ConvergenceRecord]:
    """
    Solve `Laplace-Beltrami f = -4 sin(2 theta)` on the unit circle.

    The solution is pinned to the exact `sin(2 theta) = 0` at the point `(1, 0)`; errors exclude it.
    """

    def pinned(cloud: SurfacePointCloud, h: float) -> np.ndarray:
        index, _ = nearest_point(cloud, (1.0, 0.0), label=None)
        return np.array([index])

    return _run_poisson(cfg, generate_circle, "circle_poisson", pinned)


def run_sphere_poisson(cfg: ExperimentConfig) -> list[ConvergenceRecord]:
    """
    Solve `Laplace-Beltrami f = -20 Y_40` on Fibonacci spheres.

    Points within `h / 2` of the great circle in the `y-z` plane are pinned to `Y_40`; errors
    exclude them.
    """

    def pinned(cloud: SurfacePointCloud, h: float) -> np.ndarray:
        band = np.flatnonzero(np.abs(cloud.positions[:, 0]) < 0.5 * h)
        if band.size == 0:
            raise ValueError(f"no points within {0.5 * h:.3g} of the x = 0 great circle")
        return band

    return _run_poisson(cfg, generate_fibonacci_sphere, "sphere_poisson", pinned)


# ---------------------------------------------------------------------------
# Curvature
# ---------------------------------------------------------------------------


def _gradient_operators(
    cfg: ExperimentConfig,
    cloud: SurfacePointCloud,
    r_c: float,
    dn: float | None,
    nbrs: NeighborList,
) -> list[SurfaceOperator]:
    return _surface_operators(
        cfg, cloud, DifferentialOperator.gradient(3), r_c, dn, nbrs=nbrs, tag="grad"
    )


def run_ellipsoid_curvature(cfg: ExperimentConfig) -> dict[str, list[ConvergenceRecord]]:
    """
    Mean and Gauss curvature of an ellipsoid from the shape tensor.

    Returns
    -------
    dict[str, list[ConvergenceRecord]]
        Records for `"H"` and `"K"`, with experiment names suffixed `-H` and `-K`.
    """
    _check_resolutions(cfg)
    records: dict[str, list[ConvergenceRecord]] = {"H": [], "K": []}
    for n in cfg.resolutions:
        started = time.perf_counter()
        cloud = generate_ellipsoid(*cfg.axes, n)
        dn = cfg.normal_spacing(n)
        r_c = cfg.cutoff(n)
        nbrs = build_neighbor_list(cloud, r_c)
        h = float(spacing_field(cloud, nbrs).mean())

        shape = shape_tensor(
            cloud,
            cfg.order,
            r_c,
            dn,
            cfg.n_layers,
            cfg.eps_factor,
            operators=_gradient_operators(cfg, cloud, r_c, dn, nbrs),
        )
        curv = curvatures(shape)
        exact_h, exact_k = ellipsoid_curvatures(cloud.positions, cfg.axes)
        for key, numeric, exact in (("H", curv.mean, exact_h), ("K", curv.gauss, exact_k)):
            relative = np.abs(numeric - exact) / np.abs(exact)
            logger.info(
                "%s N_p=%d: relative error of %s in [%.2e, %.2e]",
                cfg.experiment,
                n,
                key,
                relative.min(),
                relative.max(),
            )
            records[key].append(
                _record(
                    cfg,
                    n,
                    h,
                    dn,
                    error_norms(numeric, exact),
                    started,
                    experiment=f"{cfg.experiment}-{key}",
                )
            )
    return records


def mean_neighbor_distance(positions: np.ndarray) -> float:
    """Mean distance from each point to its nearest other point."""
    positions = np.asarray(positions, dtype=float)
    if len(positions) < 2:
        raise ValueError("need at least two points")
    distance, _ = cKDTree(positions).query(positions, k=2)
    return float(distance[:, 1].mean())


def run_bunny_curvature(cfg: ExperimentConfig) -> pl.DataFrame:
    """
    Curvature at every point of a cloud read from `cfg.input_path`.

    Under the `"auto"` rule the cutoff is `rc_factor` times the mean nearest-neighbor distance
    and the normal spacing is the per-point average spacing.

    Returns
    -------
    pl.DataFrame
        Columns `x,y,z,nx,ny,nz,H,K,kappa1,kappa2`; also written to `cfg.output_path` if set.
    """
    if cfg.input_path is None:
        raise ValueError(f"{cfg.experiment} needs an input point-cloud file")
    started = time.perf_counter()
    cloud = load_point_cloud(
        cfg.input_path, estimate=cfg.estimate_normals, k=cfg.normal_neighbors
    )
    if cloud.dim != 3:
        raise ValueError(f"curvature needs a surface in 3D, got dim={cloud.dim}")

    dn = cfg.normal_spacing(len(cloud))
    r_c = cfg.cutoff(len(cloud), base=mean_neighbor_distance(cloud.positions))
    nbrs = build_neighbor_list(cloud, r_c)
    shape = shape_tensor(
        cloud,
        cfg.order,
        r_c,
        dn,
        cfg.n_layers,
        cfg.eps_factor,
        operators=_gradient_operators(cfg, cloud, r_c, dn, nbrs),
    )
    curv = curvatures(shape)

    df = pl.DataFrame(
        np.column_stack(
            [cloud.positions, cloud.normals, curv.mean, curv.gauss, curv.principal]
        ),
        schema=CURVATURE_COLUMNS,
        orient="row",
    )
    logger.info(
        "%s: %d points, H in [%.3g, %.3g] (%.1f s)",
        cfg.experiment,
        len(cloud),
        curv.mean.min(),
        curv.mean.max(),
        time.perf_counter() - started,
    )
    if cfg.output_path is not None:
        df.write_csv(cfg.output_path)
    return df


# ---------------------------------------------------------------------------
# Bump diffusion
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BumpSeries:
    """
    Values of the diffusing field at the two probes, sampled over time.

    `probe_indices` and `probe_distances` give the surface points standing in for the probes
    (`None` and zero for grid references). `mass` is the quadrature of the field over the
    surface at each sample time, when available. `n_ghosts` counts the mirrored edge points.
    """

    times: np.ndarray
    f_x0: np.ndarray
    f_x1: np.ndarray
    alpha: float
    probe_indices: tuple[int, int] | None = None
    probe_distances: tuple[float, float] = (0.0, 0.0)
    n_points: int = 0
    spacing: float = math.nan
    mass: np.ndarray | None = None
    n_ghosts: int = 0

    @property
    def peak_value(self) -> float:
        """Largest value at `x0`."""
        return float(np.max(self.f_x0))

    @property
    def peak_time(self) -> float:
        return float(self.times[int(np.argmax(self.f_x0))])

    def peak_error(self, reference: BumpSeries) -> float:
        """`|max f - max f_ref|` at `x0`."""
        return abs(self.peak_value - reference.peak_value)

    def to_frame(self) -> pl.DataFrame:
        return pl.DataFrame(
            {
                "t": self.times,
                "f_at_x0": self.f_x0,
                "f_at_x1": self.f_x1,
                "alpha": np.full(len(self.times), float(self.alpha)),
            },
            schema={name: pl.Float64 for name in TIME_SERIES_COLUMNS},
        )


def bump_quadrature_weights(
    cloud: SurfacePointCloud,
    spec: BumpSurfaceSpec,
    h: float,
) -> np.ndarray:
    """
    Surface-area weights of the points of `generate_bump_surface(spec, h)`.

    Grid points get trapezoidal weights. The area the grid leaves out around the bump, scaled by
    the surface-to-planar area ratio over the box, is shared evenly by the patch points.
    Ghost points get zero weight.
    """
    lo, hi = spec.domain
    (x0, x1), (y0, y1) = spec.box
    xy = cloud.positions[:, :2]
    weights = np.zeros(len(cloud))
    real = ~cloud.mask("ghost")

    in_box = real & (xy[:, 0] > x0) & (xy[:, 0] < x1) & (xy[:, 1] > y0) & (xy[:, 1] < y1)
    grid = real & ~in_box
    tol = 1e-9 * (hi - lo)
    edge_x = (np.abs(xy[:, 0] - lo) < tol) | (np.abs(xy[:, 0] - hi) < tol)
    edge_y = (np.abs(xy[:, 1] - lo) < tol) | (np.abs(xy[:, 1] - hi) < tol)
    weights[grid] = h * h * np.where(edge_x, 0.5, 1.0)[grid] * np.where(edge_y, 0.5, 1.0)[grid]

    ticks = np.linspace(lo, hi, int(round((hi - lo) / h)) + 1)
    removed = np.count_nonzero((ticks >= x0 - tol) & (ticks <= x1 + tol)) * np.count_nonzero(
        (ticks >= y0 - tol) & (ticks <= y1 + tol)
    )
    s = np.linspace(0.0, 1.0, 401)
    mid = 0.5 * (s[1:] + s[:-1])
    gx, gy = np.meshgrid(x0 + (x1 - x0) * mid, y0 + (y1 - y0) * mid)
    grad = spec.gradient(np.column_stack([gx.ravel(), gy.ravel()]))
    stretch = float(np.mean(np.sqrt(1.0 + np.sum(grad**2, axis=1))))

    n_box = np.count_nonzero(in_box)
    if n_box:
        weights[in_box] = removed * h * h * stretch / n_box
    return weights


def _probe_points(cloud: SurfacePointCloud, h: float, *, quiet: bool = False):
    indices, distances = [], []
    for name in ("x0", "x1"):
        index, distance = nearest_point(cloud, BUMP_PROBES[name])
        if distance > h and not quiet:
            warnings.warn(
                f"probe {name} is {distance:.3g} from the nearest surface point (spacing {h:.3g})",
                UserWarning,
                stacklevel=3,
            )
        indices.append(index)
        distances.append(distance)
    return tuple(indices), tuple(distances)


def run_bump_diffusion(cfg: ExperimentConfig, *, quiet: bool = False) -> BumpSeries:
    """
    Diffusion on the bump surface with zero-flux edges, sampled at the two probes.

    The initial field `sigma^-2 zeta(|x| / sigma)` is integrated with fixed Dormand-Prince steps
    of size `cfg.dt` up to `cfg.t_final`. Ghost values are refreshed at every stage.
    """
    if cfg.spacing is None or cfg.dt is None or cfg.t_final is None:
        raise ValueError(f"{cfg.experiment} needs spacing, dt and t_final")
    started = time.perf_counter()
    h = cfg.spacing
    spec = BumpSurfaceSpec(bump_height=cfg.alpha)
    surface = generate_bump_surface(spec, h)
    dn = cfg.normal_spacing(len(surface))
    r_c = cfg.cutoff(len(surface), base=h)

    cloud, gmap = build_ghosts(surface, spec, r_c, width=GHOST_BAND * r_c)
    interior = np.flatnonzero(~cloud.mask("ghost"))
    nbrs = build_neighbor_list(cloud, r_c)
    (sop,) = _surface_operators(
        cfg,
        cloud,
        [DifferentialOperator.laplacian(3)],
        r_c,
        dn,
        nbrs=nbrs,
        tag="lb",
        centers=interior,
    )
    matrix = sop.to_sparse()
    weights = bump_quadrature_weights(cloud, spec, h)
    probes, distances = _probe_points(cloud, h, quiet=quiet)
    logger.info(
        "%s alpha=%g: %d surface points, %d ghosts, operator ready in %.1f s",
        cfg.experiment,
        cfg.alpha,
        len(surface),
        len(gmap),
        time.perf_counter() - started,
    )

    every = max(1, int(round(PROBE_INTERVAL / cfg.dt)))
    samples: list[tuple[float, float, float, float]] = []

    def observe(step: int, t: float, y: np.ndarray) -> None:
        if step % every == 0:
            samples.append((t, y[probes[0]], y[probes[1]], float(weights @ y)))

    dopri5_integrate(
        bump_initial_condition(cloud, spec),
        lambda t, y: matrix @ y,
        cfg.dt,
        cfg.t_final,
        sync=lambda y: sync_ghosts(y, gmap),
        observer=observe,
    )
    times, f0, f1, mass = (np.array(column) for column in zip(*samples))
    logger.info(
        "%s alpha=%g: peak %.5g at t=%.3g (%.1f s)",
        cfg.experiment,
        cfg.alpha,
        f0.max(),
        times[np.argmax(f0)],
        time.perf_counter() - started,
    )
    return BumpSeries(
        times=times,
        f_x0=f0,
        f_x1=f1,
        alpha=cfg.alpha,
        probe_indices=probes,
        probe_distances=distances,
        n_points=len(surface),
        spacing=h,
        mass=mass,
        n_ghosts=len(gmap),
    )


def _dct1_weights(j: float, n: int) -> np.ndarray:
    """Row vector evaluating the inverse DCT-I at (possibly fractional) index `j`."""
    k = np.arange(n)
    w = np.cos(np.pi * j * k / (n - 1))
    w[1:-1] *= 2.0
    return w / (2.0 * (n - 1))


def flat_reference_series(
    spec: BumpSurfaceSpec | None = None,
    *,
    n_grid: int = 1601,
    t_final: float = 1.0,
    interval: float = PROBE_INTERVAL,
) -> BumpSeries:
    """
    Five-point finite-difference diffusion on the flat square with zero-flux edges.

    The semi-discrete system is diagonalized by the DCT-I and advanced exactly in time, so there
    is no time-step error. Probe values off the grid use the trigonometric interpolant of the
    same expansion.

    Parameters
    ----------
    spec
        Supplies the domain and initial width; its bump height is ignored (flat surface).
    n_grid
        Grid points per side.
    t_final, interval
        Sampling times `0, interval, 2 * interval, ..., t_final`.
    """
    spec = spec or BumpSurfaceSpec()
    if n_grid < 3:
        raise ValueError(f"n_grid must be at least 3, got {n_grid}")
    lo, hi = spec.domain
    ticks = np.linspace(lo, hi, n_grid)
    dx = ticks[1] - ticks[0]
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    sigma = spec.init_sigma
    initial = bump_profile(np.hypot(gx, gy) / sigma) / sigma**2

    coeffs = scipy.fft.dctn(initial, type=1)
    lam = -(4.0 / dx**2) * np.sin(np.pi * np.arange(n_grid) / (2.0 * (n_grid - 1))) ** 2
    rates = lam[:, None] + lam[None, :]

    probe_weights = []
    for name in ("x0", "x1"):
        px, py = BUMP_PROBES[name]
        probe_weights.append(
            (_dct1_weights((px - lo) / dx, n_grid), _dct1_weights((py - lo) / dx, n_grid))
        )

    n_samples = int(round(t_final / interval)) + 1
    times = np.linspace(0.0, t_final, n_samples)
    values = np.empty((2, n_samples))
    for i, t in enumerate(times):
        state = coeffs * np.exp(rates * t)
        for p, (wx, wy) in enumerate(probe_weights):
            values[p, i] = wx @ state @ wy
    return BumpSeries(
        times=times, f_x0=values[0], f_x1=values[1], alpha=0.0, n_points=n_grid**2, spacing=dx
    )


# ---------------------------------------------------------------------------
# Normal estimation
# ---------------------------------------------------------------------------


def _orient_normals(positions: np.ndarray, normals: np.ndarray, neighbors: np.ndarray) -> None:
    """Make normals consistent along a minimum spanning tree of the neighbor graph, in place."""
    n = len(positions)
    rows = np.repeat(np.arange(n), neighbors.shape[1] - 1)
    cols = neighbors[:, 1:].ravel()
    alignment = np.abs(np.einsum("ij,ij->i", normals[rows], normals[cols]))
    graph = csr_matrix((1.0 - alignment + 1e-9, (rows, cols)), shape=(n, n))
    graph = graph.maximum(graph.T)
    tree = minimum_spanning_tree(graph)

    n_components, component = connected_components(tree, directed=False)
    for c in range(n_components):
        root = int(np.flatnonzero(component == c)[0])
        order, parent = breadth_first_order(tree, root, directed=False, return_predecessors=True)
        for node in order[1:]:
            if normals[node] @ normals[parent[node]] < 0:
                normals[node] = -normals[node]


def estimate_normals(
    positions: np.ndarray,
    k: int = DEFAULT_NORMAL_NEIGHBORS,
    *,
    quiet: bool = False,
) -> np.ndarray:
    """
    Unit normals from the principal axes of the `k` nearest neighbors of each point.

    Each normal is the direction of least variance of its neighborhood. Orientations are made
    consistent along a minimum spanning tree of the neighbor graph, then all normals are flipped
    if most of them point toward the centroid.

    Parameters
    ----------
    positions
        Points of shape `(N, dim)`, `dim` 2 or 3.
    k
        Neighborhood size including the point itself, at least 5.
    quiet
        Suppress the warning issued when the orientation is flipped globally.

    Raises
    ------
    DegenerateDistributionError
        If a neighborhood is collinear (in 3D) or a single point repeated.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[1] not in (2, 3):
        raise ValueError(f"positions must have shape (N, 2) or (N, 3), got {positions.shape}")
    if k < MIN_NORMAL_NEIGHBORS:
        raise ValueError(f"k must be at least {MIN_NORMAL_NEIGHBORS}, got {k}")
    n, dim = positions.shape
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")

    _, neighbors = cKDTree(positions).query(positions, k=k)
    local = positions[neighbors]
    local = local - local.mean(axis=1, keepdims=True)
    covariance = np.einsum("nki,nkj->nij", local, local) / k
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)

    # In 3D the two tangent directions must both carry variance
    spread = eigenvalues[:, -1]
    tangent = eigenvalues[:, 1] if dim == 3 else spread
    degenerate = np.flatnonzero(tangent <= 1e-12 * np.maximum(spread, np.finfo(float).tiny))
    if degenerate.size:
        p = int(degenerate[0])
        raise DegenerateDistributionError(
            f"neighbors of point {p} are collinear; cannot estimate a normal", index=p
        )

    normals = eigenvectors[:, :, 0].copy()
    _orient_normals(positions, normals, neighbors)

    outward = np.einsum("ij,ij->i", positions - positions.mean(axis=0), normals)
    if np.count_nonzero(outward < 0) > np.count_nonzero(outward > 0):
        normals = -normals
        if not quiet:
            warnings.warn(
                "estimated normals were flipped to point away from the centroid",
                UserWarning,
                stacklevel=2,
            )
    return normals


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def _checked_normals(normals: np.ndarray, *, quiet: bool) -> np.ndarray:
    lengths = np.linalg.norm(normals, axis=1)
    deviation = np.abs(lengths - 1.0)
    worst = int(np.argmax(deviation)) if deviation.size else 0
    if deviation.size and deviation[worst] > RENORMALIZE_TOL:
        raise PointCloudFormatError(
            f"normal of point {worst} has length {lengths[worst]:.6g}; "
            f"normals must be unit length within {RENORMALIZE_TOL}"
        )
    if deviation.size and deviation[worst] > 1e-12:
        if not quiet:
            warnings.warn(
                f"{np.count_nonzero(deviation > 1e-12)} normal(s) were renormalized to unit length",
                UserWarning,
                stacklevel=3,
            )
        normals = normals / lengths[:, None]
    return normals


def load_point_cloud(
    path: str | Path,
    fmt: str | None = None,
    *,
    estimate: bool = False,
    k: int = DEFAULT_NORMAL_NEIGHBORS,
    quiet: bool = False,
) -> SurfacePointCloud:
    """
    Read a point cloud from CSV or ASCII PLY.

    Parameters
    ----------
    path
        File to read.
    fmt
        `"csv"` or `"ply"`; inferred from the suffix when `None`.
    estimate
        Estimate normals with `estimate_normals(k=k)` when the file has none.
    k
        Neighbors for normal estimation.
    quiet
        Suppress the renormalization warning.

    Raises
    ------
    PointCloudFormatError
        For malformed files and normals further than 1e-3 from unit length.
    MissingNormalsError
        If the file has no normals and `estimate` is false.
    """
    path = Path(path)
    fmt = fmt or ("ply" if path.suffix.lower() == ".ply" else "csv")
    text = path.read_text()
    if fmt == "csv":
        df = parse_point_cloud_csv(text)
    elif fmt == "ply":
        df = parse_ply(text)
    else:
        raise ValueError(f"fmt must be 'csv' or 'ply', got {fmt!r}")

    dim, has_normals, has_labels = point_cloud_columns(df.columns)
    if df.height == 0:
        raise PointCloudFormatError(f"{path} contains no points")
    positions = df.select(COORDINATE_COLUMNS[:dim]).to_numpy()
    labels = df["label"].to_numpy().astype(object) if has_labels else None

    if has_normals:
        normals = _checked_normals(df.select(NORMAL_COLUMNS[:dim]).to_numpy(), quiet=quiet)
    elif estimate:
        normals = estimate_normals(positions, k, quiet=quiet)
    else:
        raise MissingNormalsError(
            f"{path} has no normal columns; enable normal estimation to compute them"
        )
    return SurfacePointCloud(positions, normals, labels)


def save_point_cloud(cloud: SurfacePointCloud, path: str | Path) -> Path:
    """Write `cloud` as CSV with coordinates, normals and labels."""
    path = Path(path)
    columns = {}
    for axis in range(cloud.dim):
        columns[COORDINATE_COLUMNS[axis]] = cloud.positions[:, axis]
    for axis in range(cloud.dim):
        columns[NORMAL_COLUMNS[axis]] = cloud.normals[:, axis]
    columns["label"] = [str(label) for label in cloud.labels]
    pl.DataFrame(columns).write_csv(path)
    return path


def save_results(records: Iterable[ConvergenceRecord], path: str | Path) -> Path:
    """Write convergence records as CSV."""
    path = Path(path)
    results_dataframe([rec.as_row() for rec in records]).write_csv(path)
    return path


def load_results(path: str | Path) -> pl.DataFrame:
    """Read a convergence CSV written by `save_results`."""
    return pl.read_csv(Path(path), schema_overrides=results_schema())


def save_time_series(series: BumpSeries | Iterable[BumpSeries], path: str | Path) -> Path:
    """Write one or more probe time series as CSV."""
    path = Path(path)
    if isinstance(series, BumpSeries):
        series = [series]
    pl.concat([s.to_frame() for s in series]).write_csv(path)
    return path


def save_kernels(
    kernels: Sequence[KernelCoefficients | None],
    path: str | Path,
) -> Path:
    """
    Write kernel coefficients as CSV, one row per point and basis multi-index.

    `kernels[p]` belongs to point `p`; `None` entries are skipped. Exponents are written
    space-separated.
    """
    rows = []
    for point, kernel in enumerate(kernels):
        if kernel is None:
            continue
        for beta, coefficient in zip(kernel.basis, kernel.coeffs):
            rows.append(
                {
                    "point": point,
                    "exponents": " ".join(str(e) for e in beta.exponents),
                    "coefficient": float(coefficient),
                    "epsilon": kernel.epsilon,
                }
            )
    schema = {
        "point": pl.Int64,
        "exponents": pl.Utf8,
        "coefficient": pl.Float64,
        "epsilon": pl.Float64,
    }
    path = Path(path)
    pl.DataFrame(rows, schema=schema).select(KERNEL_COLUMNS).write_csv(path)
    return path


def config_row(cfg: ExperimentConfig) -> dict:
    """Configuration as plain values, for logging and provenance."""
    row = asdict(cfg)
    for key, value in row.items():
        if isinstance(value, Path):
            row[key] = str(value)
    return row


# ---------------------------------------------------------------------------
# Bunny data
# ---------------------------------------------------------------------------


def fetch_bunny(cache_dir: str | Path | None = None) -> bytes | None:
    """
    Fetch the Stanford bunny archive.

    First checks for the archive in:

    1. The specified cache directory (if provided)
    2. The current working directory

    If not found locally, downloads it and caches it if `cache_dir=` is set.

    Returns
    -------
    bytes | None
        The gzipped tar archive, or `None` if it is not available.
    """
    cache_path = Path(cache_dir) if cache_dir is not None else None
    if cache_path:
        cached_file = cache_path / BUNNY_ARCHIVE
        if cached_file.exists():
            return cached_file.read_bytes()

    cwd_cached_file = Path.cwd() / BUNNY_ARCHIVE
    if cwd_cached_file.exists():
        return cwd_cached_file.read_bytes()

    try:
        with httpx.Client(timeout=120.0, follow_redirects=True) as client:
            response = client.get(BUNNY_URL)
            response.raise_for_status()
            data = response.content

            if cache_path and data:
                cache_path.mkdir(parents=True, exist_ok=True)
                (cache_path / BUNNY_ARCHIVE).write_bytes(data)

            return data
    except httpx.HTTPStatusError as e:
        if e.response.status_code == 404:
            return None
        raise


def bunny_point_cloud(
    archive: bytes,
    n_points: int = BUNNY_POINTS,
    *,
    k: int = DEFAULT_NORMAL_NEIGHBORS,
    quiet: bool = False,
) -> SurfacePointCloud:
    """
    Down-sampled bunny with estimated normals.

    The full-resolution scan is read from the archive, reduced to `n_points` points by
    farthest-point sampling and given PCA normals oriented away from the centroid.
    """
    with tarfile.open(fileobj=io.BytesIO(archive), mode="r:gz") as tar:
        member = tar.extractfile(BUNNY_MEMBER)
        if member is None:
            raise PointCloudFormatError(f"archive has no file {BUNNY_MEMBER}")
        text = member.read().decode("ascii")
    df = parse_ply(text)
    positions = df.select(COORDINATE_COLUMNS).to_numpy()
    keep = np.sort(farthest_point_subsample(positions, n_points))
    positions = positions[keep]
    return SurfacePointCloud(positions, estimate_normals(positions, k, quiet=quiet))


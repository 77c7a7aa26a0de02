"""
sdcpse: Surface DC-PSE differential operators on point clouds, with surface PDE solvers and
curvature benchmarks.
"""

try:
    from importlib.metadata import PackageNotFoundError, version
except ImportError:  # pragma: no cover
    from importlib_metadata import PackageNotFoundError, version

from sdcpse._errors import (
    BlowUpError,
    ConvergenceError,
    DegenerateDistributionError,
    IllConditionedShapeError,
    IsolatedPointError,
    MissingNormalsError,
    NumericalError,
    PointCloudFormatError,
    SingularMatrixError,
    UnsupportedGeometryError,
)
from sdcpse._registry import experiment, get_runner
from sdcpse.bench import (
    BumpSeries,
    ConvergenceRecord,
    ExperimentConfig,
    error_norms,
    estimate_normals,
    fit_convergence_order,
    load_point_cloud,
    reference_fields,
    save_point_cloud,
    save_results,
)
from sdcpse.dcpse import (
    DifferentialOperator,
    KernelCoefficients,
    MultiIndex,
    apply_operator,
    build_kernel,
    evaluate_kernel,
)
from sdcpse.linalg import gmres, lu_solve
from sdcpse.pde import assemble_poisson, build_ghosts, dopri5_integrate, dopri5_step, sync_ghosts
from sdcpse.pointcloud import (
    BumpSurfaceSpec,
    SurfacePointCloud,
    average_spacing,
    build_neighbor_list,
    generate_bump_surface,
    generate_circle,
    generate_ellipsoid,
    generate_fibonacci_sphere,
)
from sdcpse.surface import (
    SurfaceOperator,
    build_surface_operator,
    curvatures,
    evaluate_surface_operator,
    shape_tensor,
)

try:  # pragma: no cover
    __version__ = version("sdcpse")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

__all__ = [
    # Point clouds
    "SurfacePointCloud",
    "BumpSurfaceSpec",
    "build_neighbor_list",
    "average_spacing",
    "generate_circle",
    "generate_fibonacci_sphere",
    "generate_ellipsoid",
    "generate_bump_surface",
    # Flat DC-PSE
    "MultiIndex",
    "DifferentialOperator",
    "KernelCoefficients",
    "build_kernel",
    "evaluate_kernel",
    "apply_operator",
    # Surface DC-PSE
    "SurfaceOperator",
    "build_surface_operator",
    "evaluate_surface_operator",
    "shape_tensor",
    "curvatures",
    # Solvers
    "lu_solve",
    "gmres",
    "assemble_poisson",
    "build_ghosts",
    "sync_ghosts",
    "dopri5_step",
    "dopri5_integrate",
    # Benchmarks
    "ExperimentConfig",
    "ConvergenceRecord",
    "BumpSeries",
    "reference_fields",
    "error_norms",
    "fit_convergence_order",
    "load_point_cloud",
    "save_point_cloud",
    "save_results",
    "estimate_normals",
    # Experiment registry for autocomplete
    "experiment",
    "get_runner",
    # Errors
    "NumericalError",
    "SingularMatrixError",
    "DegenerateDistributionError",
    "ConvergenceError",
    "BlowUpError",
    "IllConditionedShapeError",
    "IsolatedPointError",
    "PointCloudFormatError",
    "MissingNormalsError",
    "UnsupportedGeometryError",
    # Version
    "__version__",
]

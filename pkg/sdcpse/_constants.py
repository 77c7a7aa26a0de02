"""Constants for sdcpse package."""

import math

# Kernel construction
PIVOT_RATIO_TOL = 1e-12  # min/max |U_ii| below which a dense system counts as singular
MOMENT_RTOL = 1e-9  # relative tolerance on the discrete moment conditions
MOMENT_RCOND = 1e-12  # singular values kept when the moment system is rank deficient
COINCIDENCE_TOL = 1e-12  # relative to the cloud diameter
UNIT_NORMAL_TOL = 1e-12
RENORMALIZE_TOL = 1e-3  # normals this close to unit length are renormalized on load

# Shape tensor eigenvalues
COMPLEX_EIG_TOL = 1e-6  # relative to the Frobenius norm of the matrix

# Restarted GMRES (no preconditioning)
GMRES_RESTART = 30
GMRES_RTOL = 1e-10
GMRES_ATOL = 1e-14
GMRES_MAXITER = 10_000

# Normal estimation
MIN_NORMAL_NEIGHBORS = 5
DEFAULT_NORMAL_NEIGHBORS = 12

# Bump surface: graph of u(x) = alpha * zeta(|x - p| / r) over [-2, 2]^2
BUMP_CENTER = (-0.5, 0.0)
BUMP_RADIUS = 0.25
BUMP_CUTOFF = 0.975  # zeta(d) = 0 for d >= BUMP_CUTOFF
BUMP_DOMAIN = (-2.0, 2.0)
BUMP_INIT_SIGMA = 0.2
BUMP_REFINEMENT = 2.05  # linear refinement of the spiral patch against the flat grid
GHOST_BAND = 2.0  # mirrored band next to each edge, in units of r_c
BUMP_PROBES = {
    "x0": (-0.5, 0.0),
    "x1": (-0.25 * math.sqrt(2.0), 0.25 * math.sqrt(2.0)),
}
PROBE_INTERVAL = 0.01

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

# Real spherical harmonic Y_40 = Y40_NORM * (35 cos^4 - 30 cos^2 + 3)
Y40_NORM = 3.0 / 16.0 * math.sqrt(1.0 / math.pi)

# Ellipsoid semi-axes used for the curvature benchmark
ELLIPSOID_AXES = (1.0, 0.8, 0.75)

# Dormand-Prince 5(4), seven stages (FSAL row last)
DOPRI5_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
DOPRI5_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
DOPRI5_B_STAR = (
    5179 / 57600,
    0.0,
    7571 / 16695,
    393 / 640,
    -92097 / 339200,
    187 / 2100,
    1 / 40,
)

# Output schemas
CONVERGENCE_SCHEMA = {
    "experiment": "str",
    "N_p": "int",
    "h": "float",
    "order_r": "int",
    "rc_factor": "float",
    "dn": "float",
    "N_n": "int",
    "eps_factor": "float",
    "L2": "float",
    "Linf": "float",
    "wall_time_s": "float",
}
TIME_SERIES_COLUMNS = ["t", "f_at_x0", "f_at_x1", "alpha"]
CURVATURE_COLUMNS = ["x", "y", "z", "nx", "ny", "nz", "H", "K", "kappa1", "kappa2"]
KERNEL_COLUMNS = ["point", "exponents", "coefficient", "epsilon"]

POINT_LABELS = ("interior", "dirichlet", "ghost")

# Stanford 3D scanning repository
BUNNY_URL = "http://graphics.stanford.edu/pub/3Dscanrep/bunny.tar.gz"
BUNNY_ARCHIVE = "bunny.tar.gz"
BUNNY_MEMBER = "bunny/reconstruction/bun_zipper.ply"
BUNNY_POINTS = 2960

# Per-experiment defaults. `dn_rule` names how the normal spacing follows from N_p:
#   "linear": dn_scale / (N_p - 1)
#   "cbrt":   dn_scale / (N_p ** (1/3) - 1)
#   "sqrt":   dn_scale / (N_p ** (1/2) - 1)
#   "fixed":  dn_scale (the target spacing h itself)
#   "auto":   per-point average spacing
EXPERIMENT_DEFAULTS: dict[str, dict] = {
    "circle-lb": {
        "resolutions": (256, 512, 1024, 2048),
        "order": 2,
        "rc_factor": 4.1,
        "dn_rule": "linear",
        "dn_scale": 3.0,
        "n_layers": 4,
    },
    "circle-poisson": {
        "resolutions": (256, 512, 1024, 2048),
        "order": 2,
        "rc_factor": 4.1,
        "dn_rule": "linear",
        "dn_scale": 3.0,
        "n_layers": 4,
    },
    "sphere-lb": {
        "resolutions": (1000, 4000, 16000, 40000),
        "order": 2,
        "rc_factor": 2.9,
        "dn_rule": "cbrt",
        "dn_scale": 0.8,
        "n_layers": 2,
    },
    "sphere-poisson": {
        "resolutions": (1000, 4000, 16000, 40000),
        "order": 2,
        "rc_factor": 2.9,
        "dn_rule": "cbrt",
        "dn_scale": 0.8,
        "n_layers": 2,
    },
    "ellipsoid-curvature": {
        "resolutions": (2000, 8000, 32258),
        "order": 2,
        "rc_factor": 2.9,
        "dn_rule": "sqrt",
        "dn_scale": 3.0,
        "n_layers": 2,
    },
    "bunny-curvature": {
        "resolutions": (BUNNY_POINTS,),
        "order": 2,
        "rc_factor": 2.9,
        "dn_rule": "auto",
        "dn_scale": 1.0,
        "n_layers": 2,
    },
    "bump-diffusion": {
        "resolutions": (),
        "order": 2,
        "rc_factor": 2.9,
        "dn_rule": "fixed",
        "dn_scale": 1.0,
        "n_layers": 3,
        "spacing": 0.03125,
        "dt": 1e-4,
        "t_final": 1.0,
        "alpha": 0.0,
    },
}

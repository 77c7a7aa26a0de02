"""Tests for the constants module."""

import math

import pytest

from sdcpse._constants import (
    BUMP_PROBES,
    BUNNY_URL,
    CONVERGENCE_SCHEMA,
    CURVATURE_COLUMNS,
    DOPRI5_A,
    DOPRI5_B_STAR,
    DOPRI5_C,
    EXPERIMENT_DEFAULTS,
    TIME_SERIES_COLUMNS,
    Y40_NORM,
)


class TestDormandPrinceTableau:
    """Tests for the Dormand-Prince coefficients."""

    def test_stage_count(self):
        """Test that the tableau has seven stages."""
        assert len(DOPRI5_C) == len(DOPRI5_A) == len(DOPRI5_B_STAR) == 7

    def test_rows_sum_to_nodes(self):
        """Test the row-sum condition sum_j a_ij = c_i."""
        for c, row in zip(DOPRI5_C, DOPRI5_A):
            assert sum(row) == pytest.approx(c, abs=1e-14)

    def test_weights_sum_to_one(self):
        """Test that the fifth-order and embedded weights are consistent."""
        assert sum(DOPRI5_A[-1]) == pytest.approx(1.0, abs=1e-14)
        assert sum(DOPRI5_B_STAR) == pytest.approx(1.0, abs=1e-14)

    def test_first_same_as_last(self):
        """Test that the last stage is evaluated at the end of the step."""
        assert DOPRI5_C[-1] == 1.0
        assert len(DOPRI5_A[-1]) == 6


class TestExperimentDefaults:
    """Tests for the per-experiment parameter defaults."""

    def test_all_experiments_present(self):
        """Test that every command-line experiment has defaults."""
        assert set(EXPERIMENT_DEFAULTS) == {
            "circle-lb",
            "circle-poisson",
            "sphere-lb",
            "sphere-poisson",
            "ellipsoid-curvature",
            "bunny-curvature",
            "bump-diffusion",
        }

    def test_circle_parameters(self):
        """Test the circle cutoff, normal spacing and layers."""
        cfg = EXPERIMENT_DEFAULTS["circle-lb"]
        assert cfg["rc_factor"] == 4.1
        assert cfg["dn_scale"] == 3.0
        assert cfg["n_layers"] == 4
        assert cfg["resolutions"] == (256, 512, 1024, 2048)

    def test_sphere_parameters(self):
        """Test the sphere cutoff, normal spacing and layers."""
        cfg = EXPERIMENT_DEFAULTS["sphere-lb"]
        assert cfg["rc_factor"] == 2.9
        assert cfg["dn_rule"] == "cbrt"
        assert cfg["dn_scale"] == 0.8
        assert cfg["n_layers"] == 2

    def test_ellipsoid_top_resolution(self):
        """Test that the ellipsoid ladder ends at 32258 points."""
        assert EXPERIMENT_DEFAULTS["ellipsoid-curvature"]["resolutions"][-1] == 32258

    def test_bump_parameters(self):
        """Test the diffusion spacing, layers and time step."""
        cfg = EXPERIMENT_DEFAULTS["bump-diffusion"]
        assert cfg["spacing"] == 0.03125
        assert cfg["n_layers"] == 3
        assert cfg["dt"] == 1e-4
        assert cfg["t_final"] == 1.0

    def test_resolutions_ascending(self):
        """Test that every ladder is ascending."""
        for cfg in EXPERIMENT_DEFAULTS.values():
            assert list(cfg["resolutions"]) == sorted(cfg["resolutions"])


class TestOutputSchemas:
    """Tests for the CSV column layouts."""

    def test_convergence_columns(self):
        """Test the convergence column order."""
        assert list(CONVERGENCE_SCHEMA) == [
            "experiment",
            "N_p",
            "h",
            "order_r",
            "rc_factor",
            "dn",
            "N_n",
            "eps_factor",
            "L2",
            "Linf",
            "wall_time_s",
        ]

    def test_time_series_columns(self):
        """Test the time-series column order."""
        assert TIME_SERIES_COLUMNS == ["t", "f_at_x0", "f_at_x1", "alpha"]

    def test_curvature_columns(self):
        """Test the curvature output columns."""
        assert CURVATURE_COLUMNS[:6] == ["x", "y", "z", "nx", "ny", "nz"]
        assert "H" in CURVATURE_COLUMNS and "K" in CURVATURE_COLUMNS


class TestMiscConstants:
    """Tests for probe locations, normalizations and URLs."""

    def test_probe_x1_on_circle_of_quarter_radius(self):
        """Test that probe x1 lies at distance 0.25 from the origin."""
        x, y = BUMP_PROBES["x1"]
        assert math.hypot(x, y) == pytest.approx(0.25)

    def test_y40_normalization_constant(self):
        """Test the Y_40 prefactor."""
        assert Y40_NORM == pytest.approx(3.0 / 16.0 / math.sqrt(math.pi))

    def test_bunny_url(self):
        """Test that the bunny archive URL points at the scanning repository."""
        assert BUNNY_URL.endswith("bunny.tar.gz")
        assert "3Dscanrep" in BUNNY_URL

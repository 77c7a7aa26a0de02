"""Tests for Poisson assembly, mirror ghosts and Dormand-Prince stepping."""

import numpy as np
import numpy.testing as npt
import pytest

from sdcpse._errors import BlowUpError, UnsupportedGeometryError
from sdcpse.dcpse import DifferentialOperator
from sdcpse.pde import (
    assemble_poisson,
    build_ghosts,
    bump_initial_condition,
    dopri5_integrate,
    dopri5_step,
    sync_ghosts,
)
from sdcpse.pointcloud import (
    BumpSurfaceSpec,
    SurfacePointCloud,
    generate_bump_surface,
    generate_circle,
)
from sdcpse.surface import build_surface_operator


def _circle_laplacian(n):
    dn = 3.0 / (n - 1)
    cloud = generate_circle(n)
    sop = build_surface_operator(cloud, DifferentialOperator.laplacian(2), 2, 4.1 * dn, dn, 4)
    return cloud, sop


class TestAssemblePoisson:
    """Tests for assemble_poisson."""

    def test_pinned_rows_are_identity(self):
        """Test that Dirichlet rows hold a single one and the pinned value."""
        _, sop = _circle_laplacian(64)
        system = assemble_poisson(sop, np.ones(64), {0: 0.5, 10: -1.0})

        row = system.matrix.getrow(10).toarray().ravel()
        expected = np.zeros(64)
        expected[10] = 1.0
        npt.assert_array_equal(row, expected)
        assert system.rhs[0] == 0.5
        assert system.rhs[10] == -1.0

    def test_folding_moves_pinned_columns(self):
        """Test that folded systems have no entries in pinned columns off their rows."""
        _, sop = _circle_laplacian(64)
        folded = assemble_poisson(sop, np.zeros(64), [(0, 1.0)])
        column = folded.matrix.getcol(0).toarray().ravel()
        assert column[0] == 1.0
        npt.assert_array_equal(column[1:], 0.0)

    def test_unfolded_rows_sum_to_zero(self):
        """Test that free rows keep the zero row sum of the operator."""
        _, sop = _circle_laplacian(64)
        system = assemble_poisson(sop, np.zeros(64), {0: 0.0}, fold_dirichlet=False)
        row_sums = np.asarray(system.matrix.sum(axis=1)).ravel()
        scale = np.abs(system.matrix.diagonal()).max()
        npt.assert_allclose(row_sums[1:], 0.0, atol=1e-9 * scale)

    def test_zero_problem(self):
        """Test that a zero right-hand side with a zero pin gives the zero solution."""
        _, sop = _circle_laplacian(64)
        result = assemble_poisson(sop, np.zeros(64), {0: 0.0}).solve()
        npt.assert_array_equal(result.x, 0.0)

    def test_circle_poisson(self):
        """Test the solution sin(2 theta) of Q f = -4 sin(2 theta) pinned at theta = 0."""
        cloud, sop = _circle_laplacian(128)
        theta = np.arctan2(cloud.positions[:, 1], cloud.positions[:, 0])
        exact = np.sin(2.0 * theta)

        system = assemble_poisson(sop, -4.0 * exact, {0: 0.0})
        result = system.solve()

        assert result.residual <= 1e-10 * np.linalg.norm(system.rhs)
        assert result.x[0] == pytest.approx(0.0, abs=1e-9)
        assert np.abs(result.x - exact).max() < 0.05

    def test_folded_and_unfolded_agree(self):
        """Test that folding the pinned columns does not change the solution."""
        cloud, sop = _circle_laplacian(64)
        theta = np.arctan2(cloud.positions[:, 1], cloud.positions[:, 0])
        rhs = -4.0 * np.sin(2.0 * theta)
        folded = assemble_poisson(sop, rhs, {0: 0.3}).solve()
        unfolded = assemble_poisson(sop, rhs, {0: 0.3}, fold_dirichlet=False).solve()
        npt.assert_allclose(folded.x, unfolded.x, atol=1e-7)

    def test_validation(self):
        """Test rejected inputs."""
        cloud, sop = _circle_laplacian(32)
        with pytest.raises(ValueError, match="at least one"):
            assemble_poisson(sop, np.zeros(32), {})
        with pytest.raises(ValueError, match="shape"):
            assemble_poisson(sop, np.zeros(31), {0: 0.0})
        with pytest.raises(ValueError, match="indices"):
            assemble_poisson(sop, np.zeros(32), {32: 0.0})

        dn = 3.0 / 31
        gradient = build_surface_operator(
            cloud, DifferentialOperator.derivative(0, 2), 2, 4.1 * dn, dn, 4
        )
        with pytest.raises(ValueError, match="even-order"):
            assemble_poisson(gradient, np.zeros(32), {0: 0.0})


class TestGhosts:
    """Tests for mirror ghosts on the bump surface."""

    def test_ghost_layout(self):
        """Test ghost count, placement outside the domain and labels."""
        cloud = generate_bump_surface(BumpSurfaceSpec(), 0.125)
        augmented, gmap = build_ghosts(cloud, BumpSurfaceSpec(), 0.3)

        # Two columns per edge of 33 points, plus 2x2 corner copies at each corner
        assert len(gmap) == 4 * 2 * 33 + 4 * 4
        assert len(augmented) == len(cloud) + len(gmap)
        ghosts = augmented.positions[gmap.ghosts]
        outside = (np.abs(ghosts[:, 0]) > 2.0) | (np.abs(ghosts[:, 1]) > 2.0)
        assert outside.all()
        assert augmented.mask("ghost").sum() == len(gmap)

    def test_mirror_positions(self):
        """Test that a ghost is the reflection of its source."""
        cloud = generate_bump_surface(BumpSurfaceSpec(), 0.125)
        augmented, gmap = build_ghosts(cloud, BumpSurfaceSpec(), 0.3)
        corner = np.flatnonzero((gmap.mirror != 0).all(axis=1))
        assert corner.size == 16

        g = corner[0]
        source = augmented.positions[gmap.sources[g]]
        ghost = augmented.positions[gmap.ghosts[g]]
        edges = np.where(gmap.mirror[g] > 0, 2.0, -2.0)
        npt.assert_allclose(ghost[:2], 2.0 * edges - source[:2])
        assert ghost[2] == source[2]

    def test_ghost_count_at_reference_resolution(self):
        """Test the ghost count of the bump experiment with a band of two cutoffs."""
        spec = BumpSurfaceSpec()
        h = 0.03125
        r_c = 2.9 * h
        cloud = generate_bump_surface(spec, h)
        _, gmap = build_ghosts(cloud, spec, r_c, width=2.0 * r_c)

        # Five columns of 129 points per edge, plus 5x5 corner copies at each corner
        assert len(gmap) == 4 * 5 * 129 + 4 * 25
        assert abs(len(gmap) - 3000) <= 0.2 * 3000

    def test_corner_point_has_three_ghosts(self):
        """Test the reflections of a point near an edge and of a point near a corner."""
        positions = [[1.99, 0.0, 0.0], [1.99, 1.99, 0.0], [0.0, 0.0, 0.0]]
        normals = [[0.0, 0.0, 1.0]] * 3
        cloud = SurfacePointCloud(positions, normals)
        augmented, gmap = build_ghosts(cloud, BumpSurfaceSpec(), 0.0906)

        assert len(gmap) == 4
        assert (gmap.sources == 0).sum() == 1
        assert (gmap.sources == 1).sum() == 3
        assert not (gmap.sources == 2).any()

        edge_ghost = augmented.positions[gmap.ghosts[gmap.sources == 0]]
        npt.assert_allclose(edge_ghost, [[2.01, 0.0, 0.0]], atol=1e-12)
        corner_ghosts = augmented.positions[gmap.ghosts[gmap.sources == 1]]
        expected = [[2.01, 1.99, 0.0], [1.99, 2.01, 0.0], [2.01, 2.01, 0.0]]
        npt.assert_allclose(
            sorted(map(tuple, corner_ghosts)), sorted(map(tuple, expected)), atol=1e-12
        )

    def test_mirrored_normals_flip_sign(self):
        """Test that normal components across a mirrored edge change sign."""
        tilted = np.array([0.6, 0.0, 0.8])
        positions = [[1.99, 0.0, 0.0], [0.0, -1.95, 0.0], [-1.98, -1.98, 0.0]]
        normals = [tilted, [0.0, 0.6, 0.8], [0.48, 0.6, 0.64]]
        cloud = SurfacePointCloud(positions, normals)
        augmented, gmap = build_ghosts(cloud, BumpSurfaceSpec(), 0.1)

        source_normals = augmented.normals[gmap.sources]
        ghost_normals = augmented.normals[gmap.ghosts]
        flipped = gmap.mirror != 0
        npt.assert_array_equal(ghost_normals[:, :2][flipped], -source_normals[:, :2][flipped])
        npt.assert_array_equal(ghost_normals[:, :2][~flipped], source_normals[:, :2][~flipped])
        npt.assert_array_equal(ghost_normals[:, 2], source_normals[:, 2])
        assert (gmap.mirror[gmap.sources == 2] < 0).any(axis=1).all()

    def test_sync_copies_sources(self):
        """Test that ghost values follow their sources."""
        cloud = generate_bump_surface(BumpSurfaceSpec(), 0.25)
        augmented, gmap = build_ghosts(cloud, BumpSurfaceSpec(), 0.5)
        field = np.random.default_rng(2).standard_normal(len(augmented))
        synced = sync_ghosts(field, gmap)

        npt.assert_array_equal(synced[gmap.ghosts], field[gmap.sources])
        npt.assert_array_equal(synced[: len(cloud)], field[: len(cloud)])

    def test_bump_near_edge_rejected(self):
        """Test that a bump reaching into the reflected band raises."""
        spec = BumpSurfaceSpec(bump_height=0.5, bump_center=(1.8, 0.0))
        cloud = generate_bump_surface(BumpSurfaceSpec(), 0.25)
        with pytest.raises(UnsupportedGeometryError):
            build_ghosts(cloud, spec, 0.1)

    def test_planar_cloud_rejected(self):
        """Test that 2D clouds have no graph-surface ghosts."""
        with pytest.raises(ValueError, match="3D"):
            build_ghosts(generate_circle(8), BumpSurfaceSpec(), 0.1)

    def test_initial_condition(self):
        """Test the peak and support of the initial concentration."""
        spec = BumpSurfaceSpec()
        cloud = generate_bump_surface(spec, 0.125)
        f0 = bump_initial_condition(cloud, spec)
        sigma = spec.init_sigma

        center = np.argmin(np.linalg.norm(cloud.positions, axis=1))
        assert f0[center] == pytest.approx(np.exp(-1.0) / sigma**2)
        far = np.linalg.norm(cloud.positions, axis=1) >= 0.975 * sigma
        npt.assert_array_equal(f0[far], 0.0)


def _decay(_t, y):
    return -y


class TestDormandPrince:
    """Tests for dopri5_step and dopri5_integrate."""

    def test_fifth_order_convergence(self):
        """Test the error ratio on exponential decay as the step halves."""
        errors = [
            abs(dopri5_integrate(np.array([1.0]), _decay, dt, 1.0)[0] - np.exp(-1.0))
            for dt in (0.2, 0.1, 0.05)
        ]
        assert errors[0] / errors[1] > 2**4.5
        assert errors[1] / errors[2] > 2**4.5

    def test_exponential_decay(self):
        """Test y' = -y over unit time against the closed form."""
        y = dopri5_integrate(np.array([1.0]), _decay, 0.1, 1.0)
        assert abs(y[0] - np.exp(-1.0)) <= 1e-7

    def test_zero_rhs_leaves_state_unchanged(self):
        """Test that a vanishing right-hand side returns the initial state bitwise."""
        initial = np.array([0.3, -1.7, 2.5e-3])
        y = dopri5_integrate(initial, lambda t, y: np.zeros_like(y), 1e-2, 0.5)
        npt.assert_array_equal(y, initial)

    def test_embedded_solution(self):
        """Test that both solutions are close and the fifth-order one is closer."""
        y5, y4, slope = dopri5_step(_decay, 0.0, np.array([1.0]), 0.1)
        exact = np.exp(-0.1)
        assert abs(y5[0] - exact) < abs(y4[0] - exact) < 1e-6
        assert slope[0] == pytest.approx(-y5[0])

    def test_observer_calls(self):
        """Test that the observer sees the initial state and every step."""
        seen = []
        dopri5_integrate(
            np.array([1.0]), _decay, 0.1, 1.0, observer=lambda i, t, y: seen.append((i, t))
        )
        assert [i for i, _ in seen] == list(range(11))
        assert seen[-1][1] == pytest.approx(1.0)

    def test_shortened_last_step(self):
        """Test that a final time off the step grid is reached exactly."""
        times = []
        y = dopri5_integrate(
            np.array([1.0]), _decay, 0.3, 1.0, observer=lambda i, t, y: times.append(t)
        )
        npt.assert_allclose(times, [0.0, 0.3, 0.6, 0.9, 1.0])
        assert y[0] == pytest.approx(np.exp(-1.0), rel=1e-6)

    def test_first_same_as_last(self):
        """Test that each step after the first costs six evaluations."""
        calls = []

        def rhs(t, y):
            calls.append(t)
            return -y

        dopri5_integrate(np.array([1.0]), rhs, 0.1, 1.0)
        assert len(calls) == 7 + 6 * 9

    def test_sync_applied_to_stages(self):
        """Test that the sync hook constrains every stage state."""

        def pin_last(y):
            out = y.copy()
            out[-1] = 0.0
            return out

        y = dopri5_integrate(
            np.array([1.0, 1.0]), lambda t, y: np.ones_like(y), 0.1, 1.0, sync=pin_last
        )
        assert y[-1] == 0.0
        assert y[0] == pytest.approx(2.0)

    def test_blow_up(self):
        """Test that non-finite values stop the integration."""
        with pytest.raises(BlowUpError) as info:
            dopri5_integrate(np.array([1.0]), lambda t, y: y * np.nan, 0.1, 1.0)
        assert info.value.step == 1

    def test_invalid_step(self):
        """Test step validation."""
        with pytest.raises(ValueError, match="dt"):
            dopri5_integrate(np.array([1.0]), _decay, 0.0, 1.0)
        with pytest.raises(ValueError, match="t_final"):
            dopri5_integrate(np.array([1.0]), _decay, 0.1, -1.0)

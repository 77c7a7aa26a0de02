"""Tests for the surface DC-PSE operators."""

import numpy as np
import numpy.testing as npt
import pytest

from sdcpse._errors import IllConditionedShapeError, IsolatedPointError
from sdcpse.bench import mean_neighbor_distance
from sdcpse.dcpse import DifferentialOperator, KernelCoefficients, build_kernel
from sdcpse.pointcloud import (
    average_spacing,
    build_neighbor_list,
    generate_circle,
    generate_fibonacci_sphere,
)
from sdcpse.surface import (
    build_surface_neighborhood,
    build_surface_operator,
    build_surface_operators,
    curvatures,
    evaluate_surface_operator,
    load_surface_operator,
    save_surface_operator,
    shape_tensor,
)


def _circle_setup(n):
    """Circle with the cutoff, normal spacing and layers of the circle experiments."""
    dn = 3.0 / (n - 1)
    return generate_circle(n), 4.1 * dn, dn, 4


def _sphere_setup(n):
    """Sphere with the cutoff, normal spacing and layers of the sphere experiments."""
    dn = 0.8 / (n ** (1.0 / 3.0) - 1.0)
    return generate_fibonacci_sphere(n), 2.9 * dn, dn, 2


def _materialized_values(cloud, op, r, r_c, dn, n_layers, field):
    """Flat DC-PSE on explicitly stored normal copies of each point and its surface neighbors."""
    nbrs = build_neighbor_list(cloud, r_c)
    positions, normals = cloud.positions, cloud.normals
    out = np.empty(len(cloud))
    for p in range(len(cloud)):
        offsets, values = [], []
        for s in nbrs[p]:
            for i in range(-n_layers, n_layers + 1):
                offset = (positions[p] - positions[s]) - (i * dn) * normals[s]
                if np.linalg.norm(offset) <= r_c:
                    offsets.append(offset)
                    values.append(field[s])
        for i in range(-n_layers, n_layers + 1):
            offset = -i * dn * normals[p]
            if i != 0 and np.linalg.norm(offset) <= r_c:
                offsets.append(offset)
                values.append(field[p])

        epsilon = average_spacing(cloud, p, nbrs)
        offsets = np.array(offsets)
        k = build_kernel(offsets, op, epsilon, r, cutoff=r_c)
        eta = k.evaluate_scaled(offsets / epsilon)
        out[p] = np.sum((np.array(values) + op.sign * field[p]) * eta) / epsilon**op.order
    return out


class TestReductionIdentity:
    """Summed surface kernels reproduce flat DC-PSE on the extended cloud."""

    def test_circle_laplace_beltrami(self):
        """Test the identity at every point of the circle."""
        cloud, r_c, dn, layers = _circle_setup(128)
        op = DifferentialOperator.laplacian(2)
        sop = build_surface_operator(cloud, op, 2, r_c, dn, layers)
        theta = np.arctan2(cloud.positions[:, 1], cloud.positions[:, 0])
        field = np.sin(3.0 * theta)

        expected = _materialized_values(cloud, op, 2, r_c, dn, layers, field)
        tolerance = 1e-12 * np.abs(expected).max()
        npt.assert_allclose(sop.evaluate(field), expected, rtol=0, atol=tolerance)

    def test_sphere_gradient(self):
        """Test the identity for an odd operator at every point of the sphere."""
        cloud, r_c, dn, layers = _sphere_setup(2000)
        op = DifferentialOperator.derivative(2, 3)
        sop = build_surface_operator(cloud, op, 2, r_c, dn, layers)
        field = cloud.positions[:, 0] * cloud.positions[:, 2]

        expected = _materialized_values(cloud, op, 2, r_c, dn, layers, field)
        tolerance = 1e-12 * np.abs(expected).max()
        npt.assert_allclose(sop.evaluate(field), expected, rtol=0, atol=tolerance)


class TestSurfaceNeighborhood:
    """Tests for build_surface_neighborhood."""

    def test_groups(self):
        """Test that entries are grouped per neighbor with the center's copies last."""
        cloud, r_c, dn, layers = _circle_setup(64)
        nbrs = build_neighbor_list(cloud, r_c)
        hood = build_surface_neighborhood(cloud, 0, nbrs, dn, layers)

        assert hood.n_groups == len(nbrs[0]) + 1
        own = hood.groups[-1]
        assert len(own) == 2 * layers
        # Copies of the center lie on its normal line
        npt.assert_allclose(own[:, 1], 0.0, atol=1e-15)
        assert np.all(np.linalg.norm(hood.entries, axis=1) * hood.epsilon <= r_c + 1e-15)

    def test_default_layers(self):
        """Test the layer count that follows from cutoff and spacing."""
        cloud, r_c, _, _ = _circle_setup(64)
        nbrs = build_neighbor_list(cloud, r_c)
        hood = build_surface_neighborhood(cloud, 3, nbrs, delta_n=r_c / 3.0)
        assert hood.n_layers == 3

    def test_invalid_parameters(self):
        """Test normal spacing and layer validation."""
        cloud, r_c, _, _ = _circle_setup(64)
        nbrs = build_neighbor_list(cloud, r_c)
        with pytest.raises(ValueError, match="delta_n"):
            build_surface_neighborhood(cloud, 0, nbrs, -1.0, 2)
        with pytest.raises(ValueError, match="n_layers"):
            build_surface_neighborhood(cloud, 0, nbrs, 0.01, 0)


class TestSurfaceOperator:
    """Tests for building and applying surface operators."""

    def test_constant_field_is_annihilated(self):
        """Test that the Laplace-Beltrami operator maps constants to exactly zero."""
        cloud, r_c, dn, layers = _circle_setup(128)
        sop = build_surface_operator(cloud, DifferentialOperator.laplacian(2), 2, r_c, dn, layers)
        npt.assert_array_equal(sop.evaluate(np.full(len(cloud), 2.5)), 0.0)

    def test_circle_laplace_beltrami_accuracy(self):
        """Test -(sin + cos) for sin + cos on the unit circle."""
        cloud, r_c, dn, layers = _circle_setup(256)
        sop = build_surface_operator(cloud, DifferentialOperator.laplacian(2), 2, r_c, dn, layers)
        theta = np.arctan2(cloud.positions[:, 1], cloud.positions[:, 0])
        field = np.sin(theta) + np.cos(theta)

        error = np.abs(sop.evaluate(field) + field).max()
        assert error < 0.02

    def test_error_decreases_with_resolution(self):
        """Test that doubling the point count reduces the error."""
        errors = []
        for n in (128, 256):
            cloud, r_c, dn, layers = _circle_setup(n)
            sop = build_surface_operator(
                cloud, DifferentialOperator.laplacian(2), 2, r_c, dn, layers
            )
            theta = np.arctan2(cloud.positions[:, 1], cloud.positions[:, 0])
            field = np.cos(2.0 * theta)
            errors.append(np.abs(sop.evaluate(field) + 4.0 * field).max())
        assert errors[1] < 0.5 * errors[0]

    def test_to_sparse_matches_evaluate(self):
        """Test the matrix form for even and odd operators."""
        cloud, r_c, dn, layers = _sphere_setup(500)
        rng = np.random.default_rng(9)
        field = rng.standard_normal(len(cloud))
        for op in (DifferentialOperator.laplacian(3), DifferentialOperator.derivative(0, 3)):
            sop = build_surface_operator(cloud, op, 2, r_c, dn, layers)
            direct = sop.evaluate(field)
            npt.assert_allclose(
                sop.to_sparse() @ field, direct, atol=1e-10 * np.abs(direct).max()
            )

    def test_even_operator_row_sums_vanish(self):
        """Test that the sparse Laplace-Beltrami rows sum to zero."""
        cloud, r_c, dn, layers = _circle_setup(64)
        sop = build_surface_operator(cloud, DifferentialOperator.laplacian(2), 2, r_c, dn, layers)
        matrix = sop.to_sparse()
        row_sums = np.asarray(matrix.sum(axis=1)).ravel()
        npt.assert_allclose(row_sums, 0.0, atol=1e-9 * np.abs(matrix.diagonal()).max())

    def test_threads_match_serial(self):
        """Test that the result does not depend on the number of workers."""
        cloud, r_c, dn, layers = _sphere_setup(400)
        op = DifferentialOperator.laplacian(3)
        serial = build_surface_operator(cloud, op, 2, r_c, dn, layers)
        threaded = build_surface_operator(cloud, op, 2, r_c, dn, layers, n_jobs=2)
        npt.assert_array_equal(serial.weights, threaded.weights)
        npt.assert_array_equal(serial.self_weights, threaded.self_weights)
        npt.assert_array_equal(serial.indices, threaded.indices)

    def test_shared_build_matches_single(self):
        """Test that building the gradient at once matches building each component."""
        cloud, r_c, dn, layers = _sphere_setup(300)
        ops = DifferentialOperator.gradient(3)
        together = build_surface_operators(cloud, ops, 2, r_c, dn, layers)
        for op, sop in zip(ops, together):
            single = build_surface_operator(cloud, op, 2, r_c, dn, layers)
            npt.assert_allclose(sop.weights, single.weights, rtol=1e-10, atol=1e-12)

    def test_centers_subset(self):
        """Test that points without kernels evaluate to zero."""
        cloud, r_c, dn, layers = _circle_setup(64)
        centers = np.arange(64) % 2 == 0
        sop = build_surface_operator(
            cloud, DifferentialOperator.laplacian(2), 2, r_c, dn, layers, centers=centers
        )
        assert np.isnan(sop.epsilon[1])
        assert sop.neighbors(1).size == 0
        theta = np.arctan2(cloud.positions[:, 1], cloud.positions[:, 0])
        values = sop.evaluate(np.cos(theta))
        npt.assert_array_equal(values[1::2], 0.0)
        assert np.all(np.isfinite(sop.epsilon[::2]))

    def test_keep_kernels(self):
        """Test that embedding-space kernels are retained on request."""
        cloud, r_c, dn, layers = _circle_setup(32)
        sop = build_surface_operator(
            cloud, DifferentialOperator.laplacian(2), 2, r_c, dn, layers, keep_kernels=True
        )
        assert len(sop.kernels) == 32
        assert isinstance(sop.kernels[0], KernelCoefficients)
        assert len(sop.kernel_values(0)) == sop.neighbors(0).size + 1

    def test_field_shape_checked(self):
        """Test that a field of the wrong length raises."""
        cloud, r_c, dn, layers = _circle_setup(32)
        sop = build_surface_operator(cloud, DifferentialOperator.laplacian(2), 2, r_c, dn, layers)
        with pytest.raises(ValueError, match="shape"):
            evaluate_surface_operator(np.ones(31), sop)

    def test_dimension_mismatch(self):
        """Test that operator and cloud dimensions must agree."""
        cloud, r_c, dn, layers = _circle_setup(32)
        with pytest.raises(ValueError, match="embedded"):
            build_surface_operator(cloud, DifferentialOperator.laplacian(3), 2, r_c, dn, layers)

    def test_isolated_point(self):
        """Test that a point without surface neighbors raises."""
        cloud = generate_circle(16)
        with pytest.raises(IsolatedPointError) as info:
            build_surface_operator(cloud, DifferentialOperator.laplacian(2), 2, 0.1, 0.01, 2)
        assert info.value.index == 0

    def test_save_and_load(self, tmp_path):
        """Test that saved kernels load back unchanged."""
        cloud, r_c, dn, layers = _circle_setup(64)
        sop = build_surface_operator(cloud, DifferentialOperator.laplacian(2), 2, r_c, dn, layers)
        path = save_surface_operator(sop, tmp_path / "laplacian")
        assert path.name == "laplacian.npz"

        loaded = load_surface_operator(path)
        assert loaded.op == sop.op
        assert loaded.r == 2
        assert loaded.cutoff == sop.cutoff
        npt.assert_array_equal(loaded.weights, sop.weights)
        field = np.cos(np.arange(64.0))
        npt.assert_array_equal(loaded.evaluate(field), sop.evaluate(field))


class TestShapeTensor:
    """Tests for shape_tensor and curvatures."""

    def test_unit_sphere_curvatures(self):
        """Test H and K close to one on the unit sphere."""
        cloud, r_c, dn, layers = _sphere_setup(2000)
        result = curvatures(shape_tensor(cloud, 2, r_c, dn, layers))
        assert np.abs(result.mean - 1.0).max() < 0.1
        assert np.abs(result.gauss - 1.0).max() < 0.2
        assert np.median(np.abs(result.mean - 1.0)) < 0.02

    @pytest.mark.slow
    def test_unit_sphere_error_bound(self):
        """Test that H and K err by at most 5 h^2 once the spacing h is below 0.05."""
        cloud, r_c, dn, layers = _sphere_setup(16000)
        h = mean_neighbor_distance(cloud.positions)
        assert h <= 0.05

        result = curvatures(shape_tensor(cloud, 2, r_c, dn, layers, n_jobs=4))
        assert np.abs(result.mean - 1.0).max() <= 5.0 * h**2
        assert np.abs(result.gauss - 1.0).max() <= 5.0 * h**2

    def test_precomputed_operators(self):
        """Test that supplied gradient operators give the same tensor."""
        cloud, r_c, dn, layers = _sphere_setup(300)
        ops = build_surface_operators(cloud, DifferentialOperator.gradient(3), 2, r_c, dn, layers)
        npt.assert_allclose(
            shape_tensor(cloud, 2, r_c, dn, layers, operators=ops),
            shape_tensor(cloud, 2, r_c, dn, layers),
        )

    def test_wrong_operators_rejected(self):
        """Test that the supplied operators must be the first derivatives."""
        cloud, r_c, dn, layers = _sphere_setup(300)
        lap = build_surface_operator(cloud, DifferentialOperator.laplacian(3), 2, r_c, dn, layers)
        with pytest.raises(ValueError, match="first derivatives"):
            shape_tensor(cloud, 2, r_c, operators=[lap, lap, lap])

    def test_planar_cloud_rejected(self):
        """Test that curves in the plane have no shape tensor here."""
        cloud, r_c, dn, layers = _circle_setup(32)
        with pytest.raises(ValueError, match="3D"):
            shape_tensor(cloud, 2, r_c, dn, layers)

    def test_curvatures_from_diagonal_tensors(self):
        """Test H, K and principal curvatures on synthetic tensors."""
        shape = np.array([np.diag([2.0, 3.0, 0.0]), np.diag([-1.0, 0.5, 0.01])])
        result = curvatures(shape)
        npt.assert_allclose(result.mean, [2.5, -0.245])
        npt.assert_allclose(result.gauss, [6.0, -0.5])
        npt.assert_allclose(result.principal, [[3.0, 2.0], [0.5, -1.0]])

    def test_complex_eigenvalues(self):
        """Test that a rotation-like tensor is rejected."""
        rotation = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        shape = np.stack([np.eye(3), rotation])
        with pytest.raises(IllConditionedShapeError) as info:
            curvatures(shape)
        assert info.value.index == 1

    def test_bad_shape(self):
        """Test that the input must be a stack of 3x3 matrices."""
        with pytest.raises(ValueError, match="expected shape"):
            curvatures(np.zeros((4, 2, 2)))


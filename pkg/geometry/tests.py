import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np
from django.core.exceptions import ImproperlyConfigured
from django.test import SimpleTestCase, override_settings
from scipy.spatial import cKDTree

from . import grid as grid_module
from .fields import ANALYTIC, GRID, RoboCentricField
from .grid import SdfGrid, build_grid, grid_query, load_or_build_grid
from .sampling import sample_boundary, sample_footprint
from .shapes import (
    CIRCLE, Polygon, Pose2, Primitive, RobotShape, body_to_world, sdf_gradient,
    sdf_gradient_exact, sdf_primitive, sdf_union, world_to_body,
)


def boundary_oracle(shape, spacing=1e-4):
    """Dense samples of the union boundary, for brute-force distances."""
    pieces = []
    for index, primitive in enumerate(shape.primitives):
        if primitive.kind == CIRCLE:
            count = int(np.ceil(2 * np.pi * primitive.radius / spacing))
            angles = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
            points = primitive.center + primitive.radius * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        else:
            corners = primitive.vertices()
            edges = []
            for a, b in zip(corners, np.roll(corners, -1, axis=0)):
                count = int(np.ceil(np.linalg.norm(b - a) / spacing))
                t = np.linspace(0.0, 1.0, count, endpoint=False)[:, None]
                edges.append(a + t * (b - a))
            points = np.vstack(edges)
        # Boundary buried inside another primitive is not on the union boundary
        for other_index, other in enumerate(shape.primitives):
            if other_index != index:
                points = points[~other.contains(points)]
        pieces.append(points)
    return np.vstack(pieces)


def l_shape():
    return RobotShape.l_shape()


def random_points(rng, count, low=-3.0, high=3.0):
    return rng.uniform(low, high, size=(count, 2))


class PrimitiveSdfTests(SimpleTestCase):
    """Tests for primitive signed distances (Feature 1.1)"""

    def test_circle_center(self):
        """Test that the center of a unit circle is at depth one"""
        self.assertAlmostEqual(sdf_primitive(Primitive.circle(1.0), (0.0, 0.0)), -1.0)

    def test_rectangle_center(self):
        """Test that the rectangle center is half a width deep"""
        rect = Primitive.rectangle(1.0, 0.5)
        self.assertAlmostEqual(sdf_primitive(rect, (0.0, 0.0)), -0.5)

    def test_rectangle_corner_distance(self):
        """Test that distance beyond a corner is Euclidean"""
        rect = Primitive.rectangle(1.0, 0.5)
        self.assertAlmostEqual(sdf_primitive(rect, (2.0, 1.5)), np.sqrt(2.0), places=12)

    def test_rectangle_near_face(self):
        rect = Primitive.rectangle(1.0, 0.5)
        self.assertAlmostEqual(sdf_primitive(rect, (0.9, 0.1)), -0.1, places=12)

    def test_rectangle_is_symmetric(self):
        """Test that mirrored query points give the same distance"""
        rect = Primitive.rectangle(1.0, 0.5, offset=(0.3, -0.2))
        rng = np.random.default_rng(7)
        local = random_points(rng, 200)
        center = np.array(rect.offset)
        np.testing.assert_allclose(rect.sdf(center + local), rect.sdf(center - local), atol=1e-12)
        np.testing.assert_allclose(rect.sdf(center + local), rect.sdf(center + local * [1, -1]), atol=1e-12)

    def test_offset_shifts_field(self):
        circle = Primitive.circle(0.5, offset=(1.0, 2.0))
        self.assertAlmostEqual(sdf_primitive(circle, (1.0, 3.0)), 0.5)

    def test_invalid_sizes_rejected(self):
        """Test that non-positive sizes raise ValueError"""
        with self.assertRaises(ValueError):
            Primitive.circle(0.0)
        with self.assertRaises(ValueError):
            Primitive.rectangle(1.0, -0.5)
        with self.assertRaises(ValueError):
            Primitive('triangle', radius=1.0)

    def test_vectorised_over_points(self):
        rect = Primitive.rectangle(1.0, 0.5)
        values = sdf_primitive(rect, np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.5]]))
        np.testing.assert_allclose(values, [-0.5, 1.0, 1.0])

    def test_oracle_agreement(self):
        """Test that primitive distances match a brute-force boundary oracle"""
        rng = np.random.default_rng(11)
        for primitive in (Primitive.circle(1.0), Primitive.rectangle(1.0, 0.5, offset=(0.2, 0.1))):
            shape = RobotShape((primitive,))
            tree = cKDTree(boundary_oracle(shape))
            points = random_points(rng, 10_000)
            h = sdf_primitive(primitive, points)
            oracle, _ = tree.query(points)
            band = np.abs(h) > 1e-9
            np.testing.assert_allclose(np.abs(h), oracle, atol=1e-3)
            np.testing.assert_array_equal((h < 0)[band], primitive.contains(points)[band])


class UnionSdfTests(SimpleTestCase):
    """Tests for the union signed distance (Feature 1.2)"""

    def test_single_primitive_union(self):
        """Test that a one-primitive union equals the primitive"""
        rect = Primitive.rectangle(1.0, 0.5)
        points = random_points(np.random.default_rng(3), 100)
        np.testing.assert_array_equal(sdf_union(RobotShape((rect,)), points), sdf_primitive(rect, points))

    def test_l_shape_values(self):
        shape = l_shape()
        self.assertAlmostEqual(sdf_union(shape, (0.0, 0.0)), -0.25)
        self.assertAlmostEqual(sdf_union(shape, (5.0, 0.0)), 4.0)

    def test_empty_shape_rejected(self):
        with self.assertRaises(ValueError):
            RobotShape(())

    def test_l_shape_oracle(self):
        """Test that the L-shape field matches the oracle outside and in sign inside

        Inside the union the minimum over members can only under-estimate the
        depth, so interior magnitudes are checked as a bound.
        """
        shape = l_shape()
        tree = cKDTree(boundary_oracle(shape))
        points = random_points(np.random.default_rng(5), 10_000)
        h = sdf_union(shape, points)
        oracle, _ = tree.query(points)
        band = np.abs(h) > 1e-9
        inside = shape.contains(points)
        np.testing.assert_array_equal((h < 0)[band], inside[band])
        np.testing.assert_allclose(h[~inside], oracle[~inside], atol=1e-3)
        self.assertTrue(np.all(np.abs(h[inside]) <= oracle[inside] + 1e-3))

    def test_lipschitz(self):
        """Test that the field is 1-Lipschitz"""
        shape = l_shape()
        rng = np.random.default_rng(13)
        a = random_points(rng, 5_000)
        b = a + rng.normal(scale=0.5, size=a.shape)
        gap = np.abs(sdf_union(shape, a) - sdf_union(shape, b))
        self.assertTrue(np.all(gap <= np.linalg.norm(a - b, axis=-1) + 1e-9))


class SdfGradientTests(SimpleTestCase):
    """Tests for field gradients (Feature 1.3)"""

    def test_circle_radial(self):
        shape = RobotShape((Primitive.circle(1.0),))
        np.testing.assert_allclose(sdf_gradient(shape, (2.0, 0.0), 1e-4), [1.0, 0.0], atol=1e-6)

    def test_rectangle_face_normal(self):
        shape = RobotShape((Primitive.rectangle(1.0, 0.5),))
        np.testing.assert_allclose(sdf_gradient(shape, (2.0, 0.0), 1e-4), [1.0, 0.0], atol=1e-6)

    def test_default_step_from_settings(self):
        """Test that the step falls back to SDF_GRADIENT_STEP"""
        shape = RobotShape((Primitive.circle(1.0),))
        with override_settings(SDF_GRADIENT_STEP=0.0):
            with self.assertRaises(ValueError):
                sdf_gradient(shape, (2.0, 0.0))

    def test_l_shape_against_oracle(self):
        """Test the L-shape gradient against a finite difference of the oracle"""
        shape = l_shape()
        tree = cKDTree(boundary_oracle(shape))
        q = np.array([0.5, 0.6])
        step = 1e-3
        oracle = []
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = step
            plus, _ = tree.query(q + e)
            minus, _ = tree.query(q - e)
            oracle.append((plus - minus) / (2 * step))
        np.testing.assert_allclose(sdf_gradient(shape, q, 1e-4), oracle, atol=1e-3)

    def test_step_consistency_off_ridges(self):
        """Test that Δ=1e-4 and Δ=1e-5 agree away from ridges"""
        shape = l_shape()
        rng = np.random.default_rng(17)
        points = random_points(rng, 2_000)
        smooth = np.ones(len(points), dtype=bool)
        center = sdf_gradient_exact(shape, points)
        for offset in ([2e-4, 0], [-2e-4, 0], [0, 2e-4], [0, -2e-4]):
            neighbour = sdf_gradient_exact(shape, points + np.array(offset))
            smooth &= np.all(np.abs(neighbour - center) < 1e-3, axis=-1)
        coarse = sdf_gradient(shape, points[smooth], 1e-4)
        fine = sdf_gradient(shape, points[smooth], 1e-5)
        self.assertGreater(smooth.sum(), 1_500)
        np.testing.assert_allclose(coarse, fine, atol=1e-3)
        np.testing.assert_allclose(coarse, center[smooth], atol=1e-3)

    def test_exact_gradient_tie_break(self):
        """Test that ties between primitives use the first primitive"""
        shape = RobotShape((Primitive.circle(1.0, offset=(-2.0, 0.0)), Primitive.circle(1.0, offset=(2.0, 0.0))))
        np.testing.assert_allclose(sdf_gradient_exact(shape, (0.0, 0.0)), [1.0, 0.0])

    def test_exact_gradient_unit_norm(self):
        shape = l_shape()
        points = random_points(np.random.default_rng(19), 500)
        norms = np.linalg.norm(sdf_gradient_exact(shape, points), axis=-1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)


class FrameTransformTests(SimpleTestCase):
    """Tests for body and world frame transforms (Feature 1.4)"""

    def test_identity_pose(self):
        q = np.array([1.5, -2.0])
        np.testing.assert_allclose(world_to_body(Pose2(0.0, 0.0, 0.0), q), q)

    def test_quarter_turn(self):
        np.testing.assert_allclose(world_to_body(Pose2(0.0, 0.0, np.pi / 2), (0.0, 1.0)), [1.0, 0.0], atol=1e-15)

    def test_round_trip(self):
        rng = np.random.default_rng(23)
        pose = Pose2(1.2, -0.4, 2.1)
        points = random_points(rng, 100)
        np.testing.assert_allclose(body_to_world(pose, world_to_body(pose, points)), points, atol=1e-12)

    def test_rotation_orthonormal(self):
        """Test that R(θ) is a proper rotation"""
        for theta in np.linspace(-4.0, 4.0, 9):
            rotation = Pose2(0.0, 0.0, theta).rotation
            np.testing.assert_allclose(rotation.T @ rotation, np.eye(2), atol=1e-12)
            self.assertAlmostEqual(np.linalg.det(rotation), 1.0, places=12)

    def test_rotation_derivative(self):
        theta, step = 0.7, 1e-6
        numeric = (Pose2(0, 0, theta + step).rotation - Pose2(0, 0, theta - step).rotation) / (2 * step)
        np.testing.assert_allclose(Pose2(0, 0, theta).rotation_derivative, numeric, atol=1e-8)

    def test_rigid_motion_invariance(self):
        """Test that moving pose and point together leaves the field unchanged"""
        shape = l_shape()
        rng = np.random.default_rng(29)
        pose = Pose2(1.0, 1.0, np.pi / 4)
        points = random_points(rng, 200)
        phi, shift = 1.3, np.array([-2.0, 0.5])
        rotation = Pose2(0, 0, phi).rotation
        moved_pose = Pose2(*(rotation @ pose.p + shift), pose.theta + phi)
        moved_points = points @ rotation.T + shift
        np.testing.assert_allclose(
            sdf_union(shape, world_to_body(pose, points)),
            sdf_union(shape, world_to_body(moved_pose, moved_points)),
            atol=1e-12,
        )


class SdfGridTests(SimpleTestCase):
    """Tests for the precomputed grid (Features 1.5 to 1.7)"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.shape = l_shape()
        cls.grid = build_grid(cls.shape, 3.0, 0.05)

    def test_circle_grid_extents(self):
        circle = RobotShape((Primitive.circle(1.0),))
        grid = build_grid(circle, 1.0, 0.5)
        self.assertEqual(grid.extents, (9, 9))
        self.assertEqual(grid.values[4, 4], -1.0)

    def test_values_are_samples(self):
        """Test that stored values equal the analytic field at cell centers"""
        np.testing.assert_array_equal(self.grid.values, sdf_union(self.shape, self.grid.cell_centers()))

    def test_l_shape_extents(self):
        self.assertEqual(self.grid.extents, (161, 161))
        self.assertEqual(self.grid.origin, (-4.0, -3.25))

    def test_cell_center_query(self):
        """Test that a query at a cell center returns the stored value"""
        center = self.grid.cell_centers()[40, 70]
        value, _ = grid_query(self.grid, self.shape, center)
        self.assertAlmostEqual(float(value), self.grid.values[40, 70], places=12)

    def test_interpolation_error(self):
        """Test that interior interpolation stays within half a cell of the field"""
        rng = np.random.default_rng(31)
        low, high = np.array(self.grid.origin), np.array(self.grid.upper)
        points = rng.uniform(low, high, size=(10_000, 2))
        value, _ = grid_query(self.grid, self.shape, points)
        error = np.abs(value - sdf_union(self.shape, points))
        self.assertLessEqual(error.max(), 0.5 * self.grid.resolution + 1e-9)

    def test_patch_gradient(self):
        """Test that the patch gradient is the derivative of the interpolant"""
        q = np.array([0.523, 1.117])
        step = 1e-7
        _, gradient = grid_query(self.grid, self.shape, q)
        numeric = [
            (grid_query(self.grid, self.shape, q + e)[0] - grid_query(self.grid, self.shape, q - e)[0]) / (2 * step)
            for e in (np.array([step, 0.0]), np.array([0.0, step]))
        ]
        np.testing.assert_allclose(gradient, numeric, atol=1e-5)

    def test_fallback_outside(self):
        """Test that queries outside the grid use the analytic field"""
        q = np.array([[10.0, 0.0], [0.0, -7.5]])
        value, gradient = grid_query(self.grid, self.shape, q)
        np.testing.assert_array_equal(value, sdf_union(self.shape, q))
        np.testing.assert_array_equal(gradient, sdf_gradient(self.shape, q))

    def test_cell_budget(self):
        """Test that oversized grids are rejected as misconfiguration"""
        with self.assertRaises(ImproperlyConfigured):
            build_grid(self.shape, 3.0, 0.05, max_cells=1_000)
        with override_settings(SDF_GRID_MAX_CELLS=1_000):
            with self.assertRaises(ImproperlyConfigured):
                build_grid(self.shape, 3.0, 0.05)

    def test_invalid_parameters(self):
        with self.assertRaises(ValueError):
            build_grid(self.shape, -1.0, 0.05)
        with self.assertRaises(ValueError):
            build_grid(self.shape, 1.0, 0.0)

    def test_binary_layout(self):
        """Test the little-endian header followed by row-major values"""
        grid = build_grid(RobotShape((Primitive.circle(1.0),)), 1.0, 0.5)
        data = grid.to_bytes()
        self.assertEqual(len(data), 40 + 81 * 8)
        header = np.frombuffer(data[:24], dtype='<f8')
        np.testing.assert_array_equal(header, [0.5, -2.0, -2.0])
        np.testing.assert_array_equal(np.frombuffer(data[24:40], dtype='<i8'), [9, 9])
        self.assertEqual(np.frombuffer(data[40:48], dtype='<f8')[0], grid.values[0, 0])
        self.assertEqual(np.frombuffer(data[48:56], dtype='<f8')[0], grid.values[0, 1])
        restored = SdfGrid.from_bytes(data)
        np.testing.assert_array_equal(restored.values, grid.values)

    def test_truncated_bytes_rejected(self):
        data = build_grid(RobotShape((Primitive.circle(1.0),)), 1.0, 0.5).to_bytes()
        with self.assertRaises(ValueError):
            SdfGrid.from_bytes(data[:-8])

    def test_cache_reuse(self):
        """Test that a cached grid is loaded instead of rebuilt"""
        circle = RobotShape((Primitive.circle(1.0),))
        with tempfile.TemporaryDirectory() as cache_dir:
            with override_settings(SDF_GRID_CACHE_DIR=cache_dir):
                first = load_or_build_grid(circle, 1.0, 0.5)
                self.assertEqual(len(list(Path(cache_dir).glob('sdf-*.grid'))), 1)
                with patch.object(grid_module, 'build_grid', wraps=grid_module.build_grid) as build:
                    second = load_or_build_grid(circle, 1.0, 0.5)
                    build.assert_not_called()
                    load_or_build_grid(circle, 1.0, 0.25)
                    build.assert_called_once()
        np.testing.assert_array_equal(first.values, second.values)

    def test_corrupt_cache_rebuilt(self):
        circle = RobotShape((Primitive.circle(1.0),))
        with tempfile.TemporaryDirectory() as cache_dir:
            key = grid_module.grid_cache_key(circle, 1.0, 0.5)
            (Path(cache_dir) / f"sdf-{key}.grid").write_bytes(b"junk")
            with self.assertLogs('geometry.grid', level='WARNING'):
                grid = load_or_build_grid(circle, 1.0, 0.5, cache_dir=cache_dir)
        self.assertEqual(grid.extents, (9, 9))


class BoundarySamplingTests(SimpleTestCase):
    """Tests for obstacle boundary sampling (Feature 1.8)"""

    def test_circle_quarters(self):
        points = sample_boundary(Primitive.circle(1.0), 4).points
        np.testing.assert_allclose(points, [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-15)

    def test_unit_square_corners_and_midpoints(self):
        square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
        points = sample_boundary(square, 8).points
        expected = [[0, 0], [0.5, 0], [1, 0], [1, 0.5], [1, 1], [0.5, 1], [0, 1], [0, 0.5]]
        np.testing.assert_allclose(points, expected, atol=1e-12)

    def test_rectangle_starts_lower_left(self):
        points = sample_boundary(Primitive.rectangle(0.75, 0.75), 8).points
        np.testing.assert_allclose(points[0], [-0.75, -0.75])
        np.testing.assert_allclose(points[2], [0.75, -0.75])

    def test_points_on_boundary(self):
        """Test that every sampled point lies on the zero level set"""
        shapes = [
            Primitive.circle(1.3, offset=(0.5, 0.2)),
            Primitive.rectangle(0.75, 0.4),
            Polygon(((0.0, 0.0), (2.0, 0.0), (2.5, 1.5), (0.5, 2.0))),
        ]
        for shape in shapes:
            points = sample_boundary(shape, 24).points
            self.assertEqual(points.shape, (24, 2))
            self.assertLessEqual(np.abs(shape.sdf(points)).max(), 1e-9)

    def test_obstacle_id_carried(self):
        self.assertEqual(sample_boundary(Primitive.circle(1.0), 6, obstacle_id=3).obstacle_id, 3)

    def test_too_few_points(self):
        with self.assertRaises(ValueError):
            sample_boundary(Primitive.circle(1.0), 2)

    def test_degenerate_polygon(self):
        with self.assertRaises(ValueError):
            sample_boundary([(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)], 8)
        with self.assertRaises(ValueError):
            sample_boundary([(0.0, 0.0), (1.0, 0.0)], 8)

    def test_footprint_covers_every_primitive_and_origin(self):
        shape = RobotShape((Primitive.rectangle(1.0, 0.25), Primitive.rectangle(0.25, 1.0, offset=(-0.75, 0.75))))
        points = sample_footprint(shape)
        self.assertEqual(points.shape, (1 + 2 * 24, 2))
        np.testing.assert_array_equal(points[0], [0.0, 0.0])
        for primitive in shape.primitives:
            self.assertLessEqual(np.abs(primitive.sdf(points[1:])).min(), 1e-9)


class PolygonSdfTests(SimpleTestCase):
    """Tests for polygon obstacle distances (Feature 1.9)"""

    def test_square_values(self):
        square = Polygon(((-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)))
        np.testing.assert_allclose(square.sdf(np.array([[0.0, 0.0], [3.0, 0.0], [2.0, 2.0]])), [-1.0, 2.0, np.sqrt(2)])

    def test_matches_rectangle(self):
        """Test that a rectangle polygon agrees with the rectangle primitive"""
        rect = Primitive.rectangle(0.75, 0.4, offset=(0.2, -0.1))
        polygon = Polygon(tuple(map(tuple, rect.vertices())))
        points = random_points(np.random.default_rng(37), 1_000)
        np.testing.assert_allclose(polygon.sdf(points), rect.sdf(points), atol=1e-12)


class RoboCentricFieldTests(SimpleTestCase):
    """Tests for the controller-facing field (Feature 1.10)"""

    def test_analytic_mode(self):
        shape = l_shape()
        field = RoboCentricField.build(shape, ANALYTIC, delta=1e-4)
        value, gradient = field.evaluate((2.0, 0.0))
        self.assertAlmostEqual(float(value), 1.0)
        np.testing.assert_allclose(gradient, [1.0, 0.0], atol=1e-6)
        self.assertIsNone(field.grid)

    def test_grid_mode(self):
        shape = l_shape()
        field = RoboCentricField.build(shape, GRID, margin=1.0, resolution=0.05)
        points = random_points(np.random.default_rng(41), 200, -1.5, 1.5)
        np.testing.assert_allclose(field.value(points), sdf_union(shape, points), atol=0.025)

    def test_invalid_configuration(self):
        shape = l_shape()
        with self.assertRaises(ValueError):
            RoboCentricField(shape, 'voxel')
        with self.assertRaises(ValueError):
            RoboCentricField(shape, GRID)
        with self.assertRaises(ValueError):
            RoboCentricField(shape, ANALYTIC, delta=0.0)

import io

import numpy as np
from django.test import SimpleTestCase, override_settings
from scipy.spatial import cKDTree

from geometry.shapes import Pose2, Primitive, RobotShape, body_to_world, sdf_gradient_exact, world_to_body

from .dynamics import (
    SINGLE_INTEGRATOR, UNICYCLE, InputBounds, ObstacleState, RobotState, affine_fields, step_obstacle,
    step_robot,
)
from .qp import (
    CBF_ROW, CLF_ROW, INFEASIBLE, MAX_ITER, OPTIMAL, QpProblem, assemble, check_kkt, solve,
)
from .safety import CbfRow, Obstacle, barrier_gradients, barrier_value, cbf_rows
from .stability import Goal, clf_distance, clf_heading, clf_rows


def circle_robot(radius=1.0):
    return RobotShape((Primitive.circle(radius),))


def smooth_mask(shape, q_b, spread=2e-4, tol=1e-3):
    """Points whose exact field gradient is locally constant (no ridge nearby)."""
    center = sdf_gradient_exact(shape, q_b)
    keep = np.ones(len(q_b), dtype=bool)
    for offset in ([spread, 0], [-spread, 0], [0, spread], [0, -spread]):
        keep &= np.all(np.abs(sdf_gradient_exact(shape, q_b + np.array(offset)) - center) < tol, axis=-1)
    return keep


def dual_oracle(Q, q, G, h, iterations=20_000):
    """Accelerated projected gradient ascent on the QP dual, batched.

    Solves max_{lam >= 0} h.lam - 1/2 (G^T lam - q)^T Q^-1 (G^T lam - q) for a
    stack of problems min 1/2 z^T Q z + q.z s.t. G z >= h. Momentum restarts
    whenever it stops helping. Returns the dual values and primal points.
    """
    Qinv = np.linalg.inv(Q)
    step = 1.0 / (np.linalg.norm(G, ord=2, axis=(1, 2)) ** 2 / np.linalg.eigvalsh(Q)[:, 0])

    def primal(lam):
        return np.einsum('bij,bj->bi', Qinv, np.einsum('bmn,bm->bn', G, lam) - q)

    lam = np.zeros(h.shape)
    y = lam.copy()
    t = np.ones(len(h))
    for _ in range(iterations):
        gradient = h - np.einsum('bmn,bn->bm', G, primal(y))
        nxt = np.maximum(y + step[:, None] * gradient, 0.0)
        restart = np.einsum('bm,bm->b', nxt - y, nxt - lam) < 0.0
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t ** 2))
        momentum = np.where(restart, 0.0, (t - 1.0) / t_next)
        y = nxt + momentum[:, None] * (nxt - lam)
        t = np.where(restart, 1.0, t_next)
        lam = nxt

    z = primal(lam)
    w = np.einsum('bmn,bm->bn', G, lam) - q
    value = np.einsum('bm,bm->b', h, lam) - 0.5 * np.einsum('bi,bij,bj->b', w, Qinv, w)
    return value, z


class AffineFieldsTests(SimpleTestCase):
    """Tests for control-affine decompositions (Feature 2.1)"""

    def test_unicycle_heading_zero(self):
        f, g = affine_fields(RobotState(UNICYCLE, 0.0, 0.0, 0.0))
        np.testing.assert_array_equal(f, np.zeros(3))
        np.testing.assert_allclose(g, [[1, 0], [0, 0], [0, 1]])

    def test_unicycle_quarter_turn(self):
        _, g = affine_fields(RobotState(UNICYCLE, 0.0, 0.0, np.pi / 2))
        np.testing.assert_allclose(g[:, 0], [0, 1, 0], atol=1e-15)

    def test_single_integrator_identity(self):
        f, g = affine_fields(RobotState(SINGLE_INTEGRATOR, 1.0, 2.0))
        np.testing.assert_array_equal(f, np.zeros(2))
        np.testing.assert_array_equal(g, np.eye(2))

    def test_unknown_model(self):
        with self.assertRaises(ValueError):
            RobotState('bicycle', 0.0, 0.0)


class StepRobotTests(SimpleTestCase):
    """Tests for explicit Euler robot propagation (Feature 2.2)"""

    def test_single_integrator_step(self):
        state = step_robot(RobotState(SINGLE_INTEGRATOR, 0.0, 0.0), (1.0, 0.0), 0.1)
        self.assertAlmostEqual(state.x, 0.1)
        self.assertEqual(state.y, 0.0)

    def test_single_integrator_keeps_heading(self):
        """Test that a single integrator never changes its heading"""
        state = step_robot(RobotState(SINGLE_INTEGRATOR, 0.0, 0.0, np.pi), (1.0, -1.0), 0.1)
        self.assertEqual(state.theta, np.pi)

    def test_unicycle_straight(self):
        state = step_robot(RobotState(UNICYCLE, 0.0, 0.0, 0.0), (1.0, 0.0), 0.1)
        np.testing.assert_allclose(state.vector, [0.1, 0.0, 0.0])

    def test_unicycle_rotation(self):
        state = step_robot(RobotState(UNICYCLE, 0.0, 0.0, 0.0), (0.0, 1.0), 0.1)
        np.testing.assert_allclose(state.vector, [0.0, 0.0, 0.1])

    def test_unicycle_moves_along_heading(self):
        """Test that with zero turn rate the unicycle follows its heading line"""
        state = RobotState(UNICYCLE, 0.0, 0.0, 0.3)
        for _ in range(10):
            state = step_robot(state, (1.0, 0.0), 0.1)
        self.assertAlmostEqual(state.y, np.tan(0.3) * state.x, places=12)

    def test_euler_first_order(self):
        """Test that halving the step roughly halves the endpoint change"""
        def endpoint(dt):
            state = RobotState(UNICYCLE, 0.0, 0.0, 0.0)
            for _ in range(int(round(2.0 / dt))):
                state = step_robot(state, (1.0, 0.5), dt)
            return state.vector

        coarse = np.linalg.norm(endpoint(0.1) - endpoint(0.05))
        fine = np.linalg.norm(endpoint(0.05) - endpoint(0.025))
        self.assertTrue(1.5 < coarse / fine < 2.5)

    def test_invalid_step(self):
        with self.assertRaises(ValueError):
            step_robot(RobotState(SINGLE_INTEGRATOR, 0.0, 0.0), (1.0, 0.0), 0.0)
        with self.assertRaises(ValueError):
            step_robot(RobotState(SINGLE_INTEGRATOR, 0.0, 0.0), (1.0, 0.0, 0.0), 0.1)

    def test_wrapped_heading(self):
        self.assertAlmostEqual(RobotState(UNICYCLE, 0, 0, 3 * np.pi).wrapped_theta, np.pi)
        self.assertAlmostEqual(RobotState(UNICYCLE, 0, 0, -np.pi).wrapped_theta, np.pi)
        self.assertAlmostEqual(RobotState(UNICYCLE, 0, 0, 2 * np.pi + 0.5).wrapped_theta, 0.5)


class StepObstacleTests(SimpleTestCase):
    """Tests for obstacle propagation (Feature 2.3)"""

    def test_dynamic_obstacle_step(self):
        state = step_obstacle(ObstacleState((6.0, 3.5), (-0.6, 0.0)), 0.1)
        np.testing.assert_allclose(state.position, [5.94, 3.5])
        np.testing.assert_array_equal(state.velocity, [-0.6, 0.0])

    def test_linear_in_time(self):
        """Test that zero acceleration gives exactly linear motion"""
        state = ObstacleState((4.5, 7.5), (0.55, 0.0))
        for _ in range(50):
            state = step_obstacle(state, 0.1)
        np.testing.assert_allclose(state.position, [4.5 + 50 * 0.1 * 0.55, 7.5], atol=1e-12)
        np.testing.assert_array_equal(state.velocity, [0.55, 0.0])

    def test_static_obstacle(self):
        state = step_obstacle(ObstacleState((5.0, 5.0)), 0.1)
        np.testing.assert_array_equal(state.position, [5.0, 5.0])

    def test_acceleration(self):
        state = step_obstacle(ObstacleState((0.0, 0.0), (1.0, 0.0), (0.0, 2.0)), 0.5)
        np.testing.assert_allclose(state.position, [0.5, 0.0])
        np.testing.assert_allclose(state.velocity, [1.0, 1.0])

    def test_destination_stop(self):
        """Test that an obstacle with a destination halts there"""
        state = ObstacleState((6.0, 3.5), (-0.6, 0.0), destination=(5.9, 3.5))
        state = step_obstacle(state, 0.1)
        np.testing.assert_allclose(state.position, [5.94, 3.5])
        state = step_obstacle(state, 0.1)
        np.testing.assert_array_equal(state.position, [5.9, 3.5])
        np.testing.assert_array_equal(state.velocity, [0.0, 0.0])
        self.assertFalse(state.moving)
        np.testing.assert_array_equal(step_obstacle(state, 0.1).position, [5.9, 3.5])

    def test_rejects_bad_vectors(self):
        with self.assertRaises(ValueError):
            ObstacleState((0.0, np.nan))
        with self.assertRaises(ValueError):
            ObstacleState((0.0, 0.0), (1.0, 0.0, 0.0))


class InputBoundsTests(SimpleTestCase):
    """Tests for admissible input sets (Feature 2.4)"""

    def test_symmetric(self):
        bounds = InputBounds.symmetric((2.0, 1.0))
        np.testing.assert_array_equal(bounds.u_min, [-2.0, -1.0])
        self.assertTrue(bounds.contains((2.0, -1.0)))
        self.assertFalse(bounds.contains((2.1, 0.0)))
        self.assertTrue(bounds.contains((2.0 + 1e-9, 0.0), tol=1e-6))

    def test_inverted_bounds_rejected(self):
        with self.assertRaises(ValueError):
            InputBounds((0.5, 0.5), (-0.5, 1.0))


class DistanceClfTests(SimpleTestCase):
    """Tests for the distance CLF (Feature 3.1)"""

    def test_at_goal(self):
        value, gradient = clf_distance(RobotState(SINGLE_INTEGRATOR, 1.0, 2.0), Goal(1.0, 2.0))
        self.assertEqual(value, 0.0)
        np.testing.assert_array_equal(gradient, [0.0, 0.0])

    def test_substitution(self):
        value, gradient = clf_distance(RobotState(SINGLE_INTEGRATOR, 0.0, 0.0), Goal(3.0, 4.0))
        self.assertEqual(value, 25.0)
        np.testing.assert_array_equal(gradient, [-6.0, -8.0])

    def test_finite_difference(self):
        rng = np.random.default_rng(43)
        goal = Goal(1.5, -0.5)
        step = 1e-6
        for x, y in rng.uniform(-3, 3, size=(100, 2)):
            _, gradient = clf_distance(RobotState(SINGLE_INTEGRATOR, x, y), goal)
            numeric = [
                (clf_distance(RobotState(SINGLE_INTEGRATOR, x + step, y), goal)[0]
                 - clf_distance(RobotState(SINGLE_INTEGRATOR, x - step, y), goal)[0]) / (2 * step),
                (clf_distance(RobotState(SINGLE_INTEGRATOR, x, y + step), goal)[0]
                 - clf_distance(RobotState(SINGLE_INTEGRATOR, x, y - step), goal)[0]) / (2 * step),
            ]
            np.testing.assert_allclose(gradient, numeric, atol=1e-6)


class HeadingClfTests(SimpleTestCase):
    """Tests for the heading CLF (Feature 3.2)"""

    def test_goal_dead_ahead(self):
        value, _ = clf_heading(RobotState(UNICYCLE, 0.0, 0.0, 0.0), Goal(5.0, 0.0))
        self.assertEqual(value, 0.0)

    def test_goal_abeam(self):
        value, _ = clf_heading(RobotState(UNICYCLE, 0.0, 0.0, 0.0), Goal(0.0, 1.0))
        self.assertAlmostEqual(value, 1.0)

    def test_goal_behind_also_vanishes(self):
        """Test that a goal straight behind the robot gives zero as well"""
        value, _ = clf_heading(RobotState(UNICYCLE, 0.0, 0.0, 0.0), Goal(-4.0, 0.0))
        self.assertAlmostEqual(value, 0.0)

    def test_finite_difference(self):
        """Test the gradient against central differences at random states"""
        rng = np.random.default_rng(47)
        step = 1e-6
        for x, y, theta, gx, gy in rng.uniform(-3, 3, size=(1_000, 5)):
            goal = Goal(gx, gy)
            _, gradient = clf_heading(RobotState(UNICYCLE, x, y, theta), goal)
            numeric = []
            for axis in range(3):
                e = np.zeros(3)
                e[axis] = step
                plus = clf_heading(RobotState(UNICYCLE, *(np.array([x, y, theta]) + e)), goal)[0]
                minus = clf_heading(RobotState(UNICYCLE, *(np.array([x, y, theta]) - e)), goal)[0]
                numeric.append((plus - minus) / (2 * step))
            np.testing.assert_allclose(gradient, numeric, atol=1e-6)

    def test_single_integrator_rejected(self):
        with self.assertRaises(ValueError):
            clf_heading(RobotState(SINGLE_INTEGRATOR, 0.0, 0.0), Goal(1.0, 1.0))


class ClfRowTests(SimpleTestCase):
    """Tests for relaxed CLF constraint rows (Feature 3.3)"""

    def test_unicycle_distance_row(self):
        rows = clf_rows(RobotState(UNICYCLE, 0.0, 0.0, 0.0), Goal(1.0, 0.0), (1.0, 3.0))
        self.assertEqual(len(rows), 2)
        np.testing.assert_allclose(rows[0].a_u, [-2.0, 0.0])
        self.assertAlmostEqual(rows[0].b, 1.0)
        self.assertEqual([row.slack_index for row in rows], [0, 1])

    def test_single_integrator_at_goal(self):
        rows = clf_rows(RobotState(SINGLE_INTEGRATOR, 2.0, 2.0), Goal(2.0, 2.0), (1.0, 3.0))
        self.assertEqual(len(rows), 1)
        np.testing.assert_array_equal(rows[0].a_u, [0.0, 0.0])
        self.assertEqual(rows[0].b, 0.0)

    def test_structural_zeros(self):
        """Test that the distance row never uses the turn rate and the heading row never the speed"""
        rng = np.random.default_rng(53)
        for x, y, theta in rng.uniform(-3, 3, size=(200, 3)):
            distance, heading = clf_rows(RobotState(UNICYCLE, x, y, theta), Goal(1.0, 2.0), (1.0, 3.0))
            self.assertEqual(distance.a_u[1], 0.0)
            self.assertAlmostEqual(heading.a_u[0], 0.0, places=12)

    def test_lie_derivative(self):
        """Test that rows predict dV/dt along an Euler micro-step"""
        rng = np.random.default_rng(59)
        goal = Goal(2.0, -1.0)
        eps = 1e-6
        for x, y, theta, v, w in rng.uniform(-2, 2, size=(200, 5)):
            state = RobotState(UNICYCLE, x, y, theta)
            nxt = step_robot(state, (v, w), eps)
            rows = clf_rows(state, goal, (1.0, 1.0))
            values = [clf_distance(state, goal)[0], clf_heading(state, goal)[0]]
            nxt_values = [clf_distance(nxt, goal)[0], clf_heading(nxt, goal)[0]]
            for row, before, after in zip(rows, values, nxt_values):
                lf = row.b - 1.0 * before
                self.assertAlmostEqual(lf, 0.0, places=9)
                predicted = row.a_u @ [v, w] + lf
                self.assertAlmostEqual(predicted, (after - before) / eps, delta=1e-4 * max(1.0, abs(predicted)))

    def test_rates_must_be_positive(self):
        with self.assertRaises(ValueError):
            clf_rows(RobotState(UNICYCLE, 0.0, 0.0), Goal(1.0, 0.0), (0.0, 3.0))


class BarrierValueTests(SimpleTestCase):
    """Tests for barrier values (Feature 4.1)"""

    def test_on_boundary(self):
        shape = RobotShape.l_shape()
        pose = Pose2(1.0, 1.0, np.pi / 4)
        q_w = body_to_world(pose, (1.0, 0.1))
        self.assertAlmostEqual(float(barrier_value(shape, pose, q_w)), 0.0, places=12)
        self.assertAlmostEqual(float(barrier_value(circle_robot(), Pose2(0, 0, 0), (0.0, 1.0))), 0.0)

    def test_circle_distance(self):
        self.assertAlmostEqual(float(barrier_value(circle_robot(), Pose2(0, 0, 0), (3.0, 0.0))), 2.0)

    def test_l_shape_oracle(self):
        """Test rotated L-shape barriers against brute-force boundary distances"""
        shape = RobotShape.l_shape()
        pose = Pose2(1.0, 1.0, np.pi / 4)
        corners = []
        for primitive in shape.primitives:
            vertices = primitive.vertices()
            for a, b in zip(vertices, np.roll(vertices, -1, axis=0)):
                t = np.linspace(0.0, 1.0, int(np.ceil(np.linalg.norm(b - a) / 1e-4)), endpoint=False)[:, None]
                corners.append(a + t * (b - a))
        boundary = np.vstack(corners)
        boundary = boundary[~shape.contains(boundary)]
        tree = cKDTree(body_to_world(pose, boundary))

        points = np.random.default_rng(61).uniform(-2.0, 4.0, size=(2_000, 2))
        h = barrier_value(shape, pose, points)
        oracle, _ = tree.query(points)
        inside = shape.contains(world_to_body(pose, points))
        band = np.abs(h) > 1e-9
        np.testing.assert_array_equal((h < 0)[band], inside[band])
        far = ~inside & (oracle > 0.1)
        np.testing.assert_allclose(h[far], oracle[far], atol=1e-6)


class BarrierGradientTests(SimpleTestCase):
    """Tests for barrier chain-rule gradients (Feature 4.2)"""

    def finite_differences(self, shape, pose, q_w, step=1e-6):
        def h(x, y, theta, q):
            return float(barrier_value(shape, Pose2(x, y, theta), q))

        x, y, theta = pose.x, pose.y, pose.theta
        q = np.asarray(q_w, dtype=float)
        dp = [
            (h(x + step, y, theta, q) - h(x - step, y, theta, q)) / (2 * step),
            (h(x, y + step, theta, q) - h(x, y - step, theta, q)) / (2 * step),
        ]
        dtheta = (h(x, y, theta + step, q) - h(x, y, theta - step, q)) / (2 * step)
        dq = [
            (h(x, y, theta, q + [step, 0]) - h(x, y, theta, q - [step, 0])) / (2 * step),
            (h(x, y, theta, q + [0, step]) - h(x, y, theta, q - [0, step])) / (2 * step),
        ]
        return np.array(dp), dtheta, np.array(dq)

    def test_translation_antisymmetry(self):
        rng = np.random.default_rng(67)
        pose = Pose2(0.3, -0.2, 1.1)
        dh_dp, _, dh_dqw = barrier_gradients(RobotShape.l_shape(), pose, rng.uniform(-3, 3, size=(50, 2)))
        np.testing.assert_array_equal(dh_dp, -dh_dqw)

    def test_circle_has_no_heading_sensitivity(self):
        _, dh_dtheta, _ = barrier_gradients(circle_robot(), Pose2(1.0, 2.0, 0.4), (3.0, -1.0))
        self.assertAlmostEqual(float(dh_dtheta), 0.0, places=6)

    def test_l_shape_reference_configuration(self):
        shape = RobotShape.l_shape()
        pose = Pose2(2.0, 1.0, 0.7)
        dh_dp, dh_dtheta, dh_dqw = barrier_gradients(shape, pose, (3.5, 2.0))
        fd_dp, fd_dtheta, fd_dq = self.finite_differences(shape, pose, (3.5, 2.0))
        np.testing.assert_allclose(dh_dp, fd_dp, atol=1e-4)
        self.assertAlmostEqual(float(dh_dtheta), fd_dtheta, delta=1e-4)
        np.testing.assert_allclose(dh_dqw, fd_dq, atol=1e-4)

    def test_random_configurations(self):
        """Test chain-rule gradients at random configurations away from ridges"""
        shape = RobotShape.l_shape()
        rng = np.random.default_rng(71)
        checked = 0
        for x, y, theta, qx, qy in rng.uniform(-2.5, 2.5, size=(1_000, 5)):
            pose = Pose2(x, y, theta)
            q_w = np.array([qx, qy])
            if not smooth_mask(shape, world_to_body(pose, q_w[None]))[0]:
                continue
            dh_dp, dh_dtheta, dh_dqw = barrier_gradients(shape, pose, q_w)
            fd_dp, fd_dtheta, fd_dq = self.finite_differences(shape, pose, q_w)
            np.testing.assert_allclose(dh_dp, fd_dp, atol=1e-4)
            self.assertAlmostEqual(float(dh_dtheta), fd_dtheta, delta=1e-4)
            np.testing.assert_allclose(dh_dqw, fd_dq, atol=1e-4)
            checked += 1
        self.assertGreater(checked, 900)


class CbfRowTests(SimpleTestCase):
    """Tests for time-varying CBF rows (Feature 4.3)"""

    def test_static_circle_row(self):
        """Test the hand-derived row u_x <= 2 for a point ahead of a unit circle"""
        obstacle = Obstacle(0, Primitive.circle(0.1), ObstacleState((3.0, 0.0)), np.array([[0.0, 0.0]]))
        state = RobotState(SINGLE_INTEGRATOR, 0.0, 0.0)
        (row,) = cbf_rows(circle_robot(), state, [obstacle], 1.0)
        np.testing.assert_allclose(row.a_u, [-1.0, 0.0], atol=1e-8)
        self.assertAlmostEqual(row.b, 2.0)
        self.assertAlmostEqual(row.h, 2.0)

        # One Euler step at u_x shrinks h by dt * u_x
        moved = step_robot(state, (0.5, 0.0), 0.1)
        self.assertAlmostEqual(float(barrier_value(circle_robot(), moved.pose, (3.0, 0.0))), 2.0 - 0.05)

    def test_static_obstacle_has_no_time_term(self):
        shape = RobotShape.l_shape()
        obstacle = Obstacle.from_shape(0, Primitive.circle(1.0), ObstacleState((4.0, 3.0)), 12)
        for row in cbf_rows(shape, RobotState(UNICYCLE, 0.0, 0.0, 0.3), [obstacle], 1.0):
            self.assertAlmostEqual(row.b, row.h)

    def test_moving_obstacle_time_term(self):
        obstacle = Obstacle(0, Primitive.circle(0.1), ObstacleState((3.0, 0.0), (-0.5, 0.0)), np.array([[0.0, 0.0]]))
        (row,) = cbf_rows(circle_robot(), RobotState(SINGLE_INTEGRATOR, 0.0, 0.0), [obstacle], 1.0)
        # dh/dq_w . v_o = (1, 0) . (-0.5, 0)
        self.assertAlmostEqual(row.b, 2.0 - 0.5, places=7)

    def test_row_count_and_order(self):
        obstacles = [
            Obstacle.from_shape(i, Primitive.rectangle(0.75, 0.75), ObstacleState((6.0 + i, 3.0)), 24)
            for i in range(3)
        ]
        rows = cbf_rows(RobotShape.l_shape(), RobotState(UNICYCLE, 0.0, 0.0), obstacles, 1.0)
        self.assertEqual(len(rows), 72)
        self.assertEqual([(row.obstacle_id, row.point_index) for row in rows[:2]], [(0, 0), (0, 1)])
        self.assertEqual((rows[-1].obstacle_id, rows[-1].point_index), (2, 23))

    def test_hdot_prediction(self):
        """Test that rows predict dh/dt under a joint robot and obstacle micro-step"""
        shape = RobotShape.l_shape()
        rng = np.random.default_rng(73)
        eps = 1e-6
        checked = 0
        for sample in rng.uniform(-2.5, 2.5, size=(1_000, 9)):
            x, y, theta, qx, qy, v, w, vox, voy = sample
            state = RobotState(UNICYCLE, x, y, theta)
            q_w = np.array([qx, qy])
            if not smooth_mask(shape, world_to_body(state.pose, q_w[None]))[0]:
                continue
            obstacle = Obstacle(0, Primitive.circle(0.1), ObstacleState(q_w, (vox, voy)), np.zeros((1, 2)))
            (row,) = cbf_rows(shape, state, [obstacle], 1.0)
            predicted = row.a_u @ [v, w] + (row.b - row.h)
            moved = step_robot(state, (v, w), eps)
            h0 = float(barrier_value(shape, state.pose, q_w))
            h1 = float(barrier_value(shape, moved.pose, q_w + eps * np.array([vox, voy])))
            self.assertAlmostEqual(predicted, (h1 - h0) / eps, delta=1e-3 * max(1.0, abs(predicted)))
            checked += 1
        self.assertGreater(checked, 900)

    def test_alpha_must_be_positive(self):
        with self.assertRaises(ValueError):
            cbf_rows(circle_robot(), RobotState(SINGLE_INTEGRATOR, 0.0, 0.0), [], 0.0)


class QpSolveTests(SimpleTestCase):
    """Tests for the dense QP solver (Feature 5.2)"""

    def unbounded(self, n):
        return np.full(n, -np.inf), np.full(n, np.inf)

    def test_scalar_lower_bound_row(self):
        problem = QpProblem([[1.0]], [0.0], [[1.0]], [1.0], *self.unbounded(1), n_controls=1)
        solution = solve(problem)
        self.assertEqual(solution.status, OPTIMAL)
        self.assertAlmostEqual(solution.z[0], 1.0, places=12)
        self.assertAlmostEqual(solution.duals[0], 1.0, places=12)

    def test_symmetric_row(self):
        problem = QpProblem(np.eye(2), np.zeros(2), [[1.0, 1.0]], [2.0], *self.unbounded(2))
        solution = solve(problem)
        np.testing.assert_allclose(solution.z, [1.0, 1.0], atol=1e-12)
        self.assertAlmostEqual(solution.duals[0], 1.0, places=12)

    def test_upper_bound_dual(self):
        """Test the sign convention of bound multipliers"""
        problem = QpProblem([[1.0]], [-3.0], np.zeros((0, 1)), [], [-np.inf], [1.0], n_controls=1)
        solution = solve(problem)
        self.assertAlmostEqual(solution.z[0], 1.0, places=12)
        self.assertAlmostEqual(solution.upper_duals[0], 2.0, places=12)
        self.assertEqual(solution.lower_duals[0], 0.0)
        self.assertTrue(check_kkt(problem, solution).passed(1e-9))

    def test_heavy_slack_weight_certified(self):
        """Test that a CLF row held open by a heavily weighted slack still passes the KKT certificate"""
        problem = QpProblem(
            np.diag([1.0, 1.0, 2000.0]), np.zeros(3), [[24.0, 20.0, 1.0], [1.0, 1.0, 0.0]], [244.0, -10.0],
            [-2.0, -2.0, -np.inf], [2.0, 2.0, np.inf], row_kinds=(CLF_ROW, CBF_ROW),
        )
        solution = solve(problem)
        self.assertEqual(solution.status, OPTIMAL)
        np.testing.assert_allclose(solution.z, [2.0, 2.0, 156.0], atol=1e-9)
        self.assertAlmostEqual(solution.duals[0] / 312000.0, 1.0, places=9)
        self.assertEqual(solution.duals[1], 0.0)
        self.assertAlmostEqual(solution.upper_duals[0], 24.0 * 312000.0 - 2.0, delta=1e-3)
        report = check_kkt(problem, solution)
        self.assertTrue(report.passed(1e-6))
        self.assertEqual(solution.kkt_residual, report.worst)

    def test_contradictory_rows(self):
        """Test that an empty feasible set is reported as infeasible"""
        problem = QpProblem([[1.0]], [0.0], [[1.0], [-1.0]], [1.0, 0.0], [-5.0], [5.0], n_controls=1)
        self.assertEqual(solve(problem).status, INFEASIBLE)

    def test_constant_row_infeasible(self):
        problem = QpProblem(np.eye(2), np.zeros(2), [[0.0, 0.0]], [0.5], *self.unbounded(2))
        self.assertEqual(solve(problem).status, INFEASIBLE)

    def test_iteration_limit(self):
        problem = QpProblem(np.eye(2), np.zeros(2), [[1.0, 1.0]], [2.0], *self.unbounded(2))
        self.assertEqual(solve(problem, max_iter=0).status, MAX_ITER)

    @override_settings(QP_MAX_ITER=0)
    def test_iteration_limit_from_settings(self):
        problem = QpProblem(np.eye(2), np.zeros(2), [[1.0, 1.0]], [2.0], *self.unbounded(2))
        self.assertEqual(solve(problem).status, MAX_ITER)

    def test_deterministic(self):
        rng = np.random.default_rng(79)
        A = rng.normal(size=(30, 4))
        problem = QpProblem(np.eye(4), rng.normal(size=4), A, A @ rng.uniform(-1, 1, 4) - 0.5, *self.unbounded(4))
        first, second = solve(problem), solve(problem)
        np.testing.assert_array_equal(first.z, second.z)
        np.testing.assert_array_equal(first.duals, second.duals)

    def test_random_problems_against_oracle(self):
        """Test 500 random feasible QPs against an accelerated dual projected-gradient oracle"""
        rng = np.random.default_rng(83)
        count, width, rows = 500, 4, 60
        Qs = np.zeros((count, width, width))
        qs = np.zeros((count, width))
        G = np.zeros((count, rows + 2 * width, width))
        h = np.full((count, rows + 2 * width), -1.0)
        problems = []
        for k in range(count):
            n = int(rng.integers(2, width + 1))
            m = int(rng.integers(1, rows + 1))
            M = rng.normal(size=(n, n))
            Q = M @ M.T / n + np.eye(n)
            q = rng.normal(scale=3.0, size=n)
            A = rng.normal(size=(m, n))
            A /= np.linalg.norm(A, axis=1, keepdims=True)
            z0 = rng.uniform(-1.0, 1.0, size=n)
            b = A @ z0 - rng.uniform(0.0, 1.0, size=m)
            lb, ub = np.full(n, -3.0), np.full(n, 3.0)
            problems.append(QpProblem(Q, q, A, b, lb, ub, n_controls=n))

            # Pad to a common size: extra variables are decoupled and unconstrained
            Qs[k] = np.eye(width)
            Qs[k, :n, :n] = Q
            qs[k, :n] = q
            G[k, :m, :n] = A
            h[k, :m] = b
            G[k, rows:rows + n, :n] = np.eye(n)
            h[k, rows:rows + n] = lb
            G[k, rows + width:rows + width + n, :n] = -np.eye(n)
            h[k, rows + width:rows + width + n] = -ub

        oracle, _ = dual_oracle(Qs, qs, G, h)
        for problem, expected in zip(problems, oracle):
            solution = solve(problem)
            self.assertEqual(solution.status, OPTIMAL)
            self.assertAlmostEqual(problem.objective(solution.z), expected, delta=1e-6)
            self.assertTrue(check_kkt(problem, solution).passed(1e-6))


class QpAssembleTests(SimpleTestCase):
    """Tests for CLF-CBF-QP assembly (Feature 5.1)"""

    weights = (np.eye(2), 1000.0 * np.eye(2))

    def test_at_goal_without_obstacles(self):
        state = RobotState(UNICYCLE, 1.0, 1.0, 0.2)
        problem = assemble(clf_rows(state, Goal(1.0, 1.0), (1.0, 3.0)), [], InputBounds.symmetric((2.0, 1.0)), self.weights)
        solution = solve(problem)
        np.testing.assert_allclose(solution.z, np.zeros(4), atol=1e-12)
        self.assertAlmostEqual(problem.objective(solution.z), 0.0)

    def test_single_integrator_layout(self):
        state = RobotState(SINGLE_INTEGRATOR, 0.0, 0.0)
        problem = assemble(clf_rows(state, Goal(10.0, 0.0), (1.0, 3.0)), [], InputBounds.symmetric((3.0, 3.0)), self.weights)
        self.assertEqual(problem.n, 3)
        np.testing.assert_array_equal(problem.lb, [-3.0, -3.0, -np.inf])
        np.testing.assert_array_equal(np.diag(problem.Q), [1.0, 1.0, 2000.0])

    def test_cbf_caps_clf_preference(self):
        """Test u_x* = min(CLF preference, bound, CBF cap)"""
        state = RobotState(SINGLE_INTEGRATOR, 0.0, 0.0)
        cbf = [CbfRow(np.array([-1.0, 0.0]), 2.0, 2.0, 0, 0)]
        problem = assemble(clf_rows(state, Goal(10.0, 0.0), (1.0, 3.0)), cbf, InputBounds.symmetric((3.0, 3.0)), self.weights)
        solution = solve(problem)
        self.assertEqual(solution.status, OPTIMAL)
        np.testing.assert_allclose(solution.z, [2.0, 0.0, 60.0], atol=1e-9)
        self.assertGreater(solution.duals[1], 0.0)
        self.assertTrue(check_kkt(problem, solution).passed())

    def test_row_counts(self):
        state = RobotState(UNICYCLE, 0.0, 0.0)
        obstacles = [
            Obstacle.from_shape(i, Primitive.rectangle(0.5, 0.5), ObstacleState((5.0, 2.0 * i)), 24)
            for i in range(2)
        ]
        problem = assemble(
            clf_rows(state, Goal(8.0, 1.0), (1.0, 3.0)),
            cbf_rows(RobotShape.l_shape(), state, obstacles, 1.0),
            InputBounds.symmetric((2.0, 1.0)),
            self.weights,
        )
        self.assertEqual(problem.n, 4)
        self.assertEqual(problem.m, 50)
        self.assertEqual(problem.row_kinds.count(CLF_ROW), 2)
        self.assertEqual(problem.row_kinds.count(CBF_ROW), 48)
        self.assertEqual(int(np.isfinite(problem.lb).sum() + np.isfinite(problem.ub).sum()), 4)

    def test_slack_absorbs_conflict(self):
        """Test that CBF rows hold exactly while the CLF slack gives way"""
        state = RobotState(SINGLE_INTEGRATOR, 0.0, 0.0)
        cbf = [CbfRow(np.array([-1.0, 0.0]), 0.0, 0.05, 0, 0)]
        problem = assemble(clf_rows(state, Goal(6.0, 0.0), (1.0, 3.0)), cbf, InputBounds.symmetric((2.0, 2.0)), self.weights)
        solution = solve(problem)
        self.assertGreaterEqual(cbf[0].margin(solution.z[:2]), -1e-9)
        self.assertGreater(solution.z[2], 0.0)

    def test_slack_weight_never_breaks_safety(self):
        """Test that scaling H leaves CBF rows satisfied"""
        state = RobotState(UNICYCLE, 0.0, 0.0, 0.5)
        obstacles = [Obstacle.from_shape(0, Primitive.circle(1.0), ObstacleState((2.5, 1.5), (-0.4, 0.0)), 24)]
        rows = cbf_rows(RobotShape.l_shape(), state, obstacles, 1.0)
        for scale in (1.0, 10.0):
            weights = (np.eye(2), scale * 1000.0 * np.eye(2))
            problem = assemble(clf_rows(state, Goal(6.0, 3.0), (1.0, 3.0)), rows, InputBounds.symmetric((2.0, 1.0)), weights)
            solution = solve(problem)
            self.assertEqual(solution.status, OPTIMAL)
            self.assertGreaterEqual(min(row.margin(solution.z[:2]) for row in rows), -1e-9)

    def test_rejects_bad_inputs(self):
        state = RobotState(SINGLE_INTEGRATOR, 0.0, 0.0)
        clf = clf_rows(state, Goal(1.0, 0.0), (1.0, 3.0))
        bounds = InputBounds.symmetric((1.0, 1.0))
        with self.assertRaises(ValueError):
            assemble(clf, [], bounds, (np.zeros((2, 2)), np.eye(2)))
        with self.assertRaises(ValueError):
            assemble(clf, [CbfRow(np.zeros(3), 0.0, 1.0, 0, 0)], bounds, self.weights)
        with self.assertRaises(ValueError):
            assemble(clf, [], InputBounds((0.5, 0.5), (-0.5, -0.5)), self.weights)


class KktCheckTests(SimpleTestCase):
    """Tests for the post-hoc KKT certificate (Feature 5.3)"""

    def test_detects_wrong_point(self):
        problem = QpProblem(np.eye(2), np.zeros(2), [[1.0, 1.0]], [2.0], np.full(2, -np.inf), np.full(2, np.inf))
        solution = solve(problem)
        self.assertTrue(check_kkt(problem, solution).passed(1e-9))
        shifted = type(solution)(
            solution.z + 0.1, solution.duals, solution.lower_duals, solution.upper_duals,
            solution.status, solution.kkt_residual, solution.iterations,
        )
        report = check_kkt(problem, shifted)
        self.assertFalse(report.passed(1e-6))
        self.assertGreater(report.stationarity, 0.05)


class QpDumpTests(SimpleTestCase):
    """Tests for plain-text QP dumps (Feature 5.4)"""

    def test_dump_layout(self):
        problem = QpProblem(np.eye(2), np.zeros(2), [[1.0, 1.0]], [2.0], [-1.0, -1.0], [1.0, 1.0], row_kinds=('cbf',))
        stream = io.StringIO()
        problem.dump(stream)
        lines = stream.getvalue().splitlines()
        self.assertEqual(lines[0], "# qp n=2 m=1 n_controls=2")
        self.assertIn("cbf 1 1 >= 2", lines)
        self.assertEqual(lines[-1], "1 1")

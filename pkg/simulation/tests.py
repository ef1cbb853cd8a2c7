import io
import json
import math
import os
import tempfile
import xml.etree.ElementTree as ET
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings

from control.dynamics import SINGLE_INTEGRATOR, UNICYCLE, InputBounds, ObstacleState, RobotState
from control.qp import OPTIMAL, QpFailure
from control.safety import Obstacle
from control.stability import Goal
from geometry.fields import GRID
from geometry.shapes import Polygon, Primitive, RobotShape

from . import plots
from .config import ScenarioConfig
from .loader import find_scenario, load_scenario, parse_scenario, with_overrides
from .logs import COLUMNS, load_csv, read_csv, save_csv, write_csv
from .runner import (
    GOAL_REACHED, INFEASIBLE_ABORT, TIMEOUT, ControllerParams, UnsafeInitialState, control_step,
    initial_clearance, run_scenario,
)


def circle_robot(radius=0.5):
    return RobotShape((Primitive.circle(radius),))


def minimal_document(**sections):
    """A small valid scenario: a round single integrator driving 3 m east."""
    document = {
        'robot': {
            'model': 'single_integrator',
            'shape': [{'kind': 'circle', 'radius': 0.5}],
            'start': [0.0, 0.0],
            'goal': [3.0, 0.0],
            'u_max': [2.0, 2.0],
        },
    }
    document.update(sections)
    return document


def parse(document, name='test'):
    return parse_scenario(json.dumps(document), name=name)


def csv_text(log):
    stream = io.StringIO()
    write_csv(log, stream)
    return stream.getvalue()


def validation_messages(callable_, *args):
    try:
        callable_(*args)
    except ValidationError as e:
        return e.messages
    raise AssertionError("ValidationError not raised")


def bundled_document(name):
    return json.loads(find_scenario(name).read_text())


class ControlStepTests(SimpleTestCase):
    """Tests for one controller step (Feature 6.1)"""

    def setUp(self):
        self.params = ControllerParams()
        self.bounds = InputBounds.symmetric([2.0, 2.0])

    def test_unicycle_at_goal_without_obstacles(self):
        """Test that a unicycle sitting on its goal gets zero input"""
        shape = circle_robot()
        state = RobotState(UNICYCLE, 3.0, 4.0, 0.3)
        u, delta, diagnostics = control_step(
            state, [], Goal(3.0, 4.0), self.params, self.bounds, self.params.build_field(shape),
        )
        np.testing.assert_allclose(u, [0.0, 0.0], atol=1e-6)
        np.testing.assert_allclose(delta, [0.0, 0.0], atol=1e-6)
        self.assertEqual(diagnostics.min_h, math.inf)
        self.assertEqual(diagnostics.min_h_per_obstacle, ())

    def test_single_integrator_matches_analytic_clf_qp(self):
        """Test that far from obstacles the input equals the closed-form CLF-QP optimum"""
        shape = circle_robot()
        state = RobotState(SINGLE_INTEGRATOR, 0.0, 0.0)
        u, delta, _ = control_step(
            state, [], Goal(1.0, 1.0), self.params, self.bounds, self.params.build_field(shape),
        )
        # min a^2 + p (2 - 4a)^2 along the diagonal
        p = self.params.slack_weight
        a = 16.0 * p / (2.0 + 32.0 * p)
        np.testing.assert_allclose(u, [a, a], atol=1e-6)
        self.assertAlmostEqual(delta[0], 2.0 - 4.0 * a, places=6)
        self.assertEqual(delta[1], 0.0)

    def test_single_integrator_saturates_far_from_goal(self):
        """Test that a distant north-east goal drives both inputs to their bound"""
        shape = circle_robot()
        state = RobotState(SINGLE_INTEGRATOR, 0.0, 0.0)
        u, delta, _ = control_step(
            state, [], Goal(10.0, 10.0), self.params, self.bounds, self.params.build_field(shape),
        )
        np.testing.assert_allclose(u, [2.0, 2.0], atol=1e-6)
        self.assertGreater(delta[0], 0.0)

    def test_near_contact_row_is_active(self):
        """Test that an approaching point 5 cm from the robot activates its CBF row"""
        shape = circle_robot(0.5)
        obstacle = Obstacle.from_shape(
            0, Primitive.rectangle(0.5, 0.5), ObstacleState((1.05, 0.0), (-0.5, 0.0)), 8,
        )
        state = RobotState(SINGLE_INTEGRATOR, 0.0, 0.0)
        u, _, diagnostics = control_step(
            state, [obstacle], Goal(5.0, 0.0), self.params, self.bounds, self.params.build_field(shape),
        )
        self.assertAlmostEqual(diagnostics.min_h, 0.05, places=9)
        closest = int(np.argmin([row.h for row in diagnostics.cbf_rows]))
        dual = diagnostics.duals[len(diagnostics.clf_rows) + closest]
        self.assertGreater(dual, 0.0)
        # -u_x - 0.5 >= -alpha * 0.05
        np.testing.assert_allclose(u, [-0.45, 0.0], atol=1e-6)
        self.assertAlmostEqual(diagnostics.cbf_margin(u), 0.0, places=6)
        self.assertTrue(diagnostics.kkt.passed(1e-6))

    def test_repeatable(self):
        """Test that the same inputs give the same output"""
        shape = RobotShape.l_shape()
        obstacle = Obstacle.from_shape(0, Primitive.circle(1.0), ObstacleState((4.0, 3.0), (0.0, -0.5)), 24)
        state = RobotState(UNICYCLE, 0.5, 0.5, 0.4)
        field = self.params.build_field(shape)
        first = control_step(state, [obstacle], Goal(12.0, 10.0), self.params, self.bounds, field)
        second = control_step(state, [obstacle], Goal(12.0, 10.0), self.params, self.bounds, field)
        np.testing.assert_array_equal(first[0], second[0])
        np.testing.assert_array_equal(first[1], second[1])

    def test_infeasible_step_raises(self):
        """Test that an obstacle closing faster than the robot can retreat raises QpFailure"""
        shape = circle_robot(0.5)
        obstacle = Obstacle.from_shape(0, Primitive.circle(0.5), ObstacleState((3.0, 0.0), (-5.0, 0.0)), 24)
        state = RobotState(SINGLE_INTEGRATOR, 0.0, 0.0)
        with self.assertRaises(QpFailure) as ctx:
            control_step(
                state, [obstacle], Goal(-3.0, 0.0), self.params, InputBounds.symmetric([0.1, 0.1]),
                self.params.build_field(shape),
            )
        self.assertNotEqual(ctx.exception.solution.status, OPTIMAL)
        self.assertAlmostEqual(ctx.exception.diagnostics.min_h, 2.0, places=9)

    def test_grid_mode_agrees_with_analytic(self):
        """Test that the grid field gives nearly the same input as the analytic one"""
        shape = RobotShape.l_shape()
        obstacle = Obstacle.from_shape(0, Primitive.circle(1.0), ObstacleState((3.5, 1.0)), 24)
        state = RobotState(SINGLE_INTEGRATOR, 0.0, 0.0, np.pi)
        grid_params = replace(self.params, sdf_mode=GRID, grid_resolution=0.02)
        u_analytic, _, _ = control_step(
            state, [obstacle], Goal(8.0, 2.0), self.params, self.bounds, self.params.build_field(shape),
        )
        u_grid, _, _ = control_step(
            state, [obstacle], Goal(8.0, 2.0), grid_params, self.bounds, grid_params.build_field(shape),
        )
        np.testing.assert_allclose(u_grid, u_analytic, atol=0.1)


class ControllerParamsTests(SimpleTestCase):
    """Tests for controller parameters (Feature 6.2)"""

    def test_defaults(self):
        params = ControllerParams()
        self.assertEqual((params.alpha, params.gamma_d, params.gamma_theta), (1.0, 1.0, 3.0))
        np.testing.assert_array_equal(params.H, 1000.0 * np.eye(2))
        np.testing.assert_array_equal(params.R, np.eye(2))

    def test_rates_must_be_positive(self):
        for name in ('alpha', 'gamma_d', 'gamma_theta', 'slack_weight', 'delta_q'):
            with self.subTest(name=name):
                with self.assertRaises(ValueError):
                    ControllerParams(**{name: 0.0})

    def test_unknown_sdf_mode(self):
        with self.assertRaises(ValueError):
            ControllerParams(sdf_mode='voxel')


class RunScenarioTests(SimpleTestCase):
    """Tests for the closed-loop simulation (Feature 6.3)"""

    def test_start_at_goal(self):
        """Test that a robot starting on its goal stops at t=0"""
        cfg = parse(minimal_document(robot={**minimal_document()['robot'], 'goal': [0.0, 0.0]}))
        log = run_scenario(cfg)
        self.assertEqual(log.reason, GOAL_REACHED)
        self.assertEqual(log.steps, 1)
        self.assertEqual(log.records[0].t, 0.0)

    def test_uniform_time_grid(self):
        """Test that records are spaced by exactly k * dt"""
        log = run_scenario(load_scenario('no_obstacles'))
        self.assertEqual(log.reason, GOAL_REACHED)
        dt = 0.1
        for k, record in enumerate(log.records):
            self.assertEqual(record.t, k * dt)

    def test_timeout(self):
        """Test that a run that cannot finish in time ends with a timeout after ceil(t_max/dt)+1 records"""
        cfg = parse(minimal_document(
            robot={**minimal_document()['robot'], 'goal': [30.0, 0.0]},
            sim={'dt': 0.1, 't_max': 1.0},
        ))
        log = run_scenario(cfg)
        self.assertEqual(log.reason, TIMEOUT)
        self.assertEqual(log.steps, 11)
        self.assertAlmostEqual(log.records[-1].t, 1.0)

    def test_unsafe_start_refused(self):
        """Test that a robot starting in contact is refused before any step"""
        with self.assertRaisesMessage(UnsafeInitialState, "initial state unsafe"):
            run_scenario(load_scenario('initial_contact'))

    def test_start_inside_obstacle_refused(self):
        """Test that a robot lying wholly inside an obstacle is refused though no boundary point touches it"""
        cfg = parse(minimal_document(obstacles=[
            {'shape': {'kind': 'circle', 'radius': 2.0}, 'position': [0.0, 0.0]},
        ]))
        with self.assertRaisesMessage(UnsafeInitialState, "initial state unsafe"):
            run_scenario(cfg)

    def test_initial_clearance_inside_obstacle(self):
        obstacle = Obstacle.from_shape(0, Primitive.circle(2.0), ObstacleState((0.0, 0.0)), 24)
        params = ControllerParams()
        min_h, per_obstacle = initial_clearance(
            params.build_field(circle_robot()), RobotState(SINGLE_INTEGRATOR, 0.0, 0.0), [obstacle],
        )
        self.assertAlmostEqual(min_h, -2.0)
        self.assertEqual(per_obstacle, (min_h,))

    def test_infeasible_abort(self):
        """Test that ten consecutive infeasible steps abort the run with zero input"""
        cfg = parse(minimal_document(
            robot={**minimal_document()['robot'], 'goal': [-3.0, 0.0], 'u_max': [0.1, 0.1]},
            obstacles=[{
                'shape': {'kind': 'rectangle', 'half_length': 20.0, 'half_width': 2.0},
                'position': [22.0, 0.0],
                'velocity': [-5.0, 0.0],
                'points': 176,
            }],
        ))
        with tempfile.TemporaryDirectory() as dump_dir:
            with override_settings(QP_DUMP_DIR=dump_dir), self.assertLogs('simulation.runner', 'WARNING'):
                log = run_scenario(cfg)
            dumps = sorted(os.listdir(dump_dir))
        self.assertEqual(log.reason, INFEASIBLE_ABORT)
        self.assertEqual(log.steps, settings.MAX_INFEASIBLE_STEPS)
        self.assertEqual(log.infeasible_steps, settings.MAX_INFEASIBLE_STEPS)
        self.assertTrue(all(record.qp_status != OPTIMAL for record in log.records))
        self.assertTrue(all(not np.any(record.u) for record in log.records))
        self.assertEqual(len(dumps), settings.MAX_INFEASIBLE_STEPS)
        self.assertTrue(dumps[0].startswith('test-step00000'))

    def test_summary(self):
        log = run_scenario(load_scenario('no_obstacles'))
        summary = log.summary()
        self.assertEqual(summary['scenario'], 'no_obstacles')
        self.assertEqual(summary['steps'], log.steps)
        self.assertEqual(summary['min_h'], math.inf)
        self.assertEqual(summary['infeasible_steps'], 0)


class ScenarioAcceptanceTests(SimpleTestCase):
    """Tests for the bundled experiments (Feature 6.4)"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.scenario_a = with_overrides(load_scenario('scenario_a'), record_timing=False)
        cls.scenario_b = with_overrides(load_scenario('scenario_b'), record_timing=False)
        cls.log_a = run_scenario(cls.scenario_a)
        cls.log_b = run_scenario(cls.scenario_b)

    def assert_safe(self, log):
        for record in log.records:
            self.assertGreater(record.min_h, 0.0, f"unsafe at t={record.t}")

    def assert_certified(self, log):
        for record in log.records:
            self.assertEqual(record.qp_status, OPTIMAL)
            self.assertLessEqual(record.kkt_violation, 1e-6, f"KKT failed at t={record.t}")

    def test_scenario_a_reaches_goal_safely(self):
        """Test that the single integrator reaches its goal before 20 s without contact"""
        log = self.log_a
        self.assertEqual(log.reason, GOAL_REACHED)
        self.assertLess(log.records[-1].t, 20.0)
        final = log.final_state
        self.assertLess(np.linalg.norm(final.position - [12.0, 10.0]), 0.1)
        self.assert_safe(log)
        for record in log.records:
            self.assertTrue(np.all(np.abs(record.u) <= 2.0 + 1e-6))
        self.assert_certified(log)

    def test_scenario_b_reaches_goal_safely(self):
        """Test that the unicycle reaches its goal before 20 s within its speed and turn-rate limits"""
        log = self.log_b
        self.assertEqual(log.reason, GOAL_REACHED)
        self.assertLess(log.records[-1].t, 20.0)
        self.assert_safe(log)
        for record in log.records:
            self.assertLessEqual(abs(record.u[0]), 2.0 + 1e-6)
            self.assertLessEqual(abs(record.u[1]), 1.0 + 1e-6)
        self.assert_certified(log)

    def test_scenario_b_obstacles_stop_at_destination(self):
        """Test that both obstacles of the unicycle run end at rest on their end points"""
        obstacles = [
            Obstacle.from_shape(o.id, o.shape, o.state, o.points) for o in self.scenario_b.obstacles
        ]
        for _ in range(400):
            obstacles = [obstacle.step(0.1) for obstacle in obstacles]
        np.testing.assert_allclose(obstacles[0].state.position, [0.5, 3.5])
        np.testing.assert_allclose(obstacles[1].state.position, [14.0, 7.5])
        self.assertFalse(any(obstacle.state.moving for obstacle in obstacles))

    def test_bitwise_determinism(self):
        """Test that rerunning both experiments gives byte-identical logs"""
        self.assertEqual(csv_text(run_scenario(self.scenario_a)), csv_text(self.log_a))
        self.assertEqual(csv_text(run_scenario(self.scenario_b)), csv_text(self.log_b))

    def test_smaller_step_still_safe(self):
        """Test that scenario A at dt = 0.05 s still reaches its goal without contact"""
        log = run_scenario(with_overrides(self.scenario_a, dt=0.05))
        self.assertEqual(log.reason, GOAL_REACHED)
        self.assert_safe(log)

    def test_slower_barrier_rate_stays_safe(self):
        """Test that scenario A with alpha = 0.5 stays safe, like the alpha = 1.0 run"""
        log = run_scenario(with_overrides(self.scenario_a, alpha=0.5))
        self.assert_safe(log)
        self.assert_safe(self.log_a)
        self.assertGreater(min(log.min_h, self.log_a.min_h), 0.0)
        self.assertGreaterEqual(log.min_h, self.log_a.min_h - 1e-9)

    def test_safety_wins_over_stability(self):
        """Test that in a head-on conflict every CBF row holds while the distance slack opens"""
        log = run_scenario(with_overrides(load_scenario('head_on_conflict'), record_timing=False))
        self.assertEqual(log.reason, TIMEOUT)
        for record in log.records:
            self.assertGreaterEqual(record.cbf_margin, -1e-6)
        self.assertTrue(any(record.delta[0] > 0.0 for record in log.records))
        self.assert_safe(log)


class ScenarioParsingTests(SimpleTestCase):
    """Tests for scenario documents (Feature 7.1)"""

    def test_bundled_scenario_a(self):
        cfg = load_scenario('scenario_a')
        self.assertEqual(cfg.name, 'scenario_a')
        self.assertEqual(cfg.robot.model, SINGLE_INTEGRATOR)
        np.testing.assert_array_equal(cfg.robot.initial.position, [0.76, 0.76])
        np.testing.assert_array_equal(cfg.robot.goal.position, [12.0, 10.0])
        static, dynamic = cfg.obstacles
        self.assertEqual(static.shape.kind, 'circle')
        self.assertFalse(static.state.moving)
        self.assertEqual(dynamic.shape.kind, 'rectangle')
        np.testing.assert_array_equal(dynamic.state.velocity, [0.0, -0.7])
        self.assertIn('reconstructed', dynamic.note)

    def test_bundled_scenario_b(self):
        cfg = load_scenario('scenario_b')
        self.assertEqual(cfg.robot.model, UNICYCLE)
        starts = [o.state.position.tolist() for o in cfg.obstacles]
        velocities = [o.state.velocity.tolist() for o in cfg.obstacles]
        self.assertEqual(starts, [[6.0, 3.5], [4.5, 7.5]])
        self.assertEqual(velocities, [[-0.6, 0.0], [0.55, 0.0]])
        np.testing.assert_array_equal(cfg.robot.bounds.u_max, [2.0, 1.0])
        np.testing.assert_array_equal(cfg.robot.bounds.u_min, [-2.0, -1.0])

    def test_all_bundled_scenarios_parse(self):
        for name in ('scenario_a', 'scenario_b', 'no_obstacles', 'head_on_conflict', 'initial_contact'):
            with self.subTest(name=name):
                self.assertIsInstance(load_scenario(name), ScenarioConfig)

    def test_empty_obstacle_list(self):
        cfg = parse(minimal_document(obstacles=[]))
        self.assertEqual(cfg.obstacles, ())

    def test_defaults(self):
        """Test that omitted sections and keys take their documented defaults"""
        cfg = parse(minimal_document())
        self.assertEqual(cfg.sim.dt, 0.1)
        self.assertEqual(cfg.sim.t_max, 20.0)
        self.assertEqual(cfg.sim.goal_tol, settings.GOAL_TOLERANCE)
        self.assertEqual(cfg.sim.max_infeasible, settings.MAX_INFEASIBLE_STEPS)
        self.assertTrue(cfg.sim.record_timing)
        self.assertEqual(cfg.controller, ControllerParams())
        self.assertEqual(cfg.robot.initial.theta, 0.0)
        np.testing.assert_array_equal(cfg.robot.bounds.u_min, [-2.0, -2.0])
        self.assertEqual(cfg.outputs.csv, '')
        self.assertEqual(cfg.name, 'test')

    @override_settings(GOAL_TOLERANCE=0.25, MAX_INFEASIBLE_STEPS=3)
    def test_defaults_follow_settings(self):
        cfg = parse(minimal_document())
        self.assertEqual(cfg.sim.goal_tol, 0.25)
        self.assertEqual(cfg.sim.max_infeasible, 3)

    def test_obstacle_defaults_and_ids(self):
        cfg = parse(minimal_document(obstacles=[
            {'shape': {'kind': 'circle', 'radius': 1.0}, 'position': [5.0, 0.0]},
            {'shape': {'kind': 'circle', 'radius': 1.0}, 'position': [5.0, 5.0]},
        ]))
        self.assertEqual([o.id for o in cfg.obstacles], [0, 1])
        self.assertEqual(cfg.obstacles[0].points, 24)
        np.testing.assert_array_equal(cfg.obstacles[0].state.velocity, [0.0, 0.0])
        self.assertIsNone(cfg.obstacles[0].state.destination)

    def test_polygon_obstacle(self):
        cfg = parse(minimal_document(obstacles=[{
            'shape': {'kind': 'polygon', 'vertices': [[0, 0], [1, 0], [0, 1]]},
            'position': [4.0, 4.0],
        }]))
        self.assertIsInstance(cfg.obstacles[0].shape, Polygon)

    def test_unknown_keys_rejected(self):
        """Test that unknown keys are rejected with their path"""
        document = minimal_document()
        document['colour'] = 'red'
        document['robot']['wheels'] = 4
        messages = validation_messages(parse, document)
        self.assertIn("Unknown key 'colour'.", messages)
        self.assertIn("robot: Unknown key 'wheels'.", messages)

    def test_syntax_error_has_position(self):
        messages = validation_messages(parse_scenario, '{\n  "robot": {\n    "model": ,\n  }\n}')
        self.assertTrue(messages[0].startswith('line 3, column'))

    def test_top_level_must_be_object(self):
        self.assertEqual(len(validation_messages(parse_scenario, '[1, 2]')), 1)

    def test_inverted_bounds_named(self):
        """Test that u_min > u_max names the violated invariant"""
        document = minimal_document()
        document['robot']['u_min'] = [3.0, -2.0]
        messages = validation_messages(parse, document)
        self.assertEqual(len(messages), 1)
        self.assertTrue(messages[0].startswith('robot.u_min: '))
        self.assertIn('exceeds', messages[0])

    def test_nested_paths(self):
        """Test that errors deep in lists carry an indexed key path"""
        document = minimal_document(obstacles=[
            {'shape': {'kind': 'circle', 'radius': 1.0}, 'position': [5.0, 0.0]},
            {'shape': {'kind': 'circle'}, 'position': [5.0, 'x'], 'points': 2},
        ])
        document['robot']['shape'][0] = {'kind': 'rectangle', 'half_length': 1.0}
        messages = validation_messages(parse, document)
        paths = {message.split(': ', 1)[0] for message in messages}
        self.assertEqual(paths, {
            'robot.shape[0].half_width',
            'obstacles[1].shape.radius',
            'obstacles[1].position',
            'obstacles[1].points',
        })

    def test_sim_invariants(self):
        for sim, path in (({'dt': 0.0}, 'sim.dt'), ({'dt': 0.5, 't_max': 0.5}, 'sim.t_max')):
            with self.subTest(sim=sim):
                messages = validation_messages(parse, minimal_document(sim=sim))
                self.assertTrue(messages[0].startswith(f"{path}: "))

    def test_non_finite_rejected(self):
        document = minimal_document()
        document['robot']['start'] = [float('nan'), 0.0]
        document['robot']['theta'] = float('inf')
        messages = validation_messages(parse, document)
        paths = {message.split(': ', 1)[0] for message in messages}
        self.assertEqual(paths, {'robot.start', 'robot.theta'})

    def test_kind_specific_keys(self):
        document = minimal_document()
        document['robot']['shape'] = [{'kind': 'circle', 'radius': 0.5, 'half_width': 1.0}]
        messages = validation_messages(parse, document)
        self.assertEqual(messages, ['robot.shape[0].half_width: Not used by a circle.'])

    def test_fuzzed_mutations_fail_cleanly(self):
        """Test that random key mutations either parse or raise ValidationError, never crash"""
        base = bundled_document('scenario_a')
        junk = [None, 'x', -1, 0, 2.5, True, [], {}, [1], [1, 2, 3], ['a', 'b'], [float('nan'), 0.0], 1e309]
        rng = np.random.default_rng(20240611)

        def slots(node):
            if isinstance(node, dict):
                for key, value in node.items():
                    yield node, key
                    yield from slots(value)
            elif isinstance(node, list):
                for index, value in enumerate(node):
                    yield node, index
                    yield from slots(value)

        for _ in range(300):
            document = json.loads(json.dumps(base))
            container, key = list(slots(document))[rng.integers(len(list(slots(document))))]
            action = rng.integers(3)
            if action == 0:
                del container[key]
            elif action == 1:
                container[key] = junk[rng.integers(len(junk))]
            elif isinstance(container, dict):
                container[f"extra_{rng.integers(100)}"] = 1
            try:
                cfg = parse(document)
            except ValidationError:
                continue
            self.assertIsInstance(cfg, ScenarioConfig)
            self.assertGreater(cfg.sim.t_max, cfg.sim.dt)
            self.assertTrue(all(o.points >= 3 for o in cfg.obstacles))

    def test_missing_scenario(self):
        with self.assertRaises(FileNotFoundError):
            load_scenario('no_such_scenario')

    def test_with_overrides(self):
        cfg = with_overrides(load_scenario('scenario_a'), dt=0.05, t_max=10.0, sdf_mode=GRID, alpha=0.5)
        self.assertEqual((cfg.sim.dt, cfg.sim.t_max), (0.05, 10.0))
        self.assertEqual((cfg.controller.sdf_mode, cfg.controller.alpha), (GRID, 0.5))
        with self.assertRaises(ValueError):
            with_overrides(cfg, t_max=0.01)
        with self.assertRaises(ValueError):
            with_overrides(cfg, alpha=-1.0)


class CsvLogTests(SimpleTestCase):
    """Tests for trajectory CSV files (Feature 7.2)"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cfg = parse(minimal_document(obstacles=[
            {'shape': {'kind': 'circle', 'radius': 0.5}, 'position': [1.5, 1.5]},
            {'shape': {'kind': 'rectangle', 'half_length': 0.3, 'half_width': 0.3}, 'position': [2.0, -1.5]},
        ]), name='csv')
        cls.log = run_scenario(cfg)

    def test_header(self):
        first = csv_text(self.log).splitlines()[0]
        self.assertEqual(first, ','.join(COLUMNS) + ',min_h_0,min_h_1')

    def test_round_trip(self):
        """Test that reading a written log reproduces every number"""
        read = read_csv(io.StringIO(csv_text(self.log)))
        self.assertEqual(len(read), self.log.steps)
        for k, record in enumerate(self.log.records):
            self.assertEqual(read.t[k], record.t)
            self.assertEqual(read.x[k], record.state.x)
            self.assertEqual(read.theta[k], record.state.wrapped_theta)
            np.testing.assert_array_equal(read.u[k], record.u)
            np.testing.assert_array_equal(read.delta[k], record.delta)
            self.assertEqual(read.min_h[k], record.min_h)
            self.assertEqual(read.qp_status[k], record.qp_status)
            self.assertEqual(read.min_h_per_obstacle[1][k], record.min_h_per_obstacle[1])

    def test_min_h_is_smallest_obstacle_value(self):
        read = read_csv(io.StringIO(csv_text(self.log)))
        np.testing.assert_array_equal(
            read.min_h, np.minimum(read.min_h_per_obstacle[0], read.min_h_per_obstacle[1]),
        )

    def test_file_round_trip(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'log.csv'
            save_csv(self.log, path)
            self.assertEqual(len(load_csv(path)), self.log.steps)

    def test_timing_only_differs_in_solve_time(self):
        """Test that with timing on, two runs differ at most in solve_ms"""
        cfg = load_scenario('no_obstacles')
        first = read_csv(io.StringIO(csv_text(run_scenario(cfg))))
        second = read_csv(io.StringIO(csv_text(run_scenario(cfg))))
        for name in ('t', 'x', 'y', 'theta', 'u', 'delta', 'min_h'):
            np.testing.assert_array_equal(getattr(first, name), getattr(second, name))

    def test_bad_field_count(self):
        text = csv_text(self.log).splitlines()
        text[2] = text[2].rsplit(',', 1)[0]
        with self.assertRaisesMessage(ValueError, 'row 3:'):
            read_csv(io.StringIO('\n'.join(text)))

    def test_bad_number(self):
        text = csv_text(self.log).splitlines()
        fields = text[1].split(',')
        fields[1] = 'north'
        text[1] = ','.join(fields)
        with self.assertRaisesMessage(ValueError, 'row 2, column x'):
            read_csv(io.StringIO('\n'.join(text)))

    def test_unknown_status(self):
        text = csv_text(self.log).splitlines()
        text[1] = text[1].replace(',optimal,', ',solved,')
        with self.assertRaisesMessage(ValueError, "row 2, column qp_status: unknown status 'solved'"):
            read_csv(io.StringIO('\n'.join(text)))

    def test_bad_header(self):
        with self.assertRaisesMessage(ValueError, 'row 1:'):
            read_csv(io.StringIO('time,x,y\n0,0,0\n'))
        with self.assertRaisesMessage(ValueError, 'row 1:'):
            read_csv(io.StringIO(''))


def assert_self_contained_svg(test, path):
    root = ET.parse(path).getroot()
    test.assertTrue(root.tag.endswith('svg'))
    for element in root.iter():
        test.assertFalse(element.tag.endswith('image'), "embedded raster image")
        for name, value in element.attrib.items():
            if name.endswith('href'):
                test.assertTrue(value.startswith('#'), f"external reference {value}")


class PlotTests(SimpleTestCase):
    """Tests for SVG figures (Feature 7.3)"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.cfg = parse(minimal_document(
            robot={**minimal_document()['robot'], 'shape': [
                {'kind': 'rectangle', 'half_length': 1.0, 'half_width': 0.25},
                {'kind': 'rectangle', 'half_length': 0.25, 'half_width': 1.0, 'offset': [-0.75, 0.75]},
            ], 'start': [0.0, -2.0], 'goal': [4.0, -2.0], 'theta': math.pi},
            obstacles=[
                {'shape': {'kind': 'circle', 'radius': 0.5}, 'position': [2.0, 1.0], 'velocity': [0.0, -0.2]},
            ],
        ), name='plot')
        cls.log = read_csv(io.StringIO(csv_text(run_scenario(cls.cfg))))

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)

    def path(self, name):
        return Path(self.directory.name) / name

    def test_every_kind_is_self_contained(self):
        for kind, _ in plots.PLOT_KINDS:
            with self.subTest(kind=kind):
                path = self.path(f"{kind}.svg")
                plots.render(kind, self.log, path, self.cfg)
                assert_self_contained_svg(self, path)

    def test_rendering_is_deterministic(self):
        first, second = self.path('a.svg'), self.path('b.svg')
        plots.render(plots.TRAJECTORY, self.log, first, self.cfg)
        plots.render(plots.TRAJECTORY, self.log, second, self.cfg)
        self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_single_row_gets_a_marker(self):
        """Test that a one-row log still renders a visible marker"""
        cfg = parse(minimal_document(robot={**minimal_document()['robot'], 'goal': [0.0, 0.0]}))
        log = read_csv(io.StringIO(csv_text(run_scenario(cfg))))
        self.assertEqual(len(log), 1)
        for kind in (plots.TRAJECTORY, plots.CONTROLS):
            figure = plots.build_figure(kind, log, cfg)
            markers = [line.get_marker() for line in figure.axes[0].get_lines()]
            self.assertIn('o', markers)
            path = self.path(f"single-{kind}.svg")
            plots.save_svg(figure, path)
            assert_self_contained_svg(self, path)

    def test_controls_show_bounds(self):
        figure = plots.controls_figure(self.log, self.cfg)
        levels = {
            float(line.get_ydata()[0]) for line in figure.axes[0].get_lines() if line.get_linestyle() == '--'
        }
        self.assertEqual(levels, {-2.0, 2.0})

    def test_obstacle_paths_follow_motion(self):
        paths = plots.obstacle_paths(self.cfg, 3, 0.5)
        np.testing.assert_allclose(paths[0], [[2.0, 1.0], [2.0, 0.9], [2.0, 0.8]])

    def test_unknown_kind(self):
        with self.assertRaises(ValueError):
            plots.build_figure('heatmap', self.log)


class CommandTests(SimpleTestCase):
    """Tests for the management commands (Feature 7.4)"""

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)

    def path(self, name):
        return str(Path(self.directory.name) / name)

    def write_document(self, name, document):
        path = self.path(name)
        Path(path).write_text(json.dumps(document))
        return path

    def call(self, *args):
        out = io.StringIO()
        call_command(*args, stdout=out, stderr=io.StringIO())
        return out.getvalue()

    def test_run_writes_csv_and_summary(self):
        """Test that run_scenario writes the CSV and prints the summary"""
        csv_path = self.path('run.csv')
        output = self.call('run_scenario', 'no_obstacles', '--csv', csv_path)
        self.assertIn('reason: goal_reached', output)
        self.assertIn('steps: ', output)
        self.assertIn('mean_solve_ms: ', output)
        self.assertTrue(Path(csv_path).read_text().startswith(','.join(COLUMNS) + '\n'))

    def test_run_start_at_goal_single_row(self):
        document = minimal_document(robot={**minimal_document()['robot'], 'goal': [0.0, 0.0]})
        csv_path = self.path('single.csv')
        self.call('run_scenario', self.write_document('single.json', document), '--csv', csv_path)
        self.assertEqual(len(Path(csv_path).read_text().splitlines()), 2)

    def test_run_without_timing_is_byte_identical(self):
        first, second = self.path('first.csv'), self.path('second.csv')
        self.call('run_scenario', 'no_obstacles', '--csv', first, '--no-timing')
        self.call('run_scenario', 'no_obstacles', '--csv', second, '--no-timing')
        self.assertEqual(Path(first).read_bytes(), Path(second).read_bytes())
        self.assertTrue(all(row.endswith(',0') for row in Path(first).read_text().splitlines()[1:]))

    def test_run_overrides(self):
        csv_path = self.path('dt.csv')
        self.call('run_scenario', 'no_obstacles', '--csv', csv_path, '--dt', '0.05', '--no-timing')
        self.assertAlmostEqual(load_csv(csv_path).t[1], 0.05)

    def test_run_writes_configured_figures(self):
        document = minimal_document(outputs={
            'csv': self.path('out.csv'),
            'trajectory_svg': self.path('out-trajectory.svg'),
            'cbf_svg': self.path('out-cbf.svg'),
        })
        self.call('run_scenario', self.write_document('outputs.json', document))
        self.assertTrue(Path(self.path('out.csv')).exists())
        assert_self_contained_svg(self, self.path('out-trajectory.svg'))
        assert_self_contained_svg(self, self.path('out-cbf.svg'))

    def test_run_timeout_exits_nonzero(self):
        """Test that a run ending without reaching the goal exits with status 1"""
        with self.assertRaises(CommandError) as ctx:
            self.call('run_scenario', 'head_on_conflict', '--csv', self.path('conflict.csv'))
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn('timeout (timed out)', str(ctx.exception))
        self.assertTrue(Path(self.path('conflict.csv')).exists())

    def test_run_unsafe_start_refused(self):
        with self.assertRaisesMessage(CommandError, 'initial state unsafe'):
            self.call('run_scenario', 'initial_contact', '--csv', self.path('never.csv'))
        self.assertFalse(Path(self.path('never.csv')).exists())

    def test_run_invalid_scenario(self):
        document = minimal_document()
        document['robot']['goal'] = 'north'
        with self.assertRaisesMessage(CommandError, 'robot.goal: '):
            self.call('run_scenario', self.write_document('bad.json', document))

    def test_run_missing_scenario(self):
        with self.assertRaisesMessage(CommandError, 'no_such_scenario'):
            self.call('run_scenario', 'no_such_scenario')

    def test_plot_every_kind(self):
        csv_path = self.path('plot.csv')
        self.call('run_scenario', 'no_obstacles', '--csv', csv_path)
        for kind, _ in plots.PLOT_KINDS:
            with self.subTest(kind=kind):
                out = self.path(f"{kind}.svg")
                self.call('plot_run', csv_path, '--kind', kind, '--out', out, '--scenario', 'no_obstacles')
                assert_self_contained_svg(self, out)

    def test_plot_malformed_csv(self):
        csv_path = self.path('broken.csv')
        Path(csv_path).write_text(','.join(COLUMNS) + '\n0,0,0\n')
        with self.assertRaisesMessage(CommandError, 'row 2'):
            self.call('plot_run', csv_path, '--kind', 'cbf', '--out', self.path('broken.svg'))

    def test_check_reports_sizes(self):
        output = self.call('check_scenario', 'scenario_a')
        self.assertIn('model: single_integrator', output)
        self.assertIn('shape: 2 primitives', output)
        self.assertIn('obstacles: 2', output)
        self.assertIn('rows: 1 clf + 48 cbf', output)
        self.assertIn('initial_min_h: ', output)

    def test_check_unicycle_rows(self):
        self.assertIn('rows: 2 clf + 48 cbf', self.call('check_scenario', 'scenario_b'))

    def test_check_unsafe(self):
        with self.assertRaisesMessage(CommandError, 'initial state unsafe'):
            self.call('check_scenario', 'initial_contact')

    def test_check_start_inside_obstacle(self):
        """Test that check_scenario refuses a robot lying wholly inside an obstacle"""
        document = minimal_document(obstacles=[
            {'shape': {'kind': 'circle', 'radius': 2.0}, 'position': [0.0, 0.0]},
        ])
        with self.assertRaisesMessage(CommandError, 'initial state unsafe: min h = -2 m'):
            self.call('check_scenario', self.write_document('inside.json', document))

    @override_settings(SDF_GRID_MAX_CELLS=10, SDF_GRID_CACHE_DIR='')
    def test_oversized_grid_is_a_command_error(self):
        """Test that every command reports an oversized SDF grid as a CommandError"""
        path = self.write_document('grid.json', minimal_document(controller={'sdf_mode': GRID}))
        calls = (
            ('run_scenario', path, '--csv', self.path('grid.csv')),
            ('check_scenario', path),
            ('bench_scenario', path, '--reps', '1'),
        )
        for args in calls:
            with self.subTest(command=args[0]):
                with self.assertRaisesMessage(CommandError, 'SDF_GRID_MAX_CELLS'):
                    self.call(*args)

    def test_bench_rejects_zero_reps(self):
        with self.assertRaisesMessage(CommandError, '--reps'):
            self.call('bench_scenario', 'no_obstacles', '--reps', '0')

    def test_bench_json_report(self):
        """Test that the JSON report has one timing entry per step"""
        report = json.loads(self.call('bench_scenario', 'no_obstacles', '--reps', '2', '--json'))
        steps = run_scenario(load_scenario('no_obstacles')).steps
        self.assertEqual(report['steps'], steps)
        self.assertEqual(len(report['per_step_ms']), steps)
        self.assertEqual(report['reps'], 2)
        self.assertLessEqual(report['median_ms'], report['p95_ms'])

    def test_bench_text_report(self):
        output = self.call('bench_scenario', 'no_obstacles', '--reps', '1')
        for label in ('mean: ', 'median: ', 'p95: '):
            self.assertIn(label, output)

    def test_bench_scenario_b_under_twenty_ms(self):
        """Test that the unicycle experiment averages under 20 ms per controller step"""
        report = json.loads(self.call('bench_scenario', 'scenario_b', '--reps', '1', '--json'))
        self.assertLess(report['mean_ms'], 20.0)

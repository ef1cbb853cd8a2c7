"""
Closed-loop simulation of the CLF-CBF-QP controller.

Each step senses the current obstacle states, builds the CLF and CBF rows,
solves the QP, applies the input for one period and then advances the
obstacles. Simulated time is ideal: solve latency is measured and logged but
never injected into the loop.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from time import perf_counter

import numpy as np
from django.conf import settings

from control.dynamics import step_robot
from control.qp import OPTIMAL, QpFailure, assemble, check_kkt, solve
from control.safety import Obstacle, cbf_rows
from control.stability import clf_rows
from geometry.fields import ANALYTIC, SDF_MODE_CHOICES, RoboCentricField
from geometry.sampling import sample_footprint
from geometry.shapes import body_to_world

logger = logging.getLogger(__name__)

GOAL_REACHED = 'goal_reached'
TIMEOUT = 'timeout'
INFEASIBLE_ABORT = 'infeasible_abort'

REASON_CHOICES = (
    (GOAL_REACHED, 'Goal reached'),
    (TIMEOUT, 'Timed out'),
    (INFEASIBLE_ABORT, 'Aborted after repeated infeasible steps'),
)


class UnsafeInitialState(ValueError):
    """The robot starts in contact with (or inside) an obstacle."""


@dataclass(frozen=True)
class ControllerParams:
    alpha: float = 1.0
    gamma_d: float = 1.0
    gamma_theta: float = 3.0
    r_weight: float = 1.0
    slack_weight: float = 1000.0
    delta_q: float = 1e-4
    sdf_mode: str = ANALYTIC
    grid_margin: float = None
    grid_resolution: float = None
    qp_tolerance: float = None
    qp_max_iter: int = None

    def __post_init__(self):
        for name in ('alpha', 'gamma_d', 'gamma_theta', 'r_weight', 'slack_weight', 'delta_q'):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.sdf_mode not in dict(SDF_MODE_CHOICES):
            raise ValueError(f"unknown SDF mode {self.sdf_mode!r}")

    @property
    def R(self):
        return self.r_weight * np.eye(2)

    @property
    def H(self):
        return self.slack_weight * np.eye(2)

    @property
    def gammas(self):
        return (self.gamma_d, self.gamma_theta)

    def build_field(self, shape):
        return RoboCentricField.build(
            shape, self.sdf_mode, self.delta_q, self.grid_margin, self.grid_resolution,
        )


@dataclass(eq=False)
class StepDiagnostics:
    clf_rows: list
    cbf_rows: list
    problem: object
    solution: object = None
    min_h: float = math.inf
    min_h_per_obstacle: tuple = ()
    solve_time: float = 0.0
    kkt: object = None

    @property
    def duals(self):
        return None if self.solution is None else self.solution.duals

    def cbf_margin(self, u):
        """Smallest a_u . u + b over the CBF rows (inf without obstacles)."""
        return min((row.margin(u) for row in self.cbf_rows), default=math.inf)


def _barrier_minima(rows, obstacles):
    minima = {obstacle.id: math.inf for obstacle in obstacles}
    for row in rows:
        minima[row.obstacle_id] = min(minima[row.obstacle_id], row.h)
    per_obstacle = tuple(minima[obstacle.id] for obstacle in obstacles)
    return min(per_obstacle, default=math.inf), per_obstacle


def control_step(state, obstacles, goal, params, bounds, field):
    """Solve one CLF-CBF-QP; returns ``(u, delta, diagnostics)``.

    ``delta`` always has two entries; the heading slack is zero for a single
    integrator. Raises ``QpFailure`` when the QP has no optimal solution.
    """
    started = perf_counter()
    clf = clf_rows(state, goal, params.gammas)
    cbf = cbf_rows(field.shape, state, obstacles, params.alpha, field)
    problem = assemble(clf, cbf, bounds, (params.R, params.H))
    solution = solve(problem, params.qp_tolerance, params.qp_max_iter)
    elapsed = perf_counter() - started

    min_h, per_obstacle = _barrier_minima(cbf, obstacles)
    diagnostics = StepDiagnostics(clf, cbf, problem, solution, min_h, per_obstacle, elapsed)
    if solution.status != OPTIMAL:
        raise QpFailure(solution, diagnostics)

    diagnostics.kkt = check_kkt(problem, solution)
    if not diagnostics.kkt.passed():
        logger.warning("KKT certificate failed: worst violation %.3g", diagnostics.kkt.worst)

    u = solution.z[:problem.n_controls].copy()
    delta = np.zeros(2)
    slacks = solution.z[problem.n_controls:]
    delta[:len(slacks)] = slacks
    logger.debug(
        "%d rows, %d iterations, u=(%.4f, %.4f), min h %.4g m",
        problem.m, solution.iterations, u[0], u[1], min_h,
    )
    return u, delta, diagnostics


@dataclass(frozen=True, eq=False)
class StepRecord:
    t: float
    state: object
    u: np.ndarray
    delta: np.ndarray
    min_h: float
    min_h_per_obstacle: tuple
    qp_status: str
    solve_ms: float
    kkt_violation: float = 0.0
    cbf_margin: float = math.inf


@dataclass(eq=False)
class TrajectoryLog:
    scenario: str = ''
    obstacle_ids: tuple = ()
    records: list = field(default_factory=list)
    reason: str = ''
    infeasible_steps: int = 0

    @property
    def steps(self):
        return len(self.records)

    @property
    def min_h(self):
        return min((record.min_h for record in self.records), default=math.inf)

    @property
    def solve_ms(self):
        return [record.solve_ms for record in self.records]

    @property
    def mean_solve_ms(self):
        return float(np.mean(self.solve_ms)) if self.records else 0.0

    @property
    def final_state(self):
        return self.records[-1].state if self.records else None

    def summary(self):
        return {
            'scenario': self.scenario,
            'reason': self.reason,
            'steps': self.steps,
            'min_h': self.min_h,
            'mean_solve_ms': self.mean_solve_ms,
            'infeasible_steps': self.infeasible_steps,
        }


def initial_min_barrier(field, state, obstacles):
    """Smallest barrier value over all collision points at the current state."""
    rows = cbf_rows(field.shape, state, obstacles, 1.0, field)
    return _barrier_minima(rows, obstacles)


def initial_clearance(field, state, obstacles):
    """Per-obstacle clearance at the start: ``(min, per_obstacle)``.

    Combines the barrier values with the obstacle's own field on the robot
    outline, so a robot lying wholly inside an obstacle (touching none of its
    boundary points) is negative as well.
    """
    _, barriers = initial_min_barrier(field, state, obstacles)
    outline = body_to_world(state.pose, sample_footprint(field.shape))
    per_obstacle = tuple(
        min(h, float(obstacle.sdf(outline).min())) for h, obstacle in zip(barriers, obstacles)
    )
    return min(per_obstacle, default=math.inf), per_obstacle


def _dump_problem(problem, scenario, step):
    directory = Path(settings.QP_DUMP_DIR)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{scenario or 'scenario'}-step{step:05d}.txt"
    with path.open('w') as stream:
        problem.dump(stream)
    logger.warning("Dumped QP of step %d to %s", step, path)


def run_scenario(cfg):
    """Simulate ``cfg`` until the goal is reached, time runs out, or the QP keeps failing."""
    robot, sim, params = cfg.robot, cfg.sim, cfg.controller
    sdf_field = params.build_field(robot.shape)
    obstacles = [
        Obstacle.from_shape(entry.id, entry.shape, entry.state, entry.points)
        for entry in cfg.obstacles
    ]
    state = robot.initial

    min_h, per_obstacle = initial_clearance(sdf_field, state, obstacles)
    if min_h <= 0.0:
        culprit = obstacles[int(np.argmin(per_obstacle))].id
        raise UnsafeInitialState(f"initial state unsafe: min h = {min_h:.6g} m at obstacle {culprit}")

    log = TrajectoryLog(cfg.name, tuple(obstacle.id for obstacle in obstacles))
    max_steps = math.ceil(round(sim.t_max / sim.dt, 9))
    consecutive_failures = 0
    logger.info("Running %s: %s robot, %d obstacles", cfg.name, state.model, len(obstacles))

    k = 0
    while True:
        t = k * sim.dt
        try:
            u, delta, diagnostics = control_step(state, obstacles, robot.goal, params, robot.bounds, sdf_field)
        except QpFailure as failure:
            diagnostics = failure.diagnostics
            u, delta = np.zeros(2), np.zeros(2)
            status = failure.solution.status
            consecutive_failures += 1
            log.infeasible_steps += 1
            logger.warning("Step %d at t=%.2f: QP %s, applying zero input", k, t, status)
            if settings.QP_DUMP_DIR:
                _dump_problem(diagnostics.problem, cfg.name, k)
            kkt_violation = math.nan
        else:
            status = OPTIMAL
            consecutive_failures = 0
            kkt_violation = diagnostics.kkt.worst

        log.records.append(StepRecord(
            t=t,
            state=state,
            u=u,
            delta=delta,
            min_h=diagnostics.min_h,
            min_h_per_obstacle=diagnostics.min_h_per_obstacle,
            qp_status=status,
            solve_ms=1000.0 * diagnostics.solve_time if sim.record_timing else 0.0,
            kkt_violation=kkt_violation,
            cbf_margin=diagnostics.cbf_margin(u),
        ))

        if np.linalg.norm(state.position - robot.goal.position) < sim.goal_tol:
            log.reason = GOAL_REACHED
        elif consecutive_failures >= sim.max_infeasible:
            log.reason = INFEASIBLE_ABORT
        elif k >= max_steps:
            log.reason = TIMEOUT
        if log.reason:
            break

        state = step_robot(state, u, sim.dt)
        obstacles = [obstacle.step(sim.dt) for obstacle in obstacles]
        k += 1

    logger.info(
        "Finished %s: %s after %d steps, min h %.4g m, mean solve %.3f ms",
        cfg.name, log.reason, log.steps, log.min_h, log.mean_solve_ms,
    )
    return log

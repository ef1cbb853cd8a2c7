"""
Time-varying control barrier functions from the robo-centric field.

Every sampled obstacle point q_w gives one barrier h = SDF(q_b) with
q_b = R(theta)^T (q_w - p). Obstacle motion enters through dh/dt =
dh/dq_w . v_o, which turns the usual CBF condition into one affine row per
point: a_u . u + b >= 0.
"""

from dataclasses import dataclass, replace

import numpy as np

from geometry.sampling import as_obstacle_shape, sample_boundary
from geometry.shapes import as_points, sdf_gradient, sdf_union, world_to_body

from .dynamics import UNICYCLE, affine_fields, step_obstacle


@dataclass(frozen=True, eq=False)
class Obstacle:
    """An obstacle that translates with its state; it never rotates."""

    id: int
    shape: object
    state: object
    local_points: np.ndarray

    @classmethod
    def from_shape(cls, id, shape, state, M):
        shape = as_obstacle_shape(shape)
        return cls(id, shape, state, sample_boundary(shape, M, obstacle_id=id).points)

    @property
    def world_points(self):
        return self.local_points + self.state.position

    def sdf(self, q_w):
        """Signed distance to the obstacle footprint at world point(s)."""
        return self.shape.sdf(as_points(q_w) - self.state.position)

    def step(self, dt):
        return replace(self, state=step_obstacle(self.state, dt))


@dataclass(frozen=True, eq=False)
class CbfRow:
    a_u: np.ndarray
    b: float
    h: float
    obstacle_id: int
    point_index: int

    def margin(self, u):
        return float(self.a_u @ u + self.b)


def _evaluate(shape, q_b, field):
    if field is not None:
        return field.evaluate(q_b)
    return sdf_union(shape, q_b), sdf_gradient(shape, q_b)


def barrier_value(shape, pose, q_w, field=None):
    """h for world point(s) ``q_w`` seen from a robot at ``pose``."""
    q_b = world_to_body(pose, q_w)
    if field is not None:
        return field.value(q_b)
    return sdf_union(shape, q_b)


def barrier_gradients(shape, pose, q_w, field=None):
    """Return ``(dh_dp, dh_dtheta, dh_dqw)``.

    With g_b the body-frame field gradient: dh/dq_w = R g_b, dh/dp = -R g_b
    and dh/dtheta = (dR/dtheta g_b) . (q_w - p).
    """
    rel = as_points(q_w) - pose.p
    q_b = rel @ pose.rotation
    _, g_b = _evaluate(shape, q_b, field)
    dh_dqw = g_b @ pose.rotation.T
    dh_dtheta = np.sum((g_b @ pose.rotation_derivative.T) * rel, axis=-1)
    return -dh_dqw, dh_dtheta, dh_dqw


def barrier_terms(shape, state, points, velocity, field=None):
    """Vectorised row data for a block of world points sharing one velocity.

    Returns ``(a_u, b_without_alpha, h)`` where the full row offset is
    ``b_without_alpha + alpha * h``.
    """
    pose = state.pose
    rel = points - pose.p
    q_b = rel @ pose.rotation
    h, g_b = _evaluate(shape, q_b, field)
    dh_dqw = g_b @ pose.rotation.T
    if state.model == UNICYCLE:
        dh_dtheta = np.sum((g_b @ pose.rotation_derivative.T) * rel, axis=-1)
        grad_x = np.column_stack([-dh_dqw, dh_dtheta])
    else:
        grad_x = -dh_dqw
    f, g = affine_fields(state)
    return grad_x @ g, grad_x @ f + dh_dqw @ velocity, np.asarray(h)


def cbf_rows(shape, state, obstacles, alpha, field=None):
    """One row per obstacle point, obstacles in order, points in sample order."""
    if not alpha > 0:
        raise ValueError(f"CBF rate must be positive, got {alpha}")
    rows = []
    for obstacle in obstacles:
        a_u, offset, h = barrier_terms(shape, state, obstacle.world_points, obstacle.state.velocity, field)
        b = offset + alpha * h
        rows.extend(
            CbfRow(a_u[j], float(b[j]), float(h[j]), obstacle.id, j)
            for j in range(len(h))
        )
    return rows

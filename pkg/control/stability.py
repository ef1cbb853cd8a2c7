"""
Control Lyapunov functions steering the robot towards its goal.

Each function returns ``(V, gradient)`` with the gradient taken over the
model's state vector. ``clf_rows`` turns them into relaxed constraints
``a_u . u + b <= delta_k`` with a linear class-K rate ``gamma * V``.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import SINGLE_INTEGRATOR, UNICYCLE, affine_fields

DISTANCE_SLACK = 0
HEADING_SLACK = 1


@dataclass(frozen=True)
class Goal:
    """Destination. ``theta`` is carried for the record and drives nothing."""

    x: float
    y: float
    theta: float = 0.0

    @property
    def position(self):
        return np.array([self.x, self.y])


@dataclass(frozen=True, eq=False)
class ClfRow:
    a_u: np.ndarray
    b: float
    slack_index: int
    name: str = ''


def clf_distance(state, goal):
    """V_d = |p - p_d|^2 and its gradient over the position."""
    error = state.position - goal.position
    return float(error @ error), 2.0 * error


def clf_heading(state, goal):
    """V_theta = heading_error^2 and its gradient over (x, y, theta).

    Vanishes whenever the goal lies on the heading line, in front of the robot
    or behind it.
    """
    if state.model != UNICYCLE:
        raise ValueError("the heading CLF needs a heading state; the single integrator has none")
    c, s = np.cos(state.theta), np.sin(state.theta)
    dx, dy = goal.x - state.x, goal.y - state.y
    error = c * dy - s * dx
    d_error = np.array([s, -c, -s * dy - c * dx])
    return float(error ** 2), 2.0 * error * d_error


def _row(state, value, gradient, gamma, slack_index, name):
    f, g = affine_fields(state)
    lf = float(gradient @ f)
    return ClfRow(gradient @ g, lf + gamma * value, slack_index, name)


def clf_rows(state, goal, gammas):
    """One row for a single integrator (distance only), two for a unicycle."""
    gamma_d, gamma_theta = gammas
    if not (gamma_d > 0 and gamma_theta > 0):
        raise ValueError(f"CLF rates must be positive, got {gammas}")

    value, grad_p = clf_distance(state, goal)
    if state.model == SINGLE_INTEGRATOR:
        return [_row(state, value, grad_p, gamma_d, DISTANCE_SLACK, 'distance')]

    rows = [_row(state, value, np.append(grad_p, 0.0), gamma_d, DISTANCE_SLACK, 'distance')]
    value, gradient = clf_heading(state, goal)
    rows.append(_row(state, value, gradient, gamma_theta, HEADING_SLACK, 'heading'))
    return rows

"""
Robot and obstacle motion models.

Both robot models are control affine, x_dot = f(x) + g(x) u, and are
propagated with explicit Euler steps. Obstacles follow a double integrator
with constant acceleration.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from geometry.shapes import Pose2

SINGLE_INTEGRATOR = 'single_integrator'
UNICYCLE = 'unicycle'

MODEL_CHOICES = (
    (SINGLE_INTEGRATOR, 'Single integrator'),
    (UNICYCLE, 'Unicycle'),
)

CONTROL_DIM = 2


def wrap_angle(theta):
    """Map an angle to (-pi, pi]."""
    wrapped = np.arctan2(np.sin(theta), np.cos(theta))
    return np.pi if wrapped == -np.pi else float(wrapped)


def as_control(u):
    control = np.asarray(u, dtype=float)
    if control.shape != (CONTROL_DIM,):
        raise ValueError(f"control input must be a 2-vector, got shape {control.shape}")
    return control


@dataclass(frozen=True)
class RobotState:
    """Robot configuration. A single integrator keeps ``theta`` fixed."""

    model: str
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if self.model not in (SINGLE_INTEGRATOR, UNICYCLE):
            raise ValueError(f"unknown robot model {self.model!r}")
        if not np.all(np.isfinite([self.x, self.y, self.theta])):
            raise ValueError("robot state must be finite")

    @property
    def position(self):
        return np.array([self.x, self.y])

    @property
    def dimension(self):
        return 3 if self.model == UNICYCLE else 2

    @property
    def vector(self):
        """State vector in the model's own coordinates."""
        if self.model == UNICYCLE:
            return np.array([self.x, self.y, self.theta])
        return self.position

    @property
    def pose(self):
        return Pose2(self.x, self.y, self.theta)

    @property
    def wrapped_theta(self):
        return wrap_angle(self.theta)


@dataclass(frozen=True, eq=False)
class InputBounds:
    u_min: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        u_min, u_max = as_control(self.u_min), as_control(self.u_max)
        if np.any(u_min > u_max):
            raise ValueError(f"u_min {u_min.tolist()} exceeds u_max {u_max.tolist()}")
        object.__setattr__(self, 'u_min', u_min)
        object.__setattr__(self, 'u_max', u_max)

    @classmethod
    def symmetric(cls, limits):
        limits = as_control(limits)
        return cls(-limits, limits)

    def contains(self, u, tol=0.0):
        u = as_control(u)
        return bool(np.all(u >= self.u_min - tol) and np.all(u <= self.u_max + tol))


@dataclass(frozen=True, eq=False)
class ObstacleState:
    """Double-integrator obstacle state.

    When ``destination`` is set the obstacle stops there: the step that would
    carry it past the destination leaves it on the destination at rest.
    """

    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    acceleration: np.ndarray = field(default_factory=lambda: np.zeros(2))
    destination: np.ndarray = None

    def __post_init__(self):
        for name in ('position', 'velocity', 'acceleration', 'destination'):
            value = getattr(self, name)
            if value is None:
                continue
            value = np.asarray(value, dtype=float)
            if value.shape != (2,) or not np.all(np.isfinite(value)):
                raise ValueError(f"obstacle {name} must be a finite 2-vector")
            object.__setattr__(self, name, value)

    @property
    def moving(self):
        return bool(np.any(self.velocity) or np.any(self.acceleration))


def affine_fields(state):
    """Return ``(f, g)`` with x_dot = f + g u at ``state``."""
    if state.model == SINGLE_INTEGRATOR:
        return np.zeros(2), np.eye(2)
    c, s = np.cos(state.theta), np.sin(state.theta)
    g = np.array([
        [c, 0.0],
        [s, 0.0],
        [0.0, 1.0],
    ])
    return np.zeros(3), g


def step_robot(state, u, dt):
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    f, g = affine_fields(state)
    nxt = state.vector + dt * (f + g @ as_control(u))
    if state.model == UNICYCLE:
        return replace(state, x=float(nxt[0]), y=float(nxt[1]), theta=float(nxt[2]))
    return replace(state, x=float(nxt[0]), y=float(nxt[1]))


def step_obstacle(state, dt):
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    position = state.position + dt * state.velocity
    velocity = state.velocity + dt * state.acceleration

    if state.destination is not None and np.any(state.velocity):
        heading = state.velocity / np.linalg.norm(state.velocity)
        remaining = (state.destination - state.position) @ heading
        if (position - state.position) @ heading >= remaining:
            return ObstacleState(state.destination.copy(), np.zeros(2), np.zeros(2), state.destination)

    return ObstacleState(position, velocity, state.acceleration, state.destination)

"""
The robo-centric field a controller queries each step.
"""

from dataclasses import dataclass

from django.conf import settings

from .grid import grid_query, load_or_build_grid
from .shapes import sdf_gradient, sdf_union

ANALYTIC = 'analytic'
GRID = 'grid'

SDF_MODE_CHOICES = (
    (ANALYTIC, 'Analytic'),
    (GRID, 'Grid'),
)


@dataclass(frozen=True)
class RoboCentricField:
    """Signed distance to the robot boundary, evaluated in the body frame.

    In ``analytic`` mode values come from ``sdf_union`` and gradients from the
    central difference with step ``delta``. In ``grid`` mode both come from the
    precomputed grid.
    """

    shape: object
    mode: str = ANALYTIC
    delta: float = 1e-4
    grid: object = None

    def __post_init__(self):
        if self.mode not in (ANALYTIC, GRID):
            raise ValueError(f"unknown SDF mode {self.mode!r}")
        if self.mode == GRID and self.grid is None:
            raise ValueError("grid mode needs a grid")
        if not self.delta > 0:
            raise ValueError(f"finite-difference step must be positive, got {self.delta}")

    @classmethod
    def build(cls, shape, mode=ANALYTIC, delta=None, margin=None, resolution=None):
        delta = settings.SDF_GRADIENT_STEP if delta is None else delta
        grid = load_or_build_grid(shape, margin, resolution) if mode == GRID else None
        return cls(shape, mode, delta, grid)

    def value(self, q_b):
        if self.mode == GRID:
            return grid_query(self.grid, self.shape, q_b, self.delta)[0]
        return sdf_union(self.shape, q_b)

    def evaluate(self, q_b):
        """Return ``(value, gradient)`` for body-frame point(s) ``q_b``."""
        if self.mode == GRID:
            return grid_query(self.grid, self.shape, q_b, self.delta)
        return sdf_union(self.shape, q_b), sdf_gradient(self.shape, q_b, self.delta)

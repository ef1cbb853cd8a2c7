"""
Precomputed robo-centric SDF grid.

The field depends only on the robot's shape, so it can be sampled once on a
body-frame grid and interpolated at run time. The analytic field in
``geometry.shapes`` remains the reference: queries outside the grid fall back
to it.
"""

import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.exceptions import ImproperlyConfigured

from .shapes import as_points, sdf_gradient, sdf_union

logger = logging.getLogger(__name__)

HEADER_FLOATS = np.dtype('<f8')
HEADER_INTS = np.dtype('<i8')
HEADER_SIZE = 3 * HEADER_FLOATS.itemsize + 2 * HEADER_INTS.itemsize


@dataclass(frozen=True, eq=False)
class SdfGrid:
    """Signed distances sampled at ``origin + (i, j) * resolution``.

    ``values[i, j]`` holds the sample at cell ``(i, j)``, ``i`` along body x.
    """

    resolution: float
    origin: tuple
    values: np.ndarray

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError(f"grid resolution must be positive, got {self.resolution}")
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or min(values.shape) < 2:
            raise ValueError(f"grid needs at least 2x2 cells, got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'origin', (float(self.origin[0]), float(self.origin[1])))

    @property
    def extents(self):
        return self.values.shape

    @property
    def upper(self):
        nx, ny = self.extents
        return (
            self.origin[0] + (nx - 1) * self.resolution,
            self.origin[1] + (ny - 1) * self.resolution,
        )

    def cell_centers(self):
        nx, ny = self.extents
        xs = self.origin[0] + np.arange(nx) * self.resolution
        ys = self.origin[1] + np.arange(ny) * self.resolution
        return np.stack(np.meshgrid(xs, ys, indexing='ij'), axis=-1)

    def covers(self, q_b):
        points = as_points(q_b)
        low = np.array(self.origin)
        high = np.array(self.upper)
        return np.all((points >= low) & (points <= high), axis=-1)

    def to_bytes(self):
        nx, ny = self.extents
        header = np.array([self.resolution, *self.origin], dtype=HEADER_FLOATS).tobytes()
        header += np.array([nx, ny], dtype=HEADER_INTS).tobytes()
        return header + np.ascontiguousarray(self.values, dtype=HEADER_FLOATS).tobytes()

    @classmethod
    def from_bytes(cls, data):
        if len(data) < HEADER_SIZE:
            raise ValueError("truncated grid header")
        resolution, ox, oy = np.frombuffer(data, dtype=HEADER_FLOATS, count=3)
        nx, ny = np.frombuffer(data, dtype=HEADER_INTS, count=2, offset=3 * HEADER_FLOATS.itemsize)
        expected = HEADER_SIZE + int(nx) * int(ny) * HEADER_FLOATS.itemsize
        if len(data) != expected:
            raise ValueError(f"grid payload has {len(data)} bytes, expected {expected}")
        values = np.frombuffer(data, dtype=HEADER_FLOATS, offset=HEADER_SIZE).reshape(int(nx), int(ny))
        return cls(float(resolution), (float(ox), float(oy)), values.copy())

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def _cell_count(width, resolution):
    # round() absorbs representation noise such as 4.0 / 0.05 = 79.99999999999999
    return math.ceil(round(width / resolution, 9)) + 1


def build_grid(shape, margin=None, resolution=None, max_cells=None):
    """Sample ``sdf_union`` over the shape's bounding box inflated by ``margin``."""
    margin = settings.SDF_GRID_MARGIN if margin is None else margin
    resolution = settings.SDF_GRID_RESOLUTION if resolution is None else resolution
    max_cells = settings.SDF_GRID_MAX_CELLS if max_cells is None else max_cells
    if margin < 0:
        raise ValueError(f"grid margin must be non-negative, got {margin}")
    if not resolution > 0:
        raise ValueError(f"grid resolution must be positive, got {resolution}")

    xmin, ymin, xmax, ymax = shape.bounds
    origin = (xmin - margin, ymin - margin)
    nx = _cell_count(xmax - xmin + 2 * margin, resolution)
    ny = _cell_count(ymax - ymin + 2 * margin, resolution)
    if nx * ny > max_cells:
        raise ImproperlyConfigured(
            f"SDF grid of {nx}x{ny} cells exceeds the budget of {max_cells} cells; "
            "raise SDF_GRID_MAX_CELLS or coarsen the resolution"
        )

    xs = origin[0] + np.arange(nx) * resolution
    ys = origin[1] + np.arange(ny) * resolution
    centers = np.stack(np.meshgrid(xs, ys, indexing='ij'), axis=-1)
    logger.debug("Building %dx%d SDF grid at resolution %g", nx, ny, resolution)
    return SdfGrid(resolution, origin, sdf_union(shape, centers))


def grid_query(grid, shape, q_b, delta=None):
    """Bilinear value and patch gradient; analytic fallback outside the grid.

    Returns ``(value, gradient)`` with the same leading shape as ``q_b``.
    """
    points = as_points(q_b)
    flat = points.reshape(-1, 2)
    nx, ny = grid.extents
    res = grid.resolution

    scaled = (flat - np.array(grid.origin)) / res
    cell = np.floor(scaled).astype(int)
    cell[:, 0] = np.clip(cell[:, 0], 0, nx - 2)
    cell[:, 1] = np.clip(cell[:, 1], 0, ny - 2)
    fx, fy = (scaled - cell).T
    i, j = cell.T

    v00 = grid.values[i, j]
    v10 = grid.values[i + 1, j]
    v01 = grid.values[i, j + 1]
    v11 = grid.values[i + 1, j + 1]
    value = (
        v00 * (1 - fx) * (1 - fy)
        + v10 * fx * (1 - fy)
        + v01 * (1 - fx) * fy
        + v11 * fx * fy
    )
    gradient = np.stack([
        ((1 - fy) * (v10 - v00) + fy * (v11 - v01)) / res,
        ((1 - fx) * (v01 - v00) + fx * (v11 - v10)) / res,
    ], axis=-1)

    outside = ~grid.covers(flat)
    if outside.any():
        value[outside] = sdf_union(shape, flat[outside])
        gradient[outside] = sdf_gradient(shape, flat[outside], delta)

    return value.reshape(points.shape[:-1]), gradient.reshape(points.shape)


def grid_cache_key(shape, margin, resolution):
    description = repr((shape.primitives, float(margin), float(resolution)))
    return hashlib.sha256(description.encode('utf-8')).hexdigest()


def load_or_build_grid(shape, margin=None, resolution=None, cache_dir=None):
    """Return the grid for ``shape``, reusing a cached copy when one exists.

    Caching is active when ``cache_dir`` (default ``SDF_GRID_CACHE_DIR``) is
    non-empty. A cached file that fails to decode is rebuilt.
    """
    margin = settings.SDF_GRID_MARGIN if margin is None else margin
    resolution = settings.SDF_GRID_RESOLUTION if resolution is None else resolution
    cache_dir = settings.SDF_GRID_CACHE_DIR if cache_dir is None else cache_dir
    if not cache_dir:
        return build_grid(shape, margin, resolution)

    path = Path(cache_dir) / f"sdf-{grid_cache_key(shape, margin, resolution)}.grid"
    if path.exists():
        try:
            grid = SdfGrid.load(path)
        except ValueError:
            logger.warning("Discarding unreadable SDF grid cache %s", path)
        else:
            logger.info("Loaded SDF grid from cache %s", path)
            return grid

    grid = build_grid(shape, margin, resolution)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid.save(path)
    logger.info("Cached SDF grid at %s", path)
    return grid

"""
Collision points sampled on obstacle boundaries.
"""

from dataclasses import dataclass

import numpy as np

from .shapes import CIRCLE, Polygon, Primitive


@dataclass(frozen=True, eq=False)
class CollisionPointSet:
    obstacle_id: int
    points: np.ndarray

    def __len__(self):
        return len(self.points)


def as_obstacle_shape(obstacle_shape):
    """Accept a primitive, a polygon, or a bare vertex list."""
    if isinstance(obstacle_shape, (Primitive, Polygon)):
        return obstacle_shape
    return Polygon(tuple(obstacle_shape))


def _perimeter_points(vertices, count):
    start = vertices
    end = np.roll(vertices, -1, axis=0)
    lengths = np.linalg.norm(end - start, axis=-1)
    perimeter = lengths.sum()
    if perimeter <= 0.0:
        raise ValueError("degenerate polygon: zero perimeter")
    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    arc = np.arange(count) * perimeter / count
    edge = np.clip(np.searchsorted(cumulative, arc, side='right') - 1, 0, len(lengths) - 1)
    # Zero-length edges are never selected: searchsorted skips repeated breakpoints
    t = (arc - cumulative[edge]) / lengths[edge]
    return start[edge] + t[:, None] * (end[edge] - start[edge])


def sample_boundary(obstacle_shape, M, obstacle_id=0):
    """``M`` points evenly spaced by arc length along the boundary, local frame.

    Circles start at angle 0 and go counter-clockwise; polygons (and
    rectangles, from their lower-left corner) start at vertex 0.
    """
    if M < 3:
        raise ValueError(f"at least 3 collision points are needed, got {M}")
    shape = as_obstacle_shape(obstacle_shape)
    if isinstance(shape, Primitive) and shape.kind == CIRCLE:
        angles = 2.0 * np.pi * np.arange(M) / M
        points = shape.center + shape.radius * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    elif isinstance(shape, Primitive):
        points = _perimeter_points(shape.vertices(), M)
    else:
        points = _perimeter_points(shape.points, M)
    return CollisionPointSet(obstacle_id, points)


def sample_footprint(shape, M=24):
    """Body-frame points on every primitive's boundary of a robot shape, plus the body origin."""
    return np.vstack([np.zeros((1, 2))] + [sample_boundary(primitive, M).points for primitive in shape.primitives])

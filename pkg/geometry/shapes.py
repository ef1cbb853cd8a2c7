"""
Robot footprints and their robo-centric signed distance field.

Every distance function here accepts a single 2-vector or an ``(..., 2)`` array
of points and returns one signed distance per point: negative strictly inside,
positive outside, magnitude the Euclidean distance to the boundary.
"""

from dataclasses import dataclass

import numpy as np
from django.conf import settings

CIRCLE = 'circle'
RECTANGLE = 'rectangle'
POLYGON = 'polygon'

PRIMITIVE_KINDS = (
    (CIRCLE, 'Circle'),
    (RECTANGLE, 'Rectangle'),
)


def as_points(q):
    """Return ``q`` as a float array whose last axis has length 2."""
    points = np.asarray(q, dtype=float)
    if points.shape[-1:] != (2,):
        raise ValueError(f"expected 2-vectors, got array of shape {points.shape}")
    return points


@dataclass(frozen=True)
class Primitive:
    """A circle or an axis-aligned rectangle placed in the robot body frame."""

    kind: str
    radius: float = 0.0
    half_length: float = 0.0
    half_width: float = 0.0
    offset: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.kind == CIRCLE:
            if not self.radius > 0:
                raise ValueError(f"circle radius must be positive, got {self.radius}")
        elif self.kind == RECTANGLE:
            if not (self.half_length > 0 and self.half_width > 0):
                raise ValueError(
                    "rectangle half length and half width must be positive, "
                    f"got {self.half_length} and {self.half_width}"
                )
        else:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        object.__setattr__(self, 'offset', tuple(float(c) for c in self.offset))

    @classmethod
    def circle(cls, radius, offset=(0.0, 0.0)):
        return cls(CIRCLE, radius=float(radius), offset=offset)

    @classmethod
    def rectangle(cls, half_length, half_width, offset=(0.0, 0.0)):
        return cls(RECTANGLE, half_length=float(half_length), half_width=float(half_width), offset=offset)

    @property
    def center(self):
        return np.array(self.offset)

    @property
    def half_extents(self):
        if self.kind == CIRCLE:
            return np.array([self.radius, self.radius])
        return np.array([self.half_length, self.half_width])

    @property
    def bounds(self):
        """Axis-aligned bounding box as ``(xmin, ymin, xmax, ymax)``."""
        low = self.center - self.half_extents
        high = self.center + self.half_extents
        return (low[0], low[1], high[0], high[1])

    def sdf(self, q):
        local = as_points(q) - self.center
        if self.kind == CIRCLE:
            return np.linalg.norm(local, axis=-1) - self.radius
        d = np.abs(local) - self.half_extents
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
        inside = np.minimum(np.max(d, axis=-1), 0.0)
        return outside + inside

    def gradient(self, q):
        """Closed-form gradient of :meth:`sdf`.

        At the circle center and on rectangle ridges the gradient is not
        defined; a fixed unit vector (+x, or the first tied face) is returned.
        """
        local = as_points(q) - self.center
        if self.kind == CIRCLE:
            norm = np.linalg.norm(local, axis=-1, keepdims=True)
            safe = np.where(norm > 0.0, norm, 1.0)
            return np.where(norm > 0.0, local / safe, np.array([1.0, 0.0]))
        sign = np.where(local < 0.0, -1.0, 1.0)
        d = np.abs(local) - self.half_extents
        positive = np.maximum(d, 0.0)
        outside_norm = np.linalg.norm(positive, axis=-1, keepdims=True)
        outside_grad = positive / np.where(outside_norm > 0.0, outside_norm, 1.0)
        # Inside: the nearest face wins, x before y on ties
        face = np.argmax(d, axis=-1)
        inside_grad = np.stack([face == 0, face == 1], axis=-1).astype(float)
        grad = np.where(outside_norm > 0.0, outside_grad, inside_grad)
        return grad * sign

    def contains(self, q):
        """Strict containment test, independent of :meth:`sdf`."""
        local = as_points(q) - self.center
        if self.kind == CIRCLE:
            return np.sum(local ** 2, axis=-1) < self.radius ** 2
        return np.all(np.abs(local) < self.half_extents, axis=-1)

    def vertices(self):
        """Counter-clockwise corners starting at the lower-left one (rectangles only)."""
        if self.kind != RECTANGLE:
            raise ValueError("only rectangles have vertices")
        l, w = self.half_length, self.half_width
        corners = np.array([[-l, -w], [l, -w], [l, w], [-l, w]])
        return corners + self.center

    def outline(self, count=64):
        """Closed boundary polyline for drawing."""
        if self.kind == CIRCLE:
            angles = np.linspace(0.0, 2.0 * np.pi, count + 1)
            return self.center + self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        corners = self.vertices()
        return np.vstack([corners, corners[:1]])


@dataclass(frozen=True)
class Polygon:
    """A simple polygon given by its vertices in order (obstacle footprints)."""

    vertices: tuple

    def __post_init__(self):
        points = tuple(tuple(float(c) for c in vertex) for vertex in self.vertices)
        if len(points) < 3 or any(len(vertex) != 2 for vertex in points):
            raise ValueError("a polygon needs at least three 2-D vertices")
        object.__setattr__(self, 'vertices', points)
        if self.perimeter <= 0.0:
            raise ValueError("degenerate polygon: zero perimeter")

    kind = POLYGON

    @property
    def points(self):
        return np.array(self.vertices)

    @property
    def edges(self):
        start = self.points
        return start, np.roll(start, -1, axis=0)

    @property
    def perimeter(self):
        start, end = self.edges
        return float(np.sum(np.linalg.norm(end - start, axis=-1)))

    @property
    def bounds(self):
        points = self.points
        low, high = points.min(axis=0), points.max(axis=0)
        return (low[0], low[1], high[0], high[1])

    def sdf(self, q):
        points = as_points(q)
        start, end = self.edges
        distance = np.full(points.shape[:-1], np.inf)
        inside = np.zeros(points.shape[:-1], dtype=bool)
        for a, b in zip(start, end):
            edge = b - a
            rel = points - a
            t = np.clip((rel @ edge) / (edge @ edge), 0.0, 1.0)
            nearest = a + t[..., None] * edge
            distance = np.minimum(distance, np.linalg.norm(points - nearest, axis=-1))
            # Even-odd crossing test on a ray towards +x
            crosses = (a[1] > points[..., 1]) != (b[1] > points[..., 1])
            with np.errstate(divide='ignore', invalid='ignore'):
                x_cross = a[0] + (points[..., 1] - a[1]) * edge[0] / edge[1]
            inside ^= crosses & (points[..., 0] < x_cross)
        return np.where(inside, -distance, distance)

    def contains(self, q):
        return self.sdf(q) < 0.0

    def outline(self, count=None):
        points = self.points
        return np.vstack([points, points[:1]])


@dataclass(frozen=True)
class RobotShape:
    """Union of primitives describing the robot footprint in its body frame."""

    primitives: tuple

    def __post_init__(self):
        primitives = tuple(self.primitives)
        if not primitives:
            raise ValueError("a robot shape needs at least one primitive")
        object.__setattr__(self, 'primitives', primitives)

    @classmethod
    def l_shape(cls):
        """The L-shaped robot used by the bundled scenarios."""
        return cls((
            Primitive.rectangle(1.0, 0.25),
            Primitive.rectangle(0.25, 1.0, offset=(-0.75, 0.75)),
        ))

    @property
    def bounds(self):
        boxes = np.array([primitive.bounds for primitive in self.primitives])
        return (boxes[:, 0].min(), boxes[:, 1].min(), boxes[:, 2].max(), boxes[:, 3].max())

    def sdf(self, q):
        return sdf_union(self, q)

    def contains(self, q):
        inside = [primitive.contains(q) for primitive in self.primitives]
        return np.any(inside, axis=0)


def sdf_primitive(prim, q_b):
    """Signed distance from body-frame point(s) ``q_b`` to one primitive."""
    return prim.sdf(q_b)


def sdf_union(shape, q_b):
    """Signed distance to the union of the shape's primitives (min over members)."""
    values = np.stack([primitive.sdf(q_b) for primitive in shape.primitives])
    return values.min(axis=0)


def sdf_gradient(shape, q_b, delta=None):
    """Central finite-difference gradient of :func:`sdf_union`.

    ``delta`` defaults to the ``SDF_GRADIENT_STEP`` setting.
    """
    if delta is None:
        delta = settings.SDF_GRADIENT_STEP
    if not delta > 0:
        raise ValueError(f"finite-difference step must be positive, got {delta}")
    points = as_points(q_b)
    grad = np.empty(points.shape)
    for axis in range(2):
        step = np.zeros(2)
        step[axis] = delta
        grad[..., axis] = (sdf_union(shape, points + step) - sdf_union(shape, points - step)) / (2.0 * delta)
    return grad


def sdf_gradient_exact(shape, q_b):
    """Analytic gradient of :func:`sdf_union`.

    Uses the gradient of the primitive attaining the minimum; when several
    primitives tie, the first one in list order is used.
    """
    points = as_points(q_b)
    values = np.stack([primitive.sdf(points) for primitive in shape.primitives])
    grads = np.stack([primitive.gradient(points) for primitive in shape.primitives])
    nearest = np.argmin(values, axis=0)
    return np.take_along_axis(grads, nearest[None, ..., None], axis=0)[0]


@dataclass(frozen=True)
class Pose2:
    """Planar pose of the robot body frame in the world frame."""

    x: float
    y: float
    theta: float = 0.0

    @property
    def p(self):
        return np.array([self.x, self.y])

    @property
    def rotation(self):
        c, s = np.cos(self.theta), np.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    @property
    def rotation_derivative(self):
        """d R(theta) / d theta."""
        c, s = np.cos(self.theta), np.sin(self.theta)
        return np.array([[-s, -c], [c, -s]])


def world_to_body(pose, q_w):
    """q_b = R(theta)^-1 (q_w - p), for one point or an array of points."""
    return (as_points(q_w) - pose.p) @ pose.rotation


def body_to_world(pose, q_b):
    return as_points(q_b) @ pose.rotation.T + pose.p

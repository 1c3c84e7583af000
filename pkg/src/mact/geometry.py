"""Planar polygon utilities and rigid planar poses.

All coordinates are millimetres. Polygons are stored as ``(V, 2)`` arrays of
vertices in counter-clockwise order without repeating the first vertex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


def shoelace_area(vertices: np.ndarray) -> float:
    """Signed area, positive for counter-clockwise vertex order."""
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(vertices: np.ndarray) -> np.ndarray:
    x, y = vertices[:, 0], vertices[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return np.array([cx, cy])


def edge_lengths(vertices: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.roll(vertices, -1, axis=0) - vertices, axis=1)


def perimeter(vertices: np.ndarray) -> float:
    return float(edge_lengths(vertices).sum())


def points_in_polygon(points: np.ndarray, vertices: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Even-odd crossing test for many points at once.

    With ``tol > 0`` points within ``tol`` of the boundary count as inside.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    px, py = pts[:, 0:1], pts[:, 1:2]
    x1, y1 = vertices[:, 0], vertices[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    straddles = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    crossings = straddles & (px < x_cross)
    inside = crossings.sum(axis=1) % 2 == 1
    if tol > 0:
        inside |= distance_to_boundary(pts, vertices) <= tol
    return inside


def distance_to_boundary(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = vertices[None, :, :]
    b = np.roll(vertices, -1, axis=0)[None, :, :]
    p = pts[:, None, :]
    ab = b - a
    denom = np.maximum((ab**2).sum(-1), 1e-300)
    u = np.clip(((p - a) * ab).sum(-1) / denom, 0.0, 1.0)
    closest = a + u[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1).min(axis=1)


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def is_simple(vertices: np.ndarray) -> bool:
    """True when no two non-adjacent edges cross."""
    n = len(vertices)
    for i in range(n):
        a1, a2 = vertices[i], vertices[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_intersect(a1, a2, vertices[j], vertices[(j + 1) % n]):
                return False
    return True


@dataclass(frozen=True)
class RegionOfInterest:
    """Closed simple polygon marking the scan target, in the region frame."""

    boundary: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundary, dtype=float)
        if b.ndim != 2 or b.shape[1] != 2 or len(b) < 3:
            raise ParameterError(f"region boundary must be (V>=3, 2), got {b.shape}")
        if not np.all(np.isfinite(b)):
            raise ParameterError("region boundary has non-finite vertices")
        area = shoelace_area(b)
        if area == 0.0:
            raise ParameterError("region has zero area")
        if area < 0:
            b = b[::-1].copy()
        b.setflags(write=False)
        object.__setattr__(self, "boundary", b)

    @property
    def area(self) -> float:
        return shoelace_area(self.boundary)

    @property
    def perimeter(self) -> float:
        return perimeter(self.boundary)

    @property
    def centroid(self) -> np.ndarray:
        return polygon_centroid(self.boundary)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax)."""
        lo, hi = self.boundary.min(axis=0), self.boundary.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        return points_in_polygon(points, self.boundary, tol=tol)

    def rolled(self, start: int) -> "RegionOfInterest":
        return RegionOfInterest(np.roll(self.boundary, -start, axis=0))

    def point_at(self, s: np.ndarray | float) -> np.ndarray:
        """Boundary points at arc lengths ``s`` measured from vertex 0."""
        verts = self.boundary
        lengths = edge_lengths(verts)
        cum = np.concatenate([[0.0], np.cumsum(lengths)])
        s_arr = np.mod(np.atleast_1d(np.asarray(s, dtype=float)), cum[-1])
        idx = np.clip(np.searchsorted(cum, s_arr, side="right") - 1, 0, len(verts) - 1)
        frac = (s_arr - cum[idx]) / lengths[idx]
        nxt = np.roll(verts, -1, axis=0)
        out = verts[idx] + frac[:, None] * (nxt[idx] - verts[idx])
        return out if np.ndim(s) else out[0]

    def arc_param(self, point) -> float:
        """Arc length (from vertex 0) of the boundary point closest to ``point``."""
        p = np.asarray(point, dtype=float)
        a = self.boundary
        b = np.roll(a, -1, axis=0)
        ab = b - a
        u = np.clip(((p - a) * ab).sum(1) / (ab**2).sum(1), 0.0, 1.0)
        d = np.linalg.norm(a + u[:, None] * ab - p, axis=1)
        k = int(np.argmin(d))
        lengths = edge_lengths(a)
        return float(lengths[:k].sum() + u[k] * lengths[k])


def resample_arc(region: RegionOfInterest, s_from: float, s_to: float, step: float) -> np.ndarray:
    """Points along the boundary from ``s_from`` to ``s_to`` (shorter way round).

    Both endpoints are included and consecutive points are at most ``step``
    apart in arc length.
    """
    total = region.perimeter
    fwd = (s_to - s_from) % total
    delta = fwd if fwd <= total - fwd else fwd - total
    n = max(int(math.ceil(abs(delta) / step - 1e-12)), 1)
    return region.point_at(s_from + delta * np.arange(n + 1) / n)


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    t = math.remainder(theta, 2 * math.pi)
    return math.pi if t == -math.pi else t


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose:
    """Rigid planar transform mapping region-frame points to the world frame."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ rotation(self.theta).T + self.translation

    def inverse_apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return (p - self.translation) @ rotation(self.theta)

    def compose(self, inner: "Pose") -> "Pose":
        """Pose equal to applying ``inner`` first, then ``self``."""
        t = rotation(self.theta) @ inner.translation + self.translation
        return Pose(t[0], t[1], self.theta + inner.theta)

    def about(self, center) -> "Pose":
        """This pose's rotation taken about ``center`` instead of the origin."""
        c = np.asarray(center, dtype=float)
        t = c - rotation(self.theta) @ c + self.translation
        return Pose(t[0], t[1], self.theta)

"""Region generation, coverage paths and the scripted expert."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParameterError, TaskError
from .geometry import RegionOfInterest, resample_arc
from .heightfield import HeightField

N_HARMONICS = 4  # sin(k*theta) terms for k = 2..5


@dataclass(frozen=True)
class RegionParams:
    r_min: float = 15.0
    r_max: float = 22.0
    amplitude: float = 0.08
    n_vertices: int = 64
    center: tuple[float, float] = (0.0, 0.0)
    amplitudes: tuple[float, ...] | None = None

    def validate(self) -> None:
        if self.r_min <= 0 or self.r_max <= 0 or self.amplitude < 0:
            raise ParameterError("region radii must be positive and amplitude non-negative")
        if self.r_min > self.r_max:
            raise ParameterError(f"r_min {self.r_min} exceeds r_max {self.r_max}")
        if self.n_vertices < 3:
            raise ParameterError("a region needs at least 3 vertices")
        if self.amplitudes is not None and len(self.amplitudes) != N_HARMONICS:
            raise ParameterError(f"amplitudes must have {N_HARMONICS} entries")


def gen_region(seed: int, params: RegionParams = RegionParams()) -> RegionOfInterest:
    """Star-shaped polygon from a radially perturbed circle.

    ``r(theta) = r0 * (1 + sum_k a_k sin(k*theta + phi_k))`` for k = 2..5,
    sampled at ``params.n_vertices`` equally spaced angles.
    """
    params.validate()
    rng = np.random.default_rng(seed)
    r0 = rng.uniform(params.r_min, params.r_max)
    amps = rng.uniform(-params.amplitude, params.amplitude, size=N_HARMONICS)
    phases = rng.uniform(0.0, 2 * math.pi, size=N_HARMONICS)
    if params.amplitudes is not None:
        amps = np.asarray(params.amplitudes, dtype=float)
    # the perturbation can reach -sum|a_k|, so r > 0 needs sum|a_k| < 1
    if np.abs(amps).sum() >= 1.0:
        raise ParameterError(f"perturbation amplitudes {amps} allow non-positive radius")
    theta = 2 * math.pi * np.arange(params.n_vertices) / params.n_vertices
    k = np.arange(2, 2 + N_HARMONICS)[:, None]
    r = r0 * (1.0 + (amps[:, None] * np.sin(k * theta + phases[:, None])).sum(0))
    pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1) + np.asarray(params.center)
    return RegionOfInterest(pts)


@dataclass(frozen=True)
class TaskSpec:
    """Scan task: what to trace, on which random region, with which spacing."""

    kind: str = "contour"
    seed: int = 0
    region: RegionParams = field(default_factory=RegionParams)
    line_spacing: float = 5.0
    step: float = 5.0

    def validate(self) -> None:
        if self.kind not in ("contour", "raster"):
            raise ParameterError(f"unknown task kind {self.kind!r}")
        if self.line_spacing <= 0 or self.step <= 0:
            raise ParameterError("line_spacing and step must be positive")
        self.region.validate()

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        d = dict(d)
        region = d.pop("region", {})
        if "center" in region:
            region["center"] = tuple(region["center"])
        if region.get("amplitudes") is not None:
            region["amplitudes"] = tuple(region["amplitudes"])
        return cls(region=RegionParams(**region), **d)

    def to_dict(self) -> dict:
        r = self.region
        return {
            "kind": self.kind,
            "seed": self.seed,
            "region": {
                "r_min": r.r_min,
                "r_max": r.r_max,
                "amplitude": r.amplitude,
                "n_vertices": r.n_vertices,
                "center": list(r.center),
                "amplitudes": None if r.amplitudes is None else list(r.amplitudes),
            },
            "line_spacing": self.line_spacing,
            "step": self.step,
        }


@dataclass(frozen=True)
class ScanPath:
    waypoints: np.ndarray  # (n, 3) mm
    kind: str

    def __len__(self) -> int:
        return len(self.waypoints)


def project_to_surface(points, field: HeightField) -> np.ndarray:
    """Lift planar points onto the surface: (x, y) -> (x, y, h(x, y))."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros((0, 3))
    inside = field.contains(pts[:, 0], pts[:, 1])
    if not inside.all():
        bad = int(np.flatnonzero(~inside)[0])
        raise DomainError(f"point {bad} at {tuple(pts[bad])} is outside field extent {field.extent}")
    z = field.sample(pts[:, 0], pts[:, 1])
    return np.column_stack([pts, z])


def contour_path(
    region: RegionOfInterest, step: float, field: HeightField, start=None
) -> ScanPath:
    """Boundary resampled at uniform arc length ``step`` and projected.

    Traversal begins at the vertex nearest ``start`` (planar) when given.
    """
    if step <= 0:
        raise ParameterError("step must be positive")
    if region.perimeter < step:
        raise TaskError(f"perimeter {region.perimeter:.3f} mm is shorter than step {step}")
    if start is not None:
        d = np.linalg.norm(region.boundary - np.asarray(start, dtype=float)[:2], axis=1)
        region = region.rolled(int(np.argmin(d)))
    n = int(math.floor(region.perimeter / step + 1e-9))
    s = step * np.arange(n)
    return ScanPath(project_to_surface(region.point_at(s), field), "contour")


def sweep_interval(region: RegionOfInterest, y: float) -> tuple[float, float] | None:
    """[xmin, xmax] where the horizontal line at ``y`` meets the region."""
    a = region.boundary
    b = np.roll(a, -1, axis=0)
    xs = []
    for (x1, y1), (x2, y2) in zip(a, b):
        if (y1 - y) * (y2 - y) > 0:
            continue
        if y1 == y2:
            xs.extend((x1, x2))
        else:
            xs.append(x1 + (y - y1) * (x2 - x1) / (y2 - y1))
    if not xs:
        return None
    return min(xs), max(xs)


def sweep_intervals(region: RegionOfInterest, y: float, tol: float = 1e-9) -> list[tuple[float, float]]:
    """Inside intervals of the horizontal line at ``y``, left to right.

    Non-convex regions can give several. A line that only touches the
    boundary at isolated points yields those points as zero-length intervals.
    """
    a = region.boundary
    b = np.roll(a, -1, axis=0)
    xs = []
    for (x1, y1), (x2, y2) in zip(a, b):
        if (y1 - y) * (y2 - y) > 0:
            continue
        if y1 == y2:
            xs.extend((x1, x2))
        else:
            xs.append(x1 + (y - y1) * (x2 - x1) / (y2 - y1))
    if not xs:
        return []
    xs = np.unique(xs)
    mids = np.column_stack([(xs[:-1] + xs[1:]) / 2, np.full(len(xs) - 1, y)])
    inside = region.contains(mids, tol=tol) if len(mids) else np.zeros(0, dtype=bool)
    out: list[tuple[float, float]] = []
    for k, ok in enumerate(inside):
        if not ok:
            continue
        if out and out[-1][1] == xs[k]:
            out[-1] = (out[-1][0], float(xs[k + 1]))
        else:
            out.append((float(xs[k]), float(xs[k + 1])))
    if not out:
        out = [(float(x), float(x)) for x in xs]
    return out


def _resample_segment(p, q, step: float) -> np.ndarray:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    n = int(math.ceil(np.linalg.norm(q - p) / step - 1e-12))
    if n == 0:
        return p[None, :]
    t = np.arange(n + 1) / n
    return p + t[:, None] * (q - p)


def _boundary_link(region: RegionOfInterest, p, q, step: float) -> np.ndarray:
    """Boundary points strictly between ``p`` and ``q`` (both on the boundary)."""
    return resample_arc(region, region.arc_param(p), region.arc_param(q), step)[1:-1]


def raster_path(
    region: RegionOfInterest, line_spacing: float, step: float, field: HeightField
) -> ScanPath:
    """Boustrophedon sweep from the top of the region downwards.

    Lines alternate direction, starting left-to-right. Where a line crosses a
    concavity its inside pieces are joined along the boundary, and
    consecutive lines are joined the same way, so every waypoint stays
    inside the region.
    """
    if line_spacing <= 0 or step <= 0:
        raise ParameterError("line_spacing and step must be positive")
    xmin, ymin, xmax, ymax = region.bounds
    if ymax - ymin < line_spacing:
        raise TaskError(f"region height {ymax - ymin:.3f} mm fits no sweep line at spacing {line_spacing}")
    lines = []
    n = 0
    while ymax - n * line_spacing >= ymin - 1e-9:
        y = ymax - n * line_spacing
        intervals = sweep_intervals(region, y)
        if intervals:
            segs = [((x0, y), (x1, y)) for x0, x1 in intervals]
            if len(lines) % 2 == 1:
                segs = [(q, p) for p, q in reversed(segs)]
            parts = [_resample_segment(*segs[0], step)]
            for (_, prev_end), seg in zip(segs[:-1], segs[1:]):
                parts.append(_boundary_link(region, prev_end, seg[0], step))
                parts.append(_resample_segment(*seg, step))
            lines.append(np.concatenate(parts, axis=0))
        n += 1
    pieces = [lines[0]]
    for prev, line in zip(lines[:-1], lines[1:]):
        pieces.append(_boundary_link(region, prev[-1], line[0], step))
        pieces.append(line)
    pts = np.concatenate(pieces, axis=0)
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-9
    return ScanPath(project_to_surface(pts[keep], field), "raster")


def build_path(task: TaskSpec, region: RegionOfInterest, field: HeightField, start=None) -> ScanPath:
    if task.kind == "contour":
        return contour_path(region, task.step, field, start=start)
    return raster_path(region, task.line_spacing, task.step, field)


class ScriptedExpert:
    """Follows a scan path with privileged state.

    The current target is the first waypoint not yet consumed; a waypoint is
    consumed once the probe is within ``tolerance`` of it. After the last
    waypoint the expert holds position there.
    """

    def __init__(self, path: ScanPath, tolerance: float = 1.0):
        if len(path) == 0:
            raise ParameterError("expert needs a non-empty path")
        self.path = path
        self.tolerance = tolerance
        self.index = 0

    @property
    def done(self) -> bool:
        return self.index >= len(self.path)

    def __call__(self, probe_position) -> np.ndarray:
        wp = self.path.waypoints
        p = np.asarray(probe_position, dtype=float)
        while self.index < len(wp) and np.linalg.norm(wp[self.index] - p) <= self.tolerance:
            self.index += 1
        return wp[min(self.index, len(wp) - 1)].copy()


def scripted_expert(path: ScanPath, probe_position, consumed: int = 0, tolerance: float = 1.0):
    """Stateless form of :class:`ScriptedExpert`: returns ``(target, consumed)``."""
    expert = ScriptedExpert(path, tolerance)
    expert.index = consumed
    target = expert(probe_position)
    return target, expert.index

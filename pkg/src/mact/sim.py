"""Procedural 2.5D scanning environment.

The world holds a height field and a region of interest, both expressed in a
region frame that is placed in the world by ``region_pose``. Disturbances move
that pose; the probe is a free kinematic point in world coordinates.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from dataclasses import field as dc_field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import Pose, RegionOfInterest
from .heightfield import FieldParams, HeightField, generate_field
from .taskgen import TaskSpec, gen_region

TISSUE_RGB = np.array([0.78, 0.42, 0.40])
REGION_RGB = np.array([0.20, 0.72, 0.30])
REGION_ALPHA = 0.65
LIGHT_DIR = np.array([0.35, 0.45, 0.82]) / np.linalg.norm([0.35, 0.45, 0.82])
MASK_CELL = 0.5  # mm, resolution of the cached region mask


@dataclass(frozen=True)
class Disturbance:
    """Planar shift applied before motion at ``step_index``; rotation is about the region centroid."""

    step_index: int
    dx: float = 0.0
    dy: float = 0.0
    dtheta: float = 0.0

    @property
    def delta(self) -> Pose:
        return Pose(self.dx, self.dy, self.dtheta)


@dataclass(frozen=True)
class EnvConfig:
    resolution: int = 64
    footprint: float = 80.0
    max_step: float = 5.0
    camera_standoff: float = 60.0
    start_height: tuple[float, float] = (5.0, 15.0)
    start_offset: float = 20.0
    field: FieldParams = dc_field(default_factory=FieldParams)
    task: TaskSpec = dc_field(default_factory=TaskSpec)
    disturbances: tuple[Disturbance, ...] = ()

    def validate(self) -> None:
        if not isinstance(self.resolution, int) or self.resolution < 4:
            raise ConfigError(f"resolution must be an integer >= 4, got {self.resolution!r}")
        if self.footprint <= 0 or self.max_step <= 0 or self.camera_standoff <= 0:
            raise ConfigError("footprint, max_step and camera_standoff must be positive")
        if self.start_height[0] < 0 or self.start_height[1] < self.start_height[0]:
            raise ConfigError(f"invalid start_height range {self.start_height}")
        if self.start_offset < 0:
            raise ConfigError("start_offset must be non-negative")
        self.field.validate()
        try:
            self.task.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        reach = self.start_offset + self.task.region.r_max * 1.5 + self.footprint
        if reach > self.field.size / 2 + self.footprint:
            raise ConfigError("field too small for the region and start offset")

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        try:
            fp = d.pop("field", {})
            for key in ("bump_height", "bump_sigma"):
                if key in fp:
                    fp[key] = tuple(fp[key])
            task = TaskSpec.from_dict(d.pop("task", {}))
            dist = tuple(Disturbance(**x) for x in d.pop("disturbances", []))
            if "start_height" in d:
                d["start_height"] = tuple(d["start_height"])
            cfg = cls(field=FieldParams(**fp), task=task, disturbances=dist, **d)
        except TypeError as exc:
            raise ConfigError(f"bad environment config: {exc}") from exc
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task"] = self.task.to_dict()
        return d


def load_env_config(path) -> EnvConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read environment config {path}: {exc}") from exc
    return EnvConfig.from_dict(data)


def save_env_config(config: EnvConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2))


@dataclass(frozen=True)
class ProbeState:
    position: np.ndarray

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise ValueError(f"probe position must be finite, got {p}")
        p.setflags(write=False)
        object.__setattr__(self, "position", p)


@dataclass(frozen=True)
class Observation:
    rgb: np.ndarray  # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray  # (H, W) float32, mm
    position: np.ndarray  # (3,) mm


@dataclass(frozen=True)
class ContactInfo:
    surface_error: float


@dataclass(frozen=True)
class RegionMask:
    """Rasterised region interior in the region frame, cached for rendering."""

    mask: np.ndarray
    origin: tuple[float, float]
    cell: float

    @classmethod
    def build(cls, region: RegionOfInterest, cell: float = MASK_CELL) -> "RegionMask":
        xmin, ymin, xmax, ymax = region.bounds
        nx = int(np.ceil((xmax - xmin) / cell)) + 2
        ny = int(np.ceil((ymax - ymin) / cell)) + 2
        ox, oy = xmin - cell, ymin - cell
        xs = ox + cell * (np.arange(nx) + 0.5)
        ys = oy + cell * (np.arange(ny) + 0.5)
        gx, gy = np.meshgrid(xs, ys)
        inside = region.contains(np.column_stack([gx.ravel(), gy.ravel()]))
        mask = inside.reshape(ny, nx)
        mask.setflags(write=False)
        return cls(mask, (ox, oy), cell)

    def lookup(self, points: np.ndarray) -> np.ndarray:
        j = np.floor((points[..., 0] - self.origin[0]) / self.cell).astype(int)
        i = np.floor((points[..., 1] - self.origin[1]) / self.cell).astype(int)
        ny, nx = self.mask.shape
        ok = (i >= 0) & (i < ny) & (j >= 0) & (j < nx)
        out = np.zeros(points.shape[:-1], dtype=bool)
        out[ok] = self.mask[i[ok], j[ok]]
        return out


@dataclass(frozen=True)
class WorldState:
    config: EnvConfig
    field: HeightField
    region: RegionOfInterest
    region_mask: RegionMask
    region_pose: Pose
    probe: ProbeState
    step_index: int = 0

    @property
    def disturbance_schedule(self) -> tuple[Disturbance, ...]:
        return self.config.disturbances

    def to_region_frame(self, points) -> np.ndarray:
        return self.region_pose.inverse_apply(points)

    def world_height(self, xy) -> np.ndarray:
        """Surface height under world-frame planar points (edge-extended)."""
        local = self.to_region_frame(np.asarray(xy, dtype=float))
        return self.field.sample(local[..., 0], local[..., 1], clamp=True)

    def region_boundary_world(self) -> np.ndarray:
        return self.region_pose.apply(self.region.boundary)

    def surface_error(self) -> float:
        p = self.probe.position
        return float(p[2] - self.world_height(p[:2]))


def reset(config: EnvConfig, seed: int) -> tuple[WorldState, Observation]:
    """Fresh world for ``seed``: new surface, new region, randomised probe start."""
    if not isinstance(config, EnvConfig):
        raise ConfigError(f"expected EnvConfig, got {type(config).__name__}")
    config.validate()
    field_seq, region_seq, start_seq = np.random.SeedSequence(seed).spawn(3)
    hfield = generate_field(config.field, np.random.default_rng(field_seq))
    region_seed = int(np.random.default_rng(region_seq).integers(2**31))
    region = gen_region(region_seed, config.task.region)
    rng = np.random.default_rng(start_seq)
    xy = region.centroid + rng.uniform(-config.start_offset, config.start_offset, size=2)
    z = hfield.sample(xy[0], xy[1]) + rng.uniform(*config.start_height)
    state = WorldState(
        config=config,
        field=hfield,
        region=region,
        region_mask=RegionMask.build(region),
        region_pose=Pose(),
        probe=ProbeState(np.array([xy[0], xy[1], z])),
    )
    return state, render(state)


def apply_disturbance(state: WorldState, delta: Pose) -> WorldState:
    """Move region and surface rigidly; ``delta`` rotates about the region centroid."""
    centroid = state.region_pose.apply(state.region.centroid)
    new_pose = delta.about(centroid).compose(state.region_pose)
    return replace(state, region_pose=new_pose)


def step(state: WorldState, target) -> tuple[WorldState, Observation, ContactInfo]:
    """Move the probe toward an absolute target, at most ``max_step`` mm."""
    target = np.asarray(target, dtype=float).reshape(3)
    if not np.all(np.isfinite(target)):
        raise ValueError(f"target must be finite, got {target}")
    for event in state.config.disturbances:
        if event.step_index == state.step_index:
            state = apply_disturbance(state, event.delta)
    pos = state.probe.position
    move = target - pos
    dist = float(np.linalg.norm(move))
    if dist > state.config.max_step:
        move = move * (state.config.max_step / dist)
    state = replace(state, probe=ProbeState(pos + move), step_index=state.step_index + 1)
    return state, render(state), ContactInfo(state.surface_error())


def render(state: WorldState) -> Observation:
    """Orthographic top-down view centred on the probe."""
    cfg = state.config
    n = cfg.resolution
    px = cfg.footprint / n
    offsets = (np.arange(n) + 0.5 - n / 2) * px
    probe = state.probe.position
    gx, gy = np.meshgrid(probe[0] + offsets, probe[1] - offsets)
    world = np.stack([gx, gy], axis=-1)
    local = state.to_region_frame(world)
    heights = state.field.sample(local[..., 0], local[..., 1], clamp=True)

    # row index runs toward -y
    dh_dy, dh_dx = np.gradient(heights, -px, px)
    normals = np.stack([-dh_dx, -dh_dy, np.ones_like(heights)], axis=-1)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    shade = 0.35 + 0.65 * np.clip(normals @ LIGHT_DIR, 0.0, 1.0)
    rgb = TISSUE_RGB * shade[..., None]
    inside = state.region_mask.lookup(local)
    rgb[inside] = (1 - REGION_ALPHA) * rgb[inside] + REGION_ALPHA * REGION_RGB * shade[inside, None]
    c = n // 2
    rgb[c - 1 : c + 1, c - 1 : c + 1] = 0.05

    depth = np.maximum(probe[2] + cfg.camera_standoff - heights, 0.0)
    return Observation(
        rgb=np.clip(rgb, 0.0, 1.0).astype(np.float32),
        depth=depth.astype(np.float32),
        position=probe.copy(),
    )


class ScanEnv:
    """Stateful wrapper around :func:`reset` / :func:`step`."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.state: WorldState | None = None

    def reset(self, seed: int) -> Observation:
        self.state, obs = reset(self.config, seed)
        return obs

    def step(self, target) -> tuple[Observation, ContactInfo]:
        self.state, obs, contact = step(self.state, target)
        return obs, contact

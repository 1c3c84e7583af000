"""Gridded surface elevation and its procedural generator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ParameterError


@dataclass(frozen=True)
class HeightField:
    """Surface elevation sampled on a regular grid.

    ``heights[i, j]`` is the elevation at ``x = origin[0] + j * cell_size``,
    ``y = origin[1] + i * cell_size``.
    """

    heights: np.ndarray
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        h = np.array(self.heights, dtype=float)
        if h.ndim != 2 or h.shape[0] < 2 or h.shape[1] < 2:
            raise ParameterError(f"height grid must be at least 2x2, got {h.shape}")
        if not np.all(np.isfinite(h)):
            raise ParameterError("height grid contains non-finite values")
        if not self.cell_size > 0:
            raise ParameterError(f"cell_size must be positive, got {self.cell_size}")
        h.setflags(write=False)
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the grid."""
        rows, cols = self.heights.shape
        x0, y0 = self.origin
        return x0, y0, x0 + (cols - 1) * self.cell_size, y0 + (rows - 1) * self.cell_size

    def contains(self, x, y) -> np.ndarray:
        xmin, ymin, xmax, ymax = self.extent
        x, y = np.asarray(x), np.asarray(y)
        return (x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax)

    def sample(self, x, y, clamp: bool = False) -> np.ndarray:
        """Vectorised bilinear lookup. ``clamp`` extends edge values outwards."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        rows, cols = self.heights.shape
        u = (x - self.origin[0]) / self.cell_size
        v = (y - self.origin[1]) / self.cell_size
        if clamp:
            u = np.clip(u, 0.0, cols - 1)
            v = np.clip(v, 0.0, rows - 1)
        j = np.clip(np.floor(u).astype(int), 0, cols - 2)
        i = np.clip(np.floor(v).astype(int), 0, rows - 2)
        fu, fv = u - j, v - i
        h = self.heights
        return (
            h[i, j] * (1 - fu) * (1 - fv)
            + h[i, j + 1] * fu * (1 - fv)
            + h[i + 1, j] * (1 - fu) * fv
            + h[i + 1, j + 1] * fu * fv
        )


def surface_height(field: HeightField, x: float, y: float) -> float:
    """Bilinear height at ``(x, y)``; raises :class:`DomainError` outside the grid."""
    if not (np.isfinite(x) and np.isfinite(y)) or not field.contains(x, y):
        raise DomainError(f"point ({x}, {y}) is outside field extent {field.extent}")
    return float(field.sample(x, y))


@dataclass(frozen=True)
class FieldParams:
    """Procedural surface: a base plane plus a seeded sum of Gaussian bumps."""

    size: float = 200.0
    cell_size: float = 2.0
    base_height: float = 0.0
    n_bumps: int = 6
    bump_height: tuple[float, float] = (-6.0, 6.0)
    bump_sigma: tuple[float, float] = (20.0, 45.0)
    bump_spread: float = 60.0

    def validate(self) -> None:
        if self.size <= 0 or self.cell_size <= 0 or self.size < 2 * self.cell_size:
            raise ConfigError("field size and cell_size must be positive with at least 2 cells")
        if self.n_bumps < 0:
            raise ConfigError("n_bumps must be non-negative")
        if self.bump_sigma[0] <= 0 or self.bump_sigma[1] < self.bump_sigma[0]:
            raise ConfigError(f"invalid bump_sigma range {self.bump_sigma}")
        if self.bump_height[1] < self.bump_height[0]:
            raise ConfigError(f"invalid bump_height range {self.bump_height}")


def generate_field(params: FieldParams, rng: np.random.Generator) -> HeightField:
    """Square field centred on the origin."""
    params.validate()
    n = int(round(params.size / params.cell_size)) + 1
    half = 0.5 * (n - 1) * params.cell_size
    coords = -half + params.cell_size * np.arange(n)
    xx, yy = np.meshgrid(coords, coords)
    heights = np.full_like(xx, params.base_height)
    for _ in range(params.n_bumps):
        cx, cy = rng.uniform(-params.bump_spread, params.bump_spread, size=2)
        amp = rng.uniform(*params.bump_height)
        sigma = rng.uniform(*params.bump_sigma)
        heights += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
    return HeightField(heights, params.cell_size, (-half, -half))


def flat_field(value: float = 0.0, size: float = 200.0, cell_size: float = 2.0) -> HeightField:
    n = int(round(size / cell_size)) + 1
    half = 0.5 * (n - 1) * cell_size
    return HeightField(np.full((n, n), float(value)), cell_size, (-half, -half))


__all__ = ["FieldParams", "HeightField", "flat_field", "generate_field", "surface_height"]

"""Hidden occupancy fields, regions of interest, and reconstruction metrics.

The field is a 2D grid of binary occupancy values drawn from per-cell
Bernoulli distributions. Cells inside randomly placed elliptical hotspots
are occupied with high probability, background cells with low probability,
so the resulting maps have spatially contiguous regions of interest.

Grid convention used throughout the package: cell ``(col, row)`` has flat
index ``row * width + col`` and its center sits at
``((col + 0.5) * resolution, (row + 0.5) * resolution)`` in meters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FieldGenConfig:
    """Parameters of the randomized hotspot generator.

    Between ``min_hotspots`` and ``max_hotspots`` axis-aligned ellipses are
    placed uniformly at random; cells inside any ellipse are occupied with
    probability ``p_high``, all others with ``p_low``. Radii are drawn as a
    fraction of the smaller grid dimension.
    """

    min_hotspots: int = 2
    max_hotspots: int = 5
    min_radius_frac: float = 0.12
    max_radius_frac: float = 0.28
    p_high: float = 0.8
    p_low: float = 0.1

    def __post_init__(self):
        if not (1 <= self.min_hotspots <= self.max_hotspots):
            raise ValueError("hotspot counts must satisfy 1 <= min <= max")
        if not (0.0 < self.min_radius_frac <= self.max_radius_frac):
            raise ValueError("radius fractions must be positive and ordered")
        if not (0.0 <= self.p_low <= 1.0 and 0.0 <= self.p_high <= 1.0):
            raise ValueError("occupancy probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class RoiConfig:
    """Region-of-interest rule: cell i is interesting iff mu_i + beta * sigma_i >= mu_th."""

    mu_th: float = 0.4
    beta: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.mu_th <= 1.0:
            raise ValueError(f"mu_th must lie in [0, 1], got {self.mu_th}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")


@dataclass(frozen=True)
class GroundTruthField:
    """A hidden per-cell scalar field on a regular grid.

    values is a flat row-major array of length width * height with entries
    in [0, 1]; resolution is the cell edge length in meters.
    """

    width: int
    height: int
    resolution: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if self.width < 1 or self.height < 1:
            raise DimensionError("field dimensions must be positive")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive meters per cell")
        if vals.shape != (self.width * self.height,):
            raise DimensionError(
                f"values length {vals.shape} does not match {self.width}x{self.height}"
            )
        if np.any(vals < 0.0) or np.any(vals > 1.0):
            raise ValueError("field values must lie in [0, 1]")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @property
    def extent(self) -> tuple[float, float]:
        """Map size in meters, (x extent, y extent)."""
        return self.width * self.resolution, self.height * self.resolution

    def grid(self) -> np.ndarray:
        """Values reshaped to (height, width)."""
        return self.values.reshape(self.height, self.width)

    def cell_centers(self) -> np.ndarray:
        """(n_cells, 2) array of cell-center xy coordinates in meters, row-major order."""
        cols = np.arange(self.width)
        rows = np.arange(self.height)
        cx, cy = np.meshgrid((cols + 0.5) * self.resolution, (rows + 0.5) * self.resolution)
        return np.column_stack([cx.ravel(), cy.ravel()])


def sample_hotspots(
    width: int, height: int, rng: np.random.Generator, gen: FieldGenConfig
) -> np.ndarray:
    """Draw the boolean hotspot mask the generator will use, one flag per cell.

    Exposed separately so the mask is reproducible from the same generator
    stream, which lets callers compare field statistics against the mask
    that actually produced them.
    """
    n_spots = int(rng.integers(gen.min_hotspots, gen.max_hotspots + 1))
    scale = min(width, height)
    cols, rows = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    mask = np.zeros((height, width), dtype=bool)
    for _ in range(n_spots):
        cx = rng.uniform(0, width)
        cy = rng.uniform(0, height)
        rx = rng.uniform(gen.min_radius_frac, gen.max_radius_frac) * scale
        ry = rng.uniform(gen.min_radius_frac, gen.max_radius_frac) * scale
        mask |= ((cols - cx) / rx) ** 2 + ((rows - cy) / ry) ** 2 <= 1.0
    return mask.ravel()


def generate_field(
    width: int,
    height: int,
    seed,
    gen: FieldGenConfig | None = None,
    resolution: float = 2.5,
) -> GroundTruthField:
    """Generate a randomized binary occupancy field with contiguous hotspots.

    Deterministic for a fixed seed. A hotspot covering no cell center can
    occur for tiny grids; at least one hotspot region is guaranteed by
    resampling the mask until it is nonempty.
    """
    if width < 2 or height < 2:
        raise DimensionError(f"field must be at least 2x2, got {width}x{height}")
    gen = gen or FieldGenConfig()
    rng = np.random.default_rng(seed)
    mask = sample_hotspots(width, height, rng, gen)
    while not mask.any():
        mask = sample_hotspots(width, height, rng, gen)
    probs = np.where(mask, gen.p_high, gen.p_low)
    values = (rng.random(width * height) < probs).astype(np.float64)
    return GroundTruthField(width=width, height=height, resolution=resolution, values=values)


def roi_mask(mu: np.ndarray, sigma: np.ndarray, cfg: RoiConfig) -> np.ndarray:
    """Indices of cells whose optimistic estimate mu + beta * sigma reaches the threshold.

    Returns a sorted int array. sigma must be elementwise nonnegative.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise DimensionError(f"mu shape {mu.shape} != sigma shape {sigma.shape}")
    if np.any(sigma < 0):
        raise ValueError("sigma must be elementwise >= 0")
    return np.flatnonzero(mu + cfg.beta * sigma >= cfg.mu_th)


def rmse_in_roi(mu: np.ndarray, truth: GroundTruthField, roi: np.ndarray) -> float:
    """Root mean squared error between the belief mean and the hidden field over roi cells.

    An empty roi falls back to the full map (logged), so the metric is
    always defined.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != truth.values.shape:
        raise DimensionError(f"mu shape {mu.shape} != field shape {truth.values.shape}")
    roi = np.asarray(roi, dtype=np.intp)
    if roi.size == 0:
        log.debug("empty ROI, falling back to full-map RMSE")
        roi = np.arange(truth.n_cells)
    err = mu[roi] - truth.values[roi]
    return float(np.sqrt(np.mean(err * err)))


def save_field_text(field: GroundTruthField) -> str:
    """Serialize to the plain-text grid format: header 'w h r', then row-major values."""
    lines = [f"{field.width} {field.height} {float(field.resolution)!r}"]
    grid = field.grid()
    for row in grid:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def load_field_text(text: str) -> GroundTruthField:
    """Parse the plain-text grid format written by save_field_text."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty field text")
    head = lines[0].split()
    if len(head) != 3:
        raise ValueError(f"expected header 'w h r', got {lines[0]!r}")
    width, height, resolution = int(head[0]), int(head[1]), float(head[2])
    values = np.array([float(v) for ln in lines[1:] for v in ln.split()], dtype=np.float64)
    return GroundTruthField(width=width, height=height, resolution=resolution, values=values)

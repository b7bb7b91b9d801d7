"""Altitude-dependent downward camera model.

Measurement noise saturates with altitude as a * (1 - exp(-b * h)) while
the square ground footprint widens as 2 * h * tan(half_angle), so flying
higher trades per-cell accuracy for coverage. Above a configurable
altitude the footprint side is additionally multiplied by a scale factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .belief import MeasurementBatch
from .errors import DomainError
from .groundtruth import GroundTruthField

MIN_VARIANCE = 1e-12


@dataclass(frozen=True)
class SensorConfig:
    """Noise curve and field-of-view geometry of the downward camera."""

    a: float = 0.2
    b: float = 0.05
    fov_half_angle: float = 30.0
    fov_scale_altitude: float = 15.0
    fov_scale_factor: float = 1.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("noise parameters a, b must be strictly positive")
        if not 0.0 < self.fov_half_angle < 90.0:
            raise ValueError("fov_half_angle must lie in (0, 90) degrees")
        if not 0.0 < self.fov_scale_factor <= 1.0:
            raise ValueError("fov_scale_factor must lie in (0, 1]")


def noise_variance(h: float, cfg: SensorConfig) -> float:
    """Measurement variance at altitude h meters: a * (1 - exp(-b * h))."""
    if h < 0:
        raise DomainError(f"altitude must be >= 0, got {h}")
    return cfg.a * (1.0 - math.exp(-cfg.b * h))


def footprint_side(h: float, cfg: SensorConfig) -> float:
    """Ground footprint edge length in meters at altitude h."""
    side = 2.0 * h * math.tan(math.radians(cfg.fov_half_angle))
    if h > cfg.fov_scale_altitude:
        side *= cfg.fov_scale_factor
    return side


def footprint_cells_grid(
    x: float,
    y: float,
    h: float,
    width: int,
    height: int,
    resolution: float,
    cfg: SensorConfig,
) -> np.ndarray:
    """Footprint computation against a bare grid spec, see footprint_cells."""
    if h <= 0:
        raise DomainError(f"altitude must be positive, got {h}")
    ext_x, ext_y = width * resolution, height * resolution
    if not (0.0 <= x <= ext_x and 0.0 <= y <= ext_y):
        raise DomainError(f"position ({x}, {y}) outside map extent ({ext_x}, {ext_y})")

    half = 0.5 * footprint_side(h, cfg)
    # Cell centers are at (i + 0.5) * resolution; find index ranges within +/- half.
    lo_col = max(0, math.ceil((x - half) / resolution - 0.5))
    hi_col = min(width - 1, math.floor((x + half) / resolution - 0.5))
    lo_row = max(0, math.ceil((y - half) / resolution - 0.5))
    hi_row = min(height - 1, math.floor((y + half) / resolution - 0.5))

    under_col = min(width - 1, max(0, int(x / resolution)))
    under_row = min(height - 1, max(0, int(y / resolution)))
    if lo_col > hi_col or lo_row > hi_row:
        return np.array([under_row * width + under_col], dtype=np.intp)

    cols = np.arange(lo_col, hi_col + 1)
    rows = np.arange(lo_row, hi_row + 1)
    cc, rr = np.meshgrid(cols, rows)
    cells = (rr * width + cc).ravel()
    under = under_row * width + under_col
    if under not in cells:
        cells = np.append(cells, under)
        cells.sort()
    return cells.astype(np.intp)


def footprint_cells(
    pos: np.ndarray | tuple[float, float, float],
    field: GroundTruthField,
    cfg: SensorConfig,
) -> np.ndarray:
    """Flat indices of cells whose centers fall inside the sensor footprint.

    The footprint is the square of side footprint_side(h) centered under
    (x, y), clipped to the map. The cell directly under the sensor is
    always included, so the result is never empty.
    """
    x, y, h = float(pos[0]), float(pos[1]), float(pos[2])
    return footprint_cells_grid(x, y, h, field.width, field.height, field.resolution, cfg)


def take_measurement(
    pos: np.ndarray | tuple[float, float, float],
    truth: GroundTruthField,
    cfg: SensorConfig,
    rng: np.random.Generator,
) -> MeasurementBatch:
    """Sample one noisy measurement per footprint cell.

    Values are the hidden field plus Gaussian noise with the altitude's
    variance, clamped to [0, 1]; the variance reported with each row is
    the unclamped Gaussian variance.
    """
    cells = footprint_cells(pos, truth, cfg)
    var = max(noise_variance(float(pos[2]), cfg), MIN_VARIANCE)
    noise = rng.normal(0.0, math.sqrt(var), size=len(cells))
    values = np.clip(truth.values[cells] + noise, 0.0, 1.0)
    return MeasurementBatch(
        cell_indices=cells,
        values=values,
        variances=np.full(len(cells), var),
    )

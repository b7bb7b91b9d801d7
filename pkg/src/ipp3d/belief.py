"""Gaussian-process belief over the grid and Kalman-style measurement fusion.

The belief is the full GP posterior: a mean vector with one entry per grid
cell and a dense covariance matrix. The prior covariance is a squared
exponential kernel evaluated on cell-center coordinates; measurements are
fused either with the batch GP conditioning formula or the sequential
Kalman update. Both are algebraically the same conjugate update, kept as
two separately coded routes so one can serve as the oracle for the other.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import DimensionError, NumericalConditioningError

log = logging.getLogger(__name__)

JITTER = 1e-8


@dataclass(frozen=True)
class GpHyperparams:
    """Squared-exponential kernel parameters, in map units (meters)."""

    length_scale: float = 3.67
    signal_variance: float = 1.82
    noise_variance: float = 1.42

    def __post_init__(self):
        if self.length_scale <= 0 or self.signal_variance <= 0 or self.noise_variance <= 0:
            raise ValueError("GP hyperparameters must all be strictly positive")


@dataclass
class BeliefState:
    """GP posterior over all grid cells: mean vector mu and covariance cov.

    mu is kept unclamped internally so the linear update stays exact;
    clamped_mu() produces the [0, 1] copy used for ROI rules and reporting.
    """

    mu: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        n = self.mu.shape[0]
        if self.mu.ndim != 1 or self.cov.shape != (n, n):
            raise DimensionError(
                f"mean shape {self.mu.shape} incompatible with covariance {self.cov.shape}"
            )

    @property
    def n_cells(self) -> int:
        return self.mu.shape[0]

    def clamped_mu(self) -> np.ndarray:
        return np.clip(self.mu, 0.0, 1.0)

    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))

    def copy(self) -> "BeliefState":
        return BeliefState(mu=self.mu.copy(), cov=self.cov.copy())


@dataclass(frozen=True)
class MeasurementBatch:
    """Independent point measurements: one grid cell, value, and variance per row."""

    cell_indices: np.ndarray
    values: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cell_indices", np.asarray(self.cell_indices, dtype=np.intp))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=np.float64))
        if not (len(self.cell_indices) == len(self.values) == len(self.variances)):
            raise DimensionError("cell_indices, values, variances must have equal length")
        if np.any(self.variances <= 0):
            raise ValueError("measurement variances must be strictly positive")

    def __len__(self) -> int:
        return len(self.cell_indices)


def squared_exponential(a: np.ndarray, b: np.ndarray, hp: GpHyperparams) -> np.ndarray:
    """Isotropic squared-exponential kernel matrix between point sets a and b (meters)."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return hp.signal_variance * np.exp(-d2 / (2.0 * hp.length_scale**2))


def init_prior(
    width: int, height: int, resolution: float, hp: GpHyperparams
) -> BeliefState:
    """Uniform prior belief: mean 0.5 everywhere, kernel covariance on cell centers."""
    if width < 1 or height < 1:
        raise DimensionError("grid dimensions must be positive")
    cols = np.arange(width)
    rows = np.arange(height)
    cx, cy = np.meshgrid((cols + 0.5) * resolution, (rows + 0.5) * resolution)
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    cov = squared_exponential(centers, centers, hp)
    mu = np.full(width * height, 0.5)
    return BeliefState(mu=mu, cov=cov)


def gp_condition(
    prior: BeliefState, observed: np.ndarray, z: np.ndarray, hp: GpHyperparams
) -> BeliefState:
    """Batch posterior of the conjugate GP update, conditioning on observed cells.

    Uses the textbook arrangement with an explicit inverse of the observed
    block, deliberately a different code path than kalman_update so the two
    can cross-check each other.
    """
    observed = np.asarray(observed, dtype=np.intp)
    z = np.asarray(z, dtype=np.float64)
    if len(observed) != len(z):
        raise DimensionError("observed indices and values must have equal length")
    if len(observed) == 0:
        return prior.copy()
    if np.any(observed < 0) or np.any(observed >= prior.n_cells):
        raise IndexError("observed cell index outside the grid")

    k_xo = prior.cov[:, observed]
    k_oo = prior.cov[np.ix_(observed, observed)] + hp.noise_variance * np.eye(len(observed))
    try:
        k_oo_inv = np.linalg.inv(k_oo)
    except np.linalg.LinAlgError:
        # Retry once with jitter before giving up.
        try:
            k_oo_inv = np.linalg.inv(k_oo + JITTER * np.eye(len(observed)))
        except np.linalg.LinAlgError as exc:
            raise NumericalConditioningError("observed-block system is singular") from exc
    gain = k_xo @ k_oo_inv
    mu = prior.mu + gain @ (z - prior.mu[observed])
    cov = prior.cov - gain @ k_xo.T
    cov = 0.5 * (cov + cov.T)
    return BeliefState(mu=mu, cov=cov)


def kalman_update(belief: BeliefState, batch: MeasurementBatch) -> BeliefState:
    """Fuse a measurement batch via the Kalman update.

    With one-hot measurement rows the innovation covariance is the covariance
    submatrix at the measured cells plus the diagonal noise, solved by
    Cholesky factorization rather than explicit inversion. The result is
    symmetrized and its diagonal clamped at zero to absorb roundoff.
    """
    if len(batch) == 0:
        return belief.copy()
    cells = batch.cell_indices
    if np.any(cells < 0) or np.any(cells >= belief.n_cells):
        raise IndexError("measurement cell index outside the grid")

    hp_rows = belief.cov[cells, :]  # H P, shape (m, n)
    s = hp_rows[:, cells] + np.diag(batch.variances)
    s[np.diag_indices_from(s)] += JITTER
    try:
        s_factor = cho_factor(s, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalConditioningError("innovation covariance not positive definite") from exc

    innovation = batch.values - belief.mu[cells]
    mu = belief.mu + hp_rows.T @ cho_solve(s_factor, innovation)
    cov = belief.cov - hp_rows.T @ cho_solve(s_factor, hp_rows)
    cov = 0.5 * (cov + cov.T)
    diag = np.diag_indices_from(cov)
    cov[diag] = np.maximum(cov[diag], 0.0)
    return BeliefState(mu=mu, cov=cov)


def expected_trace_reduction(belief: BeliefState, batch: MeasurementBatch, cells_of_interest: np.ndarray) -> float:
    """Trace reduction over cells_of_interest that fusing the batch would cause.

    Exact for the linear update and independent of the measured values, so
    planners can score candidate measurements without touching the hidden
    field. Cheaper than a full update when only the trace is needed.
    """
    if len(batch) == 0 or len(cells_of_interest) == 0:
        return 0.0
    cells = batch.cell_indices
    hp_rows = belief.cov[np.ix_(cells, np.asarray(cells_of_interest, dtype=np.intp))]
    s = belief.cov[np.ix_(cells, cells)] + np.diag(batch.variances)
    s[np.diag_indices_from(s)] += JITTER
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise NumericalConditioningError("innovation covariance not positive definite") from exc
    x = solve_triangular(chol, hp_rows, lower=True)
    return float(np.sum(x * x))


def trace_over(belief: BeliefState, cells: np.ndarray) -> float:
    """Sum of posterior variances (diagonal covariance entries) at the given cells."""
    cells = np.asarray(cells, dtype=np.intp)
    if cells.size == 0:
        return 0.0
    if np.any(cells < 0) or np.any(cells >= belief.n_cells):
        raise IndexError("cell index outside the grid")
    return float(np.sum(np.diag(belief.cov)[cells]))


_COV_MAGIC = b"IPPC"


def save_belief(belief: BeliefState, width: int, height: int, resolution: float) -> tuple[str, bytes]:
    """Serialize the mean to the text grid format and the covariance lower triangle to bytes."""
    from .groundtruth import GroundTruthField, save_field_text

    mean_field = GroundTruthField(
        width=width, height=height, resolution=resolution, values=belief.clamped_mu()
    )
    n = belief.n_cells
    tri = belief.cov[np.tril_indices(n)]
    blob = _COV_MAGIC + struct.pack("<II", 1, n) + tri.astype("<f8").tobytes()
    return save_field_text(mean_field), blob


def load_covariance(blob: bytes) -> np.ndarray:
    """Rebuild the symmetric covariance matrix from its lower-triangle dump."""
    if blob[:4] != _COV_MAGIC:
        raise ValueError("bad covariance dump magic")
    version, n = struct.unpack("<II", blob[4:12])
    if version != 1:
        raise ValueError(f"unsupported covariance dump version {version}")
    tri = np.frombuffer(blob[12:], dtype="<f8")
    cov = np.zeros((n, n))
    cov[np.tril_indices(n)] = tri
    return cov + np.tril(cov, -1).T

"""Sequential decision process for budgeted 3D informative path planning.

The agent sits on a roadmap node, chooses one of its k neighbors, flies
there in a straight line, and pays the traversal time against its mission
budget. Measurements fire whenever the distance flown since the last
interval crossing exceeds a fixed fraction of the map width, plus once on
arrival at every node, and each one is fused into the GP belief. The
reward is the relative trace reduction over the current regions of
interest, scaled to [0, 10].

BeliefSim provides the same kinematics and fusion but with expected
measurements (measured value taken to be the current mean), so planners
can simulate outcomes without reading the hidden field.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .belief import BeliefState, GpHyperparams, MeasurementBatch, init_prior, kalman_update, trace_over
from .errors import ConfigError, EpisodeDoneError, InvalidActionError
from .groundtruth import GroundTruthField, RoiConfig, rmse_in_roi, roi_mask
from .roadmap import AugmentedGraph, Roadmap, augment, node_footprints
from .sensor import (
    MIN_VARIANCE,
    SensorConfig,
    footprint_cells_grid,
    noise_variance,
    take_measurement,
)

log = logging.getLogger(__name__)

AFFORD_EPS = 1e-9


@dataclass(frozen=True)
class EnvConfig:
    """Mission parameters: time budget, flight speed, measurement cadence, start pose."""

    budget: float = 150.0
    speed: float = 2.0
    measurement_interval: float = 0.2  # normalized units, map width = 1
    start_position: tuple[float, float, float] = (2.0, 2.0, 14.0)
    roi: RoiConfig = dc_field(default_factory=RoiConfig)

    def __post_init__(self):
        if self.budget < 0:
            raise ConfigError("budget must be >= 0 seconds")
        if self.speed <= 0 or self.measurement_interval <= 0:
            raise ConfigError("speed and measurement_interval must be positive")


@dataclass
class Observation:
    """What a planner sees: the augmented graph, its position, and the legal moves."""

    graph: AugmentedGraph
    current_node: int
    neighbors: np.ndarray
    affordable: np.ndarray
    remaining_budget: float


@dataclass
class EpisodeState:
    current_node: int
    remaining_budget: float
    belief: BeliefState
    trajectory: list[int]
    distance_since_measurement: float  # normalized units since the last interval crossing
    metrics_log: list[tuple[float, float, float]]
    done: bool = False


def compute_reward(trace_before: float, trace_after: float) -> float:
    """Relative uncertainty reduction scaled by 10; zero when there was none to reduce."""
    if trace_before <= 0.0:
        return 0.0
    return (trace_before - trace_after) / trace_before * 10.0


class IppEnv:
    """One episode worker's environment around a hidden field and a shared roadmap."""

    def __init__(
        self,
        truth: GroundTruthField,
        roadmap: Roadmap,
        cfg: EnvConfig,
        sensor: SensorConfig | None = None,
        gp: GpHyperparams | None = None,
        footprints: list[np.ndarray] | None = None,
    ):
        if (truth.width, truth.height) != (roadmap.width, roadmap.height):
            raise ConfigError("field and roadmap grids do not match")
        self.truth = truth
        self.roadmap = roadmap
        self.cfg = cfg
        self.sensor = sensor or SensorConfig()
        self.gp = gp or GpHyperparams()
        self.footprints = footprints if footprints is not None else node_footprints(roadmap, self.sensor)
        self.map_width_m = roadmap.width * roadmap.resolution
        self.state: EpisodeState | None = None
        self.snapshots: list[tuple[float, np.ndarray, np.ndarray]] = []
        self._pending_snaps: list[float] = []
        self._rng: np.random.Generator | None = None

    # ------------------------------------------------------------------ setup

    def reset(
        self,
        seed: int | None = None,
        snapshot_times: list[float] | tuple[float, ...] = (),
        start_node: int | None = None,
    ) -> Observation:
        """Start a fresh episode: uniform prior belief, full budget, agent at the start node.

        snapshot_times requests copies of (mean, covariance diagonal) of the
        belief as it stood at those mission times; they appear in
        self.snapshots once passed.
        """
        if start_node is None:
            start_node = self.roadmap.nearest_node(self.cfg.start_position)
            offset = np.linalg.norm(
                self.roadmap.nodes[start_node] - np.asarray(self.cfg.start_position)
            )
            if offset > self.roadmap.resolution:
                raise ConfigError(
                    f"start position {self.cfg.start_position} is {offset:.2f} m from the "
                    "nearest roadmap node; it must coincide with one"
                )
        self._rng = np.random.default_rng(seed)
        belief = init_prior(self.truth.width, self.truth.height, self.truth.resolution, self.gp)
        self.state = EpisodeState(
            current_node=int(start_node),
            remaining_budget=float(self.cfg.budget),
            belief=belief,
            trajectory=[int(start_node)],
            distance_since_measurement=0.0,
            metrics_log=[],
        )
        self.snapshots = []
        self._pending_snaps = sorted(float(t) for t in snapshot_times)
        if not self._any_affordable():
            self._finish()
        return self.observation()

    # ------------------------------------------------------------------ stepping

    def step(self, action: int) -> tuple[Observation, float, bool]:
        """Travel to the chosen neighbor, fusing measurements along the way.

        action indexes into the current node's adjacency list. Raises
        InvalidActionError for an out-of-range or unaffordable choice and
        EpisodeDoneError once the episode has terminated.
        """
        state = self.state
        if state is None:
            raise EpisodeDoneError("call reset() before step()")
        if state.done:
            raise EpisodeDoneError("episode has terminated")
        neighbors = self.roadmap.edges[state.current_node]
        if not 0 <= action < len(neighbors):
            raise InvalidActionError(f"action {action} outside adjacency of size {len(neighbors)}")
        target = int(neighbors[action])
        a = self.roadmap.nodes[state.current_node]
        b = self.roadmap.nodes[target]
        dist = float(np.linalg.norm(b - a))
        cost = dist / self.cfg.speed
        if cost > state.remaining_budget + AFFORD_EPS:
            raise InvalidActionError("chosen neighbor is not affordable with the remaining budget")

        roi = self._current_roi()
        trace_before = trace_over(state.belief, roi)

        elapsed0 = self.cfg.budget - state.remaining_budget
        for s in self._measurement_offsets(dist):
            t_event = elapsed0 + (s / dist if dist > 0 else 0.0) * cost
            self._drain_snapshots(t_event)
            pos = a + (b - a) * (s / dist) if dist > 0 else a
            batch = take_measurement(pos, self.truth, self.sensor, self._rng)
            state.belief = kalman_update(state.belief, batch)

        state.remaining_budget -= cost
        state.current_node = target
        state.trajectory.append(target)

        trace_after = trace_over(state.belief, roi)
        reward = compute_reward(trace_before, trace_after)

        elapsed = self.cfg.budget - state.remaining_budget
        roi_now = self._current_roi()
        state.metrics_log.append(
            (
                elapsed,
                trace_over(state.belief, np.arange(state.belief.n_cells)),
                rmse_in_roi(state.belief.clamped_mu(), self.truth, roi_now),
            )
        )

        if not self._any_affordable():
            self._finish()
        return self.observation(), reward, state.done

    # ------------------------------------------------------------------ helpers

    def elapsed(self) -> float:
        return self.cfg.budget - self.state.remaining_budget

    def _measurement_offsets(self, dist: float) -> list[float]:
        """Distances along the current edge at which measurements fire.

        Interval crossings first (there are floor((carry + length) / interval)
        of them), then the unconditional arrival measurement. Crossings reset
        the carried phase; the arrival measurement does not.
        """
        state = self.state
        interval_m = self.cfg.measurement_interval * self.map_width_m
        carry_m = state.distance_since_measurement * self.map_width_m
        n_cross = int(math.floor((carry_m + dist) / interval_m))
        offsets = [min(j * interval_m - carry_m, dist) for j in range(1, n_cross + 1)]
        carry_m = carry_m + dist - n_cross * interval_m
        state.distance_since_measurement = carry_m / self.map_width_m
        offsets.append(dist)
        return offsets

    def _current_roi(self) -> np.ndarray:
        belief = self.state.belief
        roi = roi_mask(belief.clamped_mu(), belief.std(), self.cfg.roi)
        if roi.size == 0:
            log.debug("empty ROI at t=%.1f, falling back to full map", self.elapsed())
            roi = np.arange(belief.n_cells)
        return roi

    def _any_affordable(self) -> bool:
        return bool(np.any(self._affordable_mask()))

    def _affordable_mask(self) -> np.ndarray:
        state = self.state
        dists = self.roadmap.neighbor_distances(state.current_node)
        return dists / self.cfg.speed <= state.remaining_budget + AFFORD_EPS

    def observation(self) -> Observation:
        state = self.state
        graph = augment(self.roadmap, state.belief, self.sensor, footprints=self.footprints)
        return Observation(
            graph=graph,
            current_node=state.current_node,
            neighbors=self.roadmap.edges[state.current_node].copy(),
            affordable=self._affordable_mask(),
            remaining_budget=state.remaining_budget,
        )

    def _drain_snapshots(self, upto: float) -> None:
        state = self.state
        while self._pending_snaps and self._pending_snaps[0] < upto - 1e-9:
            t = self._pending_snaps.pop(0)
            self.snapshots.append((t, state.belief.mu.copy(), np.diag(state.belief.cov).copy()))

    def _finish(self) -> None:
        self.state.done = True
        self._drain_snapshots(math.inf)


# ---------------------------------------------------------------------- planner-side sim


@dataclass
class SimState:
    """Belief-space search state: where the agent is and what it would believe."""

    node: int
    remaining_budget: float
    carry: float  # normalized distance since the last interval crossing
    belief: BeliefState

    def clone(self) -> "SimState":
        return SimState(self.node, self.remaining_budget, self.carry, self.belief.copy())


class BeliefSim:
    """Expected-measurement dynamics for planners; never touches the hidden field."""

    def __init__(
        self,
        roadmap: Roadmap,
        sensor: SensorConfig,
        roi: RoiConfig,
        speed: float,
        measurement_interval: float,
        footprints: list[np.ndarray] | None = None,
    ):
        self.roadmap = roadmap
        self.sensor = sensor
        self.roi = roi
        self.speed = speed
        self.interval = measurement_interval
        self.footprints = footprints if footprints is not None else node_footprints(roadmap, sensor)
        self.map_width_m = roadmap.width * roadmap.resolution

    def initial_state(self, env_state: EpisodeState) -> SimState:
        return SimState(
            node=env_state.current_node,
            remaining_budget=env_state.remaining_budget,
            carry=env_state.distance_since_measurement,
            belief=env_state.belief.copy(),
        )

    def affordable_actions(self, state: SimState) -> np.ndarray:
        dists = self.roadmap.neighbor_distances(state.node)
        return np.flatnonzero(dists / self.speed <= state.remaining_budget + AFFORD_EPS)

    def edge_batch(self, state: SimState, action: int) -> tuple[MeasurementBatch, float, float]:
        """Joint expected measurement batch for one edge.

        Returns (batch, traversal cost in seconds, carry after the edge).
        Sequential fusion of independent rows equals the joint batch update,
        so scoring or applying the whole edge at once is exact.
        """
        target = int(self.roadmap.edges[state.node][action])
        a = self.roadmap.nodes[state.node]
        b = self.roadmap.nodes[target]
        dist = float(np.linalg.norm(b - a))
        cost = dist / self.speed

        interval_m = self.interval * self.map_width_m
        carry_m = state.carry * self.map_width_m
        n_cross = int(math.floor((carry_m + dist) / interval_m))
        offsets = [min(j * interval_m - carry_m, dist) for j in range(1, n_cross + 1)]
        offsets.append(dist)
        carry_out = (carry_m + dist - n_cross * interval_m) / self.map_width_m

        cells_all = []
        vars_all = []
        for s in offsets:
            pos = a + (b - a) * (s / dist) if dist > 0 else a
            if s == dist:
                cells = self.footprints[target]
            else:
                cells = footprint_cells_grid(
                    float(pos[0]), float(pos[1]), float(pos[2]),
                    self.roadmap.width, self.roadmap.height, self.roadmap.resolution,
                    self.sensor,
                )
            var = max(noise_variance(float(pos[2]), self.sensor), MIN_VARIANCE)
            cells_all.append(cells)
            vars_all.append(np.full(len(cells), var))
        cells_cat = np.concatenate(cells_all)
        batch = MeasurementBatch(
            cell_indices=cells_cat,
            values=np.zeros(len(cells_cat)),  # values are filled by the caller
            variances=np.concatenate(vars_all),
        )
        return batch, cost, carry_out

    def current_roi(self, state: SimState) -> np.ndarray:
        roi = roi_mask(state.belief.clamped_mu(), state.belief.std(), self.roi)
        if roi.size == 0:
            roi = np.arange(state.belief.n_cells)
        return roi

    def step(self, state: SimState, action: int) -> tuple[SimState, float]:
        """Apply one edge with expected measurements; returns the new state and reward."""
        roi = self.current_roi(state)
        trace_before = trace_over(state.belief, roi)
        batch, cost, carry_out = self.edge_batch(state, action)
        expected = MeasurementBatch(
            cell_indices=batch.cell_indices,
            values=state.belief.mu[batch.cell_indices],
            variances=batch.variances,
        )
        belief = kalman_update(state.belief, expected)
        new_state = SimState(
            node=int(self.roadmap.edges[state.node][action]),
            remaining_budget=state.remaining_budget - cost,
            carry=carry_out,
            belief=belief,
        )
        trace_after = trace_over(belief, roi)
        return new_state, compute_reward(trace_before, trace_after)

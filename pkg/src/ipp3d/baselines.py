"""Reference planners: uniform random, fixed-altitude coverage, and MCTS.

All planners emit an index into the current node's adjacency list and only
ever choose affordable moves. The MCTS planner searches in belief space
with expected measurements, so like the learned policy it never reads the
hidden field; its rollouts follow a cost-benefit heuristic that ranks
neighbors by expected uncertainty reduction per second of flight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .belief import expected_trace_reduction
from .errors import ConfigError
from .roadmap import Roadmap
from .simenv import BeliefSim, IppEnv, Observation, SimState


def random_policy(obs: Observation, rng: np.random.Generator) -> int:
    """Uniform choice over the affordable neighbors."""
    legal = np.flatnonzero(obs.affordable)
    if legal.size == 0:
        raise ValueError("no affordable neighbor to sample")
    return int(rng.choice(legal))


class RandomPlanner:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def select_action(self, env: IppEnv) -> int:
        return random_policy(env.observation(), self.rng)


def coverage_policy(roadmap: Roadmap, altitude: float = 8.0) -> list[int]:
    """Boustrophedon sweep over one altitude level.

    Visits every node of the level once, rows in order, alternating the
    column direction per row. Returns node indices; execution is open-loop.
    """
    if altitude not in roadmap.altitude_levels:
        raise ConfigError(f"altitude {altitude} is not a roadmap level {roadmap.altitude_levels}")
    li = roadmap.altitude_levels.index(altitude)
    base = li * roadmap.n_cells
    seq: list[int] = []
    for row in range(roadmap.height):
        cols = range(roadmap.width) if row % 2 == 0 else range(roadmap.width - 1, -1, -1)
        seq.extend(base + row * roadmap.width + col for col in cols)
    return seq


class CoveragePlanner:
    """Walks the precomputed sweep, always moving toward the next unvisited sweep node.

    Non-adaptive by construction: decisions depend only on geometry, never
    on the belief. Runs until the budget is exhausted.
    """

    def __init__(self, roadmap: Roadmap, altitude: float = 8.0):
        self.roadmap = roadmap
        self.sequence = coverage_policy(roadmap, altitude)
        self._next = 0

    def reset(self) -> None:
        self._next = 0

    def select_action(self, env: IppEnv) -> int:
        obs = env.observation()
        while self._next < len(self.sequence) and self.sequence[self._next] == obs.current_node:
            self._next += 1
        if self._next >= len(self.sequence):
            # Sweep finished; keep measuring from the cheapest move available.
            legal = np.flatnonzero(obs.affordable)
            dists = self.roadmap.neighbor_distances(obs.current_node)[legal]
            return int(legal[np.argmin(dists)])
        target_pos = self.roadmap.nodes[self.sequence[self._next]]
        legal = np.flatnonzero(obs.affordable)
        neighbor_pos = self.roadmap.nodes[obs.neighbors[legal]]
        dist_to_target = np.linalg.norm(neighbor_pos - target_pos, axis=1)
        return int(legal[np.argmin(dist_to_target)])


@dataclass(frozen=True)
class MctsConfig:
    """Search constants: per-decision simulation budget, UCB exploration, widening law."""

    iterations: int = 300
    ucb_c: float = 1.4
    pw_c: float = 2.0
    pw_alpha: float = 0.5
    rollout_depth: int = 6
    gamma: float = 0.99

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not 0.0 < self.pw_alpha < 1.0:
            raise ConfigError("pw_alpha must lie in (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")


class _TreeNode:
    __slots__ = ("state", "visits", "children", "edge_reward", "value_sum")

    def __init__(self, state: SimState, edge_reward: float = 0.0):
        self.state = state
        self.visits = 0
        self.children: dict[int, _TreeNode] = {}
        self.edge_reward = edge_reward
        self.value_sum = 0.0


def _cost_benefit_scores(sim: BeliefSim, state: SimState, actions: np.ndarray) -> np.ndarray:
    """Expected ROI trace reduction per second for each candidate edge.

    Exact for the linear belief update: the joint batch of all measurements
    along an edge is what sequential fusion would produce.
    """
    roi = sim.current_roi(state)
    scores = np.empty(len(actions))
    for j, a in enumerate(actions):
        batch, cost, _ = sim.edge_batch(state, int(a))
        gain = expected_trace_reduction(state.belief, batch, roi)
        scores[j] = gain / max(cost, 1e-9)
    return scores


def _rollout(sim: BeliefSim, state: SimState, cfg: MctsConfig) -> float:
    total = 0.0
    discount = 1.0
    for _ in range(cfg.rollout_depth):
        actions = sim.affordable_actions(state)
        if actions.size == 0:
            break
        scores = _cost_benefit_scores(sim, state, actions)
        action = int(actions[int(np.argmax(scores))])
        state, reward = sim.step(state, action)
        total += discount * reward
        discount *= cfg.gamma
    return total


def _simulate(sim: BeliefSim, node: _TreeNode, cfg: MctsConfig, rng: np.random.Generator) -> float:
    """One MCTS iteration from this node; returns the discounted return observed."""
    node.visits += 1
    actions = sim.affordable_actions(node.state)
    if actions.size == 0:
        return 0.0

    untried = [int(a) for a in actions if int(a) not in node.children]
    cap = math.ceil(cfg.pw_c * node.visits**cfg.pw_alpha)
    if untried and len(node.children) < cap:
        scores = _cost_benefit_scores(sim, node.state, np.asarray(untried))
        action = untried[int(np.argmax(scores))]
        next_state, reward = sim.step(node.state, action)
        child = _TreeNode(next_state, edge_reward=reward)
        node.children[action] = child
        child.visits += 1
        ret = reward + cfg.gamma * _rollout(sim, next_state.clone(), cfg)
        child.value_sum += ret
        return ret

    log_n = math.log(max(node.visits, 2))
    best_action, best_ucb = -1, -math.inf
    for action, child in node.children.items():
        q = child.value_sum / child.visits
        ucb = q + cfg.ucb_c * math.sqrt(log_n / child.visits)
        if ucb > best_ucb:
            best_action, best_ucb = action, ucb
    child = node.children[best_action]
    ret = child.edge_reward + cfg.gamma * _simulate(sim, child, cfg, rng)
    child.value_sum += ret
    return ret


def search_tree(
    env: IppEnv, sim: BeliefSim, cfg: MctsConfig, rng: np.random.Generator
) -> _TreeNode:
    """Run the configured number of simulations and return the root of the tree."""
    root = _TreeNode(sim.initial_state(env.state))
    for _ in range(cfg.iterations):
        _simulate(sim, root, cfg, rng)
    return root


def mcts_plan(env: IppEnv, sim: BeliefSim, cfg: MctsConfig, rng: np.random.Generator) -> int:
    """Search from the live episode state and return the best root action.

    Runs cfg.iterations simulations on a belief-space clone. Transitions
    are deterministic under expected measurements, so edge rewards are
    cached in the tree and the search budget goes into structure.
    """
    root = search_tree(env, sim, cfg, rng)
    if not root.children:
        raise RuntimeError("MCTS expanded no child; episode should have been done")
    return max(root.children.items(), key=lambda kv: kv[1].value_sum / kv[1].visits)[0]


class MctsPlanner:
    def __init__(self, sim: BeliefSim, cfg: MctsConfig, seed: int):
        self.sim = sim
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)

    def select_action(self, env: IppEnv) -> int:
        return mcts_plan(env, self.sim, self.cfg, self.rng)

"""Clipped-surrogate policy optimization with parallel episode workers.

Each training round collects one full episode per worker on freshly
randomized ground truth, estimates per-step advantages from the one-step
temporal-difference error, then runs several epochs of minibatch updates
of the clipped surrogate loss with an adaptive-moment optimizer. Workers
share nothing but the parameter snapshot they roll out with, so the merged
buffer, and therefore training, is deterministic for fixed seeds.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .belief import GpHyperparams
from .errors import ConfigError, TrainingHaltError
from .groundtruth import FieldGenConfig, generate_field
from .policynet import NetConfig, PolicyNetwork, policy_forward
from .roadmap import build_roadmap, node_footprints
from .sensor import SensorConfig
from .simenv import EnvConfig, IppEnv


@dataclass(frozen=True)
class PpoConfig:
    """Optimization constants; the clip range bounds each update's probability ratio."""

    clip_eps: float = 0.2
    lr: float = 1e-5
    gamma: float = 0.99
    batch_size: int = 128
    ppo_iters: int = 8
    workers: int = 5
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    normalize_advantages: bool = False

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ConfigError("clip_eps must lie in (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass
class StepRecord:
    """One decision's snapshot: enough to re-evaluate the policy on it later."""

    features: np.ndarray  # (n, 5) augmented-graph node features
    current: int
    neighbors: np.ndarray  # (k,) node indices
    affordable: np.ndarray  # (k,) bool
    action: int
    old_logp: float
    reward: float
    value: float
    terminal: bool
    advantage: float = 0.0
    ret: float = 0.0


@dataclass
class RolloutBuffer:
    """Episode-grouped step records plus the static positional encodings they share."""

    episodes: list[list[StepRecord]] = dc_field(default_factory=list)
    pe: np.ndarray | None = None

    def flat(self) -> list[StepRecord]:
        return [rec for ep in self.episodes for rec in ep]

    def episode_returns(self) -> list[float]:
        return [sum(rec.reward for rec in ep) for ep in self.episodes]


def compute_advantage(records: list[StepRecord], gamma: float) -> None:
    """One-step TD advantages and discounted reward-to-go returns, in place.

    advantage_t = r_t + gamma * V(s_{t+1}) * (1 - terminal) - V(s_t); the
    bootstrap value is the stored critic estimate of the next record.
    """
    ret = 0.0
    for t in reversed(range(len(records))):
        rec = records[t]
        next_value = 0.0 if rec.terminal else records[t + 1].value
        rec.advantage = rec.reward + gamma * next_value * (0.0 if rec.terminal else 1.0) - rec.value
        ret = rec.reward + gamma * (0.0 if rec.terminal else ret)
        rec.ret = ret


def ppo_loss(
    batch: list[StepRecord],
    params: dict[str, Tensor],
    ppo: PpoConfig,
    net: NetConfig,
    pe: np.ndarray,
) -> tuple[Tensor, dict[str, float]]:
    """Clipped surrogate + value regression - entropy bonus over one minibatch.

    Returns the scalar loss tensor (graph attached) and detached component
    values for logging.
    """
    feats = np.stack([r.features for r in batch])
    currents = np.array([r.current for r in batch])
    neighbors = np.stack([r.neighbors for r in batch])
    afford = np.stack([r.affordable for r in batch])
    actions = np.array([r.action for r in batch])
    old_logp = np.array([r.old_logp for r in batch])
    adv = np.array([r.advantage for r in batch])
    rets = np.array([r.ret for r in batch])
    if ppo.normalize_advantages and len(batch) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    pe_stack = np.broadcast_to(pe, (len(batch),) + pe.shape)
    pi, value = policy_forward(
        feats, pe_stack, currents, neighbors, params, net, afford_mask=afford
    )

    logp = ad.log(ad.take_along_last(pi, actions))
    ratio = ad.exp(ad.add(logp, Tensor(-old_logp[:, None])))
    adv_t = Tensor(adv[:, None])
    surr = ad.minimum(
        ad.mul(ratio, adv_t),
        ad.mul(ad.clamp(ratio, 1.0 - ppo.clip_eps, 1.0 + ppo.clip_eps), adv_t),
    )
    policy_loss = ad.scale(ad.mean_all(surr), -1.0)

    err = ad.sub(value, Tensor(rets))
    value_loss = ad.mean_all(ad.mul(err, err))

    entropy = ad.scale(ad.mean_all(ad.sum_last(ad.xlogx(pi))), -1.0)

    loss = ad.add(
        ad.add(policy_loss, ad.scale(value_loss, ppo.value_coef)),
        ad.scale(entropy, -ppo.entropy_coef),
    )
    if not np.isfinite(loss.data):
        raise TrainingHaltError("non-finite loss; components: "
                                f"policy={policy_loss.data} value={value_loss.data} entropy={entropy.data}")
    stats = {
        "policy_loss": float(policy_loss.data),
        "value_loss": float(value_loss.data),
        "entropy": float(entropy.data),
    }
    return loss, stats


class Adam:
    """Adaptive-moment gradient descent over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * p.grad
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * p.grad**2
            p.data = p.data - self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


@dataclass(frozen=True)
class TrainSetup:
    """Everything a training run needs besides the PPO constants."""

    width: int = 15
    height: int = 15
    altitudes: tuple[float, ...] = (8.0, 14.0)
    k: int = 20
    env: EnvConfig = dc_field(default_factory=EnvConfig)
    net: NetConfig = dc_field(default_factory=NetConfig)
    gen: FieldGenConfig = dc_field(default_factory=FieldGenConfig)
    sensor: SensorConfig = dc_field(default_factory=SensorConfig)
    gp: GpHyperparams = dc_field(default_factory=GpHyperparams)
    randomize_start: bool = True
    checkpoint_interval: int = 50


class EnvFactory:
    """Builds per-episode environments over a fixed roadmap with fresh random fields."""

    def __init__(self, setup: TrainSetup):
        self.setup = setup
        template = generate_field(setup.width, setup.height, seed=0, gen=setup.gen)
        self.roadmap = build_roadmap(template, setup.altitudes, setup.k, k_pe=setup.net.k_pe)
        self.footprints = node_footprints(self.roadmap, setup.sensor)

    def make(self, seed_seq: np.random.SeedSequence) -> tuple[IppEnv, int | None]:
        field_seed, start_seed = seed_seq.spawn(2)
        truth = generate_field(
            self.setup.width,
            self.setup.height,
            seed=int(field_seed.generate_state(1)[0]),
            gen=self.setup.gen,
        )
        env = IppEnv(
            truth,
            self.roadmap,
            self.setup.env,
            sensor=self.setup.sensor,
            gp=self.setup.gp,
            footprints=self.footprints,
        )
        start_node = None
        if self.setup.randomize_start:
            rng = np.random.default_rng(start_seed)
            start_node = int(rng.integers(self.roadmap.n_nodes))
        return env, start_node


def _run_episode(
    factory: EnvFactory,
    snapshot: dict[str, np.ndarray],
    net_cfg: NetConfig,
    seed,
) -> list[StepRecord]:
    env_seq, noise_seq, action_seq = np.random.SeedSequence(entropy=seed).spawn(3)
    env, start_node = factory.make(env_seq)
    obs = env.reset(seed=noise_seq, start_node=start_node)
    network = PolicyNetwork(net_cfg, params={k: Tensor(v) for k, v in snapshot.items()})
    rng = np.random.default_rng(action_seq)
    pe = factory.roadmap.pe

    records: list[StepRecord] = []
    done = env.state.done
    while not done:
        action, logp, value = network.act(obs, pe, rng)
        features = obs.graph.features()
        next_obs, reward, done = env.step(action)
        records.append(
            StepRecord(
                features=features,
                current=obs.current_node,
                neighbors=obs.neighbors,
                affordable=obs.affordable,
                action=action,
                old_logp=logp,
                reward=reward,
                value=value,
                terminal=done,
            )
        )
        obs = next_obs
    return records


def collect_rollouts(
    snapshot: dict[str, np.ndarray],
    factory: EnvFactory,
    ppo: PpoConfig,
    net_cfg: NetConfig,
    seeds: list,
    parallel: bool = True,
) -> RolloutBuffer:
    """One episode per worker seed, merged in worker order so the result is reproducible.

    Each seed fully determines its worker's field, start node, sensor noise,
    and action sampling; the buffer is a pure function of (snapshot, seeds).
    """
    buffer = RolloutBuffer(pe=factory.roadmap.pe)
    if parallel and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=len(seeds)) as pool:
            futures = [
                pool.submit(_run_episode, factory, snapshot, net_cfg, sd) for sd in seeds
            ]
            episodes = [f.result() for f in futures]
    else:
        episodes = [_run_episode(factory, snapshot, net_cfg, sd) for sd in seeds]
    for ep in episodes:
        compute_advantage(ep, ppo.gamma)
        buffer.episodes.append(ep)
    return buffer


@dataclass
class TrainResult:
    network: PolicyNetwork
    log_rows: list[dict]
    checkpoint_path: Path | None


def train(
    ppo: PpoConfig,
    setup: TrainSetup,
    total_episodes: int,
    checkpoint_dir: str | Path | None = None,
    seed: int = 0,
    parallel: bool = True,
    progress=None,
) -> TrainResult:
    """Full training loop: collect, optimize, checkpoint.

    Halts with TrainingHaltError if parameters go non-finite, leaving the
    last good checkpoint on disk. The log has one row per episode with the
    loss components of the optimization round that consumed it.
    """
    factory = EnvFactory(setup)
    network = PolicyNetwork(setup.net, seed=seed)
    optimizer = Adam(network.params, lr=ppo.lr)
    root_seq = np.random.SeedSequence(seed)
    shuffle_rng = np.random.default_rng(root_seq.spawn(1)[0])

    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    log_rows: list[dict] = []
    episode_count = 0
    round_idx = 0
    t0 = time.monotonic()
    final_path = None

    while episode_count < total_episodes:
        n_eps = min(ppo.workers, total_episodes - episode_count)
        seeds = [(seed, round_idx, w) for w in range(n_eps)]
        buffer = collect_rollouts(
            network.snapshot(), factory, ppo, setup.net, seeds, parallel=parallel
        )

        records = buffer.flat()
        stats_acc: dict[str, list[float]] = {"policy_loss": [], "value_loss": [], "entropy": []}
        for _ in range(ppo.ppo_iters if records else 0):
            order = shuffle_rng.permutation(len(records))
            for lo in range(0, len(records), ppo.batch_size):
                batch = [records[i] for i in order[lo : lo + ppo.batch_size]]
                optimizer.zero_grad()
                loss, stats = ppo_loss(batch, network.params, ppo, setup.net, buffer.pe)
                ad.backward(loss)
                optimizer.step()
                for key, val in stats.items():
                    stats_acc[key].append(val)

        for name, p in network.params.items():
            if not np.all(np.isfinite(p.data)):
                raise TrainingHaltError(f"parameter {name} became non-finite; last checkpoint kept")

        wall = time.monotonic() - t0
        means = {k: float(np.mean(v)) if v else 0.0 for k, v in stats_acc.items()}
        for ep_return in buffer.episode_returns():
            episode_count += 1
            log_rows.append(
                {
                    "episode": episode_count,
                    "wall_time_s": wall,
                    "mean_return": ep_return,
                    "policy_loss": means["policy_loss"],
                    "value_loss": means["value_loss"],
                    "entropy": means["entropy"],
                }
            )
        round_idx += 1
        if progress is not None:
            progress(episode_count, total_episodes)

        if ckpt_dir is not None and (
            round_idx % max(setup.checkpoint_interval // max(ppo.workers, 1), 1) == 0
            or episode_count >= total_episodes
        ):
            final_path = ckpt_dir / "checkpoint.bin"
            final_path.write_bytes(network.serialize())
            manifest = {
                "embed_dim": setup.net.embed_dim,
                "heads": setup.net.heads,
                "k_pe": setup.net.k_pe,
                "logit_clip": setup.net.logit_clip,
                "ff_dim": setup.net.ff_dim,
                "episodes": episode_count,
                "map": [setup.width, setup.height],
            }
            (ckpt_dir / "checkpoint.json").write_text(json.dumps(manifest, indent=2))

    return TrainResult(network=network, log_rows=log_rows, checkpoint_path=final_path)


def write_training_log(rows: list[dict], path: str | Path) -> None:
    """Training log CSV: one row per episode."""
    cols = ["episode", "wall_time_s", "mean_return", "policy_loss", "value_loss", "entropy"]
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

"""Attention encoder/decoder over the augmented graph.

Every node is embedded from its five observation features plus its
spectral positional encoding, with a separate affine branch marking the
agent's current node. One self-attention block builds context-aware node
features. The decoder cross-attends the current node's feature over its
neighbors, reads a state value off the result with a linear head, and
scores each neighbor with a pointer layer whose clipped compatibilities
become the action distribution. Because every stage is per-node or
attention-based, the same parameters run on graphs of any size and any
neighbor count.

Functions accept single observations (2D node arrays) or stacked batches
(3D with a leading batch dimension); batches must share the node count
and neighbor count, which holds for rollouts on a fixed roadmap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

NODE_FEATURE_DIM = 5


@dataclass(frozen=True)
class NetConfig:
    """Architecture sizes and the pointer logit clip."""

    embed_dim: int = 128
    heads: int = 4
    k_pe: int = 32
    logit_clip: float = 10.0
    ff_dim: int = 0  # 0 means 2 * embed_dim

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.logit_clip <= 0:
            raise ConfigError("logit_clip must be positive")

    @property
    def hidden_dim(self) -> int:
        return self.ff_dim if self.ff_dim > 0 else 2 * self.embed_dim


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(cfg: NetConfig, seed: int = 0) -> dict[str, Tensor]:
    """Fresh learnable parameters, Xavier-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    d, ff, kp = cfg.embed_dim, cfg.hidden_dim, cfg.k_pe
    spec: dict[str, np.ndarray] = {
        "embed.node.w": _xavier(rng, NODE_FEATURE_DIM, d),
        "embed.node.b": np.zeros(d),
        "embed.current.w": _xavier(rng, NODE_FEATURE_DIM, d),
        "embed.current.b": np.zeros(d),
        "embed.pe.w": _xavier(rng, kp, d),
        "embed.pe.b": np.zeros(d),
    }
    for blk in ("enc", "dec"):
        spec.update(
            {
                f"{blk}.attn.wq": _xavier(rng, d, d),
                f"{blk}.attn.wk": _xavier(rng, d, d),
                f"{blk}.attn.wv": _xavier(rng, d, d),
                f"{blk}.attn.wo": _xavier(rng, d, d),
                f"{blk}.ln1.g": np.ones(d),
                f"{blk}.ln1.b": np.zeros(d),
                f"{blk}.ffn.w1": _xavier(rng, d, ff),
                f"{blk}.ffn.b1": np.zeros(ff),
                f"{blk}.ffn.w2": _xavier(rng, ff, d),
                f"{blk}.ffn.b2": np.zeros(d),
                f"{blk}.ln2.g": np.ones(d),
                f"{blk}.ln2.b": np.zeros(d),
            }
        )
    spec.update(
        {
            "ptr.wq": _xavier(rng, d, d),
            "ptr.wk": _xavier(rng, d, d),
            "value.w": _xavier(rng, d, 1),
            "value.b": np.zeros(1),
        }
    )
    return {name: Tensor(arr, requires_grad=True) for name, arr in spec.items()}


def params_to_arrays(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in params.items()}


def params_from_arrays(arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {name: Tensor(arr, requires_grad=True) for name, arr in arrays.items()}


def _attention(
    q_src: Tensor, kv_src: Tensor, params: dict[str, Tensor], prefix: str, cfg: NetConfig
) -> Tensor:
    """Multi-head scaled dot-product attention of q_src over kv_src."""
    batched = q_src.data.ndim == 3
    heads = cfg.heads
    dh = cfg.embed_dim // heads
    q = ad.split_heads(ad.matmul(q_src, params[f"{prefix}.wq"]), heads)
    k = ad.split_heads(ad.matmul(kv_src, params[f"{prefix}.wk"]), heads)
    v = ad.split_heads(ad.matmul(kv_src, params[f"{prefix}.wv"]), heads)
    scores = ad.scale(ad.matmul(q, ad.transpose_last2(k)), 1.0 / np.sqrt(dh))
    attn = ad.softmax_rows(scores)
    mixed = ad.merge_heads(ad.matmul(attn, v), heads, batched=batched)
    return ad.matmul(mixed, params[f"{prefix}.wo"])


def _attention_block(
    q_src: Tensor, kv_src: Tensor, params: dict[str, Tensor], blk: str, cfg: NetConfig
) -> Tensor:
    """Attention plus feedforward sublayer, each with a residual and layer norm."""
    attn_out = _attention(q_src, kv_src, params, f"{blk}.attn", cfg)
    h = ad.layer_norm(ad.add(q_src, attn_out), params[f"{blk}.ln1.g"], params[f"{blk}.ln1.b"])
    ff = ad.matmul(ad.relu(ad.add(ad.matmul(h, params[f"{blk}.ffn.w1"]), params[f"{blk}.ffn.b1"])), params[f"{blk}.ffn.w2"])
    ff = ad.add(ff, params[f"{blk}.ffn.b2"])
    return ad.layer_norm(ad.add(h, ff), params[f"{blk}.ln2.g"], params[f"{blk}.ln2.b"])


def embed_nodes(
    features: Tensor,
    pe: Tensor,
    current: np.ndarray | int,
    params: dict[str, Tensor],
    cfg: NetConfig,
) -> Tensor:
    """Affine node embeddings with the current-node branch and positional encodings.

    features: (n, 5) or (B, n, 5); pe: matching (n, k_pe) or (B, n, k_pe);
    current: node index or (B,) indices.
    """
    if features.shape[-1] != NODE_FEATURE_DIM:
        raise ShapeError(f"expected {NODE_FEATURE_DIM} node features, got {features.shape[-1]}")
    if pe.shape[-1] != cfg.k_pe:
        raise ShapeError(f"positional encoding dim {pe.shape[-1]} != configured {cfg.k_pe}")
    h_node = ad.add(ad.matmul(features, params["embed.node.w"]), params["embed.node.b"])
    if features.data.ndim == 2:
        idx = np.asarray([int(current)])
        cur_feat = ad.gather_rows(features, idx)
    else:
        idx = np.asarray(current, dtype=np.intp)
        cur_feat = ad.gather_rows(features, idx[:, None])
    h_cur = ad.add(ad.matmul(cur_feat, params["embed.current.w"]), params["embed.current.b"])
    h = ad.set_rows(h_node, idx, h_cur)
    return ad.add(h, ad.add(ad.matmul(pe, params["embed.pe.w"]), params["embed.pe.b"]))


def encode(h: Tensor, params: dict[str, Tensor], cfg: NetConfig) -> Tensor:
    """Self-attention over all nodes: context-aware node features."""
    return _attention_block(h, h, params, "enc", cfg)


def decode(
    h_en: Tensor,
    current: np.ndarray | int,
    neighbors: np.ndarray,
    params: dict[str, Tensor],
    cfg: NetConfig,
    afford_mask: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Action distribution over the neighbor set and the state value.

    h_en: (n, d) or (B, n, d); neighbors: (k,) node indices or (B, k);
    afford_mask marks which neighbors are affordable (True = legal); the
    rest get -inf logits so the distribution is supported on legal moves.
    Returns (pi, value) with pi of shape (k,)/(B, k) and value ()/(B,).
    """
    neighbors = np.asarray(neighbors, dtype=np.intp)
    batched = h_en.data.ndim == 3
    if neighbors.size == 0:
        raise ShapeError("neighbor list must be nonempty")
    if batched:
        bsz = h_en.shape[0]
        cur_idx = np.asarray(current, dtype=np.intp)[:, None]
        h_c = ad.gather_rows(h_en, cur_idx)  # (B, 1, d)
        h_n = ad.gather_rows(h_en, neighbors)  # (B, k, d)
    else:
        h_c = ad.gather_rows(h_en, np.asarray([int(current)]))  # (1, d)
        h_n = ad.gather_rows(h_en, neighbors)  # (k, d)

    h_ec = _attention_block(h_c, h_n, params, "dec", cfg)
    value = ad.add(ad.matmul(h_ec, params["value.w"]), params["value.b"])

    q = ad.matmul(h_ec, params["ptr.wq"])
    k = ad.matmul(h_n, params["ptr.wk"])
    u = ad.scale(ad.matmul(q, ad.transpose_last2(k)), 1.0 / np.sqrt(cfg.embed_dim))
    logits = ad.scale(ad.tanh(u), cfg.logit_clip)
    if afford_mask is not None:
        mask = np.where(np.asarray(afford_mask, dtype=bool), 0.0, -1e9)
        if batched:
            mask = mask.reshape(bsz, 1, -1)
        else:
            mask = mask.reshape(1, -1)
        logits = ad.add(logits, Tensor(mask))
    pi = ad.softmax_rows(logits)

    if batched:
        k_count = neighbors.shape[-1]
        return ad.reshape(pi, (bsz, k_count)), ad.reshape(value, (bsz,))
    return ad.reshape(pi, (neighbors.shape[0],)), ad.reshape(value, ())


def policy_forward(
    features: np.ndarray,
    pe: np.ndarray,
    current,
    neighbors: np.ndarray,
    params: dict[str, Tensor],
    cfg: NetConfig,
    afford_mask: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Full pass from raw observation arrays to (pi, value)."""
    feats = Tensor(features)
    pe_t = Tensor(pe)
    h = embed_nodes(feats, pe_t, current, params, cfg)
    h_en = encode(h, params, cfg)
    return decode(h_en, current, neighbors, params, cfg, afford_mask=afford_mask)


class PolicyNetwork:
    """Parameter bundle with inference helpers; one instance per worker."""

    def __init__(self, cfg: NetConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed=seed)

    def distribution(self, obs, pe: np.ndarray) -> tuple[np.ndarray, float]:
        """Action probabilities over the observation's neighbors and the value estimate."""
        with ad.no_grad():
            pi, value = policy_forward(
                obs.graph.features(),
                pe,
                obs.current_node,
                obs.neighbors,
                self.params,
                self.cfg,
                afford_mask=obs.affordable,
            )
        return pi.data.copy(), float(value.data)

    def act(self, obs, pe: np.ndarray, rng: np.random.Generator) -> tuple[int, float, float]:
        """Sample an action; returns (action, log-prob, value)."""
        pi, value = self.distribution(obs, pe)
        action = int(rng.choice(len(pi), p=pi / pi.sum()))
        return action, float(np.log(pi[action])), value

    def snapshot(self) -> dict[str, np.ndarray]:
        return params_to_arrays(self.params)

    def serialize(self) -> bytes:
        return ad.save_tensors(self.snapshot())

    @classmethod
    def deserialize(cls, blob: bytes, cfg: NetConfig) -> "PolicyNetwork":
        return cls(cfg, params=params_from_arrays(ad.load_tensors(blob)))


class PolicyPlanner:
    """Harness-facing wrapper: one trained network driving an environment."""

    def __init__(
        self,
        network: PolicyNetwork,
        pe: np.ndarray,
        seed: int = 0,
        greedy: bool = True,
    ):
        self.network = network
        self.pe = pe
        self.greedy = greedy
        self.rng = np.random.default_rng(seed)

    def select_action(self, env) -> int:
        obs = env.observation()
        pi, _ = self.network.distribution(obs, self.pe)
        if self.greedy:
            return int(np.argmax(pi))
        return int(self.rng.choice(len(pi), p=pi / pi.sum()))

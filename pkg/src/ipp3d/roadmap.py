"""Multi-altitude decision graph over the grid.

Nodes live at grid-cell centers replicated across the flight altitudes
(one node per cell per level by default, so a 15x15 map with two levels
yields 450 candidate positions). Each node connects to the same number of
nearest neighbors at every altitude level, which keeps ascending and
descending moves available everywhere. Spectral positional encodings from
the graph Laplacian give the policy a coordinate system for connectivity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .belief import BeliefState
from .errors import ConfigError
from .groundtruth import GroundTruthField
from .sensor import SensorConfig, footprint_cells_grid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Roadmap:
    """Immutable node/edge graph with positional encodings.

    nodes: (n, 3) positions in meters, ordered level-major (all nodes of
    the first altitude level in row-major cell order, then the next level).
    edges: (n, k) neighbor node indices, k/n_levels per altitude level.
    pe: (n, k_pe) Laplacian eigenvector encodings.
    """

    nodes: np.ndarray
    edges: np.ndarray
    pe: np.ndarray
    altitude_levels: tuple[float, ...]
    width: int
    height: int
    resolution: float

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def k(self) -> int:
        return self.edges.shape[1]

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def neighbor_distances(self, node: int) -> np.ndarray:
        """Euclidean edge lengths from a node to each of its k neighbors."""
        return np.linalg.norm(self.nodes[self.edges[node]] - self.nodes[node], axis=1)

    def nearest_node(self, pos) -> int:
        return int(np.argmin(np.linalg.norm(self.nodes - np.asarray(pos, dtype=float), axis=1)))


@dataclass(frozen=True)
class AugmentedGraph:
    """Roadmap plus per-node belief statistics, the policy's observation of the world."""

    roadmap: Roadmap
    node_mu: np.ndarray
    node_std: np.ndarray
    normalized_coords: np.ndarray

    def features(self) -> np.ndarray:
        """(n, 5) policy input features: normalized x, y, z, footprint mean, footprint std."""
        return np.column_stack([self.normalized_coords, self.node_mu, self.node_std])


def build_roadmap(
    field: GroundTruthField,
    altitudes: list[float] | tuple[float, ...],
    k: int,
    k_pe: int = 32,
    sampling: str = "lattice",
    seed: int | None = None,
) -> Roadmap:
    """Construct the multi-altitude roadmap over a field's grid.

    sampling="lattice" places one node per cell center per altitude, which
    is deterministic and matches the fixed action-space size the planners
    assume. sampling="random" draws the same number of horizontal sites
    uniformly at random per level instead (seed required).

    k must be divisible by the number of altitude levels; each node gets
    k/levels nearest neighbors at every level (3D Euclidean distance, ties
    broken by lower node index).
    """
    levels = tuple(float(a) for a in altitudes)
    if len(levels) == 0:
        raise ConfigError("at least one altitude level is required")
    if len(set(levels)) != len(levels):
        raise ConfigError("altitude levels must be distinct")
    if k % len(levels) != 0:
        raise ConfigError(f"k={k} not divisible by {len(levels)} altitude levels")

    if sampling == "lattice":
        sites = field.cell_centers()
    elif sampling == "random":
        if seed is None:
            raise ConfigError("random sampling requires a seed")
        rng = np.random.default_rng(seed)
        ext_x, ext_y = field.extent
        sites = np.column_stack(
            [rng.uniform(0, ext_x, field.n_cells), rng.uniform(0, ext_y, field.n_cells)]
        )
    else:
        raise ConfigError(f"unknown sampling mode {sampling!r}")

    n_sites = sites.shape[0]
    nodes = np.vstack(
        [np.column_stack([sites, np.full(n_sites, z)]) for z in levels]
    )
    n = nodes.shape[0]
    k_per = k // len(levels)
    if k >= n:
        raise ConfigError(f"k={k} must be smaller than the node count {n}")
    if k_per > n_sites - 1:
        raise ConfigError("k per level exceeds available nodes at a level")

    edges = np.empty((n, k), dtype=np.intp)
    for li in range(len(levels)):
        level_idx = np.arange(li * n_sites, (li + 1) * n_sites)
        # (n, n_sites) distances from every node to every node of this level
        diff = nodes[:, None, :] - nodes[level_idx][None, :, :]
        dists = np.sqrt(np.sum(diff * diff, axis=-1))
        # Exclude self-loops for nodes that live on this level.
        dists[level_idx, np.arange(n_sites)] = np.inf
        order = np.argsort(dists, axis=1, kind="stable")[:, :k_per]
        edges[:, li * k_per : (li + 1) * k_per] = level_idx[order]

    pe = laplacian_pe_from_edges(edges, n, k_pe)
    return Roadmap(
        nodes=nodes,
        edges=edges,
        pe=pe,
        altitude_levels=levels,
        width=field.width,
        height=field.height,
        resolution=field.resolution,
    )


def laplacian_pe_from_edges(edges: np.ndarray, n: int, k_pe: int) -> np.ndarray:
    """Laplacian eigenvector encodings for a (n, k) neighbor-index array.

    Eigenvectors of the symmetric normalized Laplacian of the symmetrized
    adjacency, sorted by ascending eigenvalue with the trivial zero-mode
    skipped. Signs are fixed so each vector's largest-magnitude entry is
    positive. Disconnected graphs get per-component encodings, zero-padded
    and renormalized so the returned columns stay orthonormal.
    """
    if k_pe >= n:
        raise ConfigError(f"k_pe={k_pe} must be smaller than the node count {n}")
    rows = np.repeat(np.arange(n), edges.shape[1])
    cols = edges.ravel()
    adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    adj = adj.maximum(adj.T)
    adj.data[:] = 1.0

    n_comp, labels = connected_components(adj, directed=False)
    if n_comp > 1:
        log.warning("roadmap graph has %d components; computing per-component encodings", n_comp)

    pe = np.zeros((n, k_pe))
    filled = np.zeros(k_pe, dtype=int)
    for comp in range(n_comp):
        idx = np.flatnonzero(labels == comp)
        m = len(idx)
        if m == 1:
            continue
        sub = adj[np.ix_(idx, idx)].toarray()
        deg = sub.sum(axis=1)
        d_isqrt = 1.0 / np.sqrt(deg)
        lap = np.eye(m) - d_isqrt[:, None] * sub * d_isqrt[None, :]
        eigvals, eigvecs = np.linalg.eigh(lap)
        take = min(k_pe, m - 1)
        vecs = eigvecs[:, 1 : 1 + take]  # skip the trivial zero eigenvalue mode
        flip = vecs[np.argmax(np.abs(vecs), axis=0), np.arange(take)] < 0
        vecs[:, flip] *= -1.0
        pe[idx, :take] = vecs
        filled[:take] += 1

    # Columns holding vectors from several components have norm sqrt(count).
    scale = np.where(filled > 0, np.sqrt(np.maximum(filled, 1)), 1.0)
    return pe / scale


def laplacian_pe(roadmap: Roadmap, k_pe: int) -> np.ndarray:
    """Recompute positional encodings for an existing roadmap at a given dimension."""
    return laplacian_pe_from_edges(roadmap.edges, roadmap.n_nodes, k_pe)


def normalize_coords(nodes: np.ndarray) -> np.ndarray:
    """Affine per-axis rescaling of positions into [0, 1]; constant axes map to 0."""
    nodes = np.asarray(nodes, dtype=np.float64)
    lo = nodes.min(axis=0)
    hi = nodes.max(axis=0)
    span = hi - lo
    out = np.zeros_like(nodes)
    ok = span > 0
    out[:, ok] = (nodes[:, ok] - lo[ok]) / span[ok]
    return out


def node_footprints(roadmap: Roadmap, cfg: SensorConfig) -> list[np.ndarray]:
    """Per-node sensor footprints, precomputed once since the roadmap is static."""
    return [
        footprint_cells_grid(
            float(x), float(y), float(z), roadmap.width, roadmap.height, roadmap.resolution, cfg
        )
        for x, y, z in roadmap.nodes
    ]


def augment(
    roadmap: Roadmap,
    belief: BeliefState,
    sensor: SensorConfig,
    footprints: list[np.ndarray] | None = None,
    std_mode: str = "mean",
) -> AugmentedGraph:
    """Attach belief statistics to every node.

    node_mu and node_std aggregate the belief mean and per-cell standard
    deviation over each node's sensor footprint. std_mode="mean" averages
    the cell stds (default); std_mode="trace" sums the variances instead.
    """
    if footprints is None:
        footprints = node_footprints(roadmap, sensor)
    std = belief.std()
    n = roadmap.n_nodes
    node_mu = np.empty(n)
    node_std = np.empty(n)
    if std_mode == "mean":
        for i, fp in enumerate(footprints):
            node_mu[i] = np.mean(belief.mu[fp])
            node_std[i] = np.mean(std[fp])
    elif std_mode == "trace":
        var = std * std
        for i, fp in enumerate(footprints):
            node_mu[i] = np.mean(belief.mu[fp])
            node_std[i] = np.sum(var[fp])
    else:
        raise ConfigError(f"unknown std_mode {std_mode!r}")
    return AugmentedGraph(
        roadmap=roadmap,
        node_mu=node_mu,
        node_std=node_std,
        normalized_coords=normalize_coords(roadmap.nodes),
    )


def save_edges_text(roadmap: Roadmap) -> str:
    """Edge list dump, one 'source target' pair per line."""
    lines = []
    for i in range(roadmap.n_nodes):
        for j in roadmap.edges[i]:
            lines.append(f"{i} {j}")
    return "\n".join(lines) + "\n"

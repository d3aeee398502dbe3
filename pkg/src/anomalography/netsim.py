"""Synthetic network, traffic, anomaly, and measurement generation.

Topologies are random geometric graphs on the unit square; every ordered
node pair is a flow routed over a minimum-hop path. Traffic streams are
low rank by construction (z_t = U w_t), anomalies are sparse with
amplitudes in {-amp, 0, +amp}, and each link is observed independently
with probability obs_prob per slot.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .core import (
    AnomalographyError,
    DimensionMismatchError,
    Observation,
    ObservationMask,
    RoutingMatrix,
    substream,
)


class GraphDisconnectedError(AnomalographyError):
    """The (effective) topology is not connected."""


@dataclass(frozen=True)
class Topology:
    """Connected geometric graph with a fixed directed-link ordering.

    ``links`` lists both directions of every undirected edge, sorted
    lexicographically; its order fixes the rows of every routing matrix
    derived from this topology. ``flows`` lists all N(N-1) ordered node
    pairs and fixes the columns.
    """

    positions: np.ndarray
    adjacency: np.ndarray
    links: tuple[tuple[int, int], ...]

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def n_links(self) -> int:
        return len(self.links)

    @cached_property
    def flows(self) -> tuple[tuple[int, int], ...]:
        n = self.n_nodes
        return tuple((s, d) for s in range(n) for d in range(n) if s != d)

    @property
    def n_flows(self) -> int:
        return self.n_nodes * (self.n_nodes - 1)

    @cached_property
    def link_index(self) -> dict[tuple[int, int], int]:
        return {link: i for i, link in enumerate(self.links)}


def adjacency_from_positions(positions: np.ndarray, comm_range: float) -> np.ndarray:
    """Symmetric adjacency: nodes closer than comm_range (strictly) connect."""
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    adj = dist < comm_range
    np.fill_diagonal(adj, False)
    return adj


def is_connected(adjacency: np.ndarray) -> bool:
    n = adjacency.shape[0]
    if n == 0:
        return False
    seen = np.zeros(n, dtype=bool)
    queue = deque([0])
    seen[0] = True
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adjacency[u]):
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return bool(seen.all())


def topology_from_positions(positions: np.ndarray, comm_range: float) -> Topology:
    """Build a Topology from fixed positions; raises if disconnected."""
    positions = np.asarray(positions, dtype=np.float64)
    adj = adjacency_from_positions(positions, comm_range)
    if not is_connected(adj):
        raise GraphDisconnectedError("geometric graph is disconnected")
    links = tuple(
        (int(i), int(j)) for i in range(len(positions)) for j in np.flatnonzero(adj[i])
    )
    return Topology(positions=positions, adjacency=adj, links=links)


def gen_rgg(n_nodes: int, comm_range: float, seed: int, max_redraws: int = 10_000) -> Topology:
    """Random geometric graph on the unit square, redrawn until connected.

    Positions come from the "positions" substream keyed by the attempt
    index, so a successful draw is reproducible regardless of how many
    redraws preceded it.
    """
    for attempt in range(max_redraws):
        positions = substream(seed, "positions", attempt).random((n_nodes, 2))
        try:
            return topology_from_positions(positions, comm_range)
        except GraphDisconnectedError:
            continue
    raise GraphDisconnectedError(
        f"no connected graph in {max_redraws} draws (n={n_nodes}, range={comm_range})"
    )


def min_hop_routing(topo: Topology, adjacency: np.ndarray | None = None) -> RoutingMatrix:
    """Minimum-hop routing over all ordered node pairs.

    Ties are broken deterministically: among all shortest paths the
    lexicographically smallest node sequence is chosen (each step takes the
    lowest-indexed neighbor that still lies on a shortest path). Passing an
    effective adjacency (a subgraph of the base topology) routes around
    deactivated links; those links keep their rows, identically zero.
    """
    adj = topo.adjacency if adjacency is None else np.asarray(adjacency, dtype=bool)
    if adjacency is not None and (adj & ~topo.adjacency).any():
        raise DimensionMismatchError("adjacency", "must be a subgraph of the base topology")
    if not is_connected(adj):
        raise GraphDisconnectedError("effective topology is disconnected")
    n = topo.n_nodes
    neighbors = [np.flatnonzero(adj[u]) for u in range(n)]
    # BFS from each destination; dist[d, u] = hops from u to d.
    dist = np.full((n, n), -1, dtype=np.int64)
    for d in range(n):
        dist[d, d] = 0
        queue = deque([d])
        while queue:
            u = queue.popleft()
            for v in neighbors[u]:
                if dist[d, v] < 0:
                    dist[d, v] = dist[d, u] + 1
                    queue.append(v)
    R = np.zeros((topo.n_links, topo.n_flows))
    link_index = topo.link_index
    for f, (s, d) in enumerate(topo.flows):
        cur = s
        while cur != d:
            # Lowest-indexed neighbor one hop closer to d: neighbors are in
            # ascending order, so the first hit is the lexicographic choice.
            for v in neighbors[cur]:
                if dist[d, v] == dist[d, cur] - 1:
                    break
            R[link_index[(cur, int(v))], f] = 1.0
            cur = int(v)
    return RoutingMatrix(R)


def _undirected_edges(adjacency: np.ndarray) -> list[tuple[int, int]]:
    i_idx, j_idx = np.nonzero(np.triu(adjacency, k=1))
    return [(int(i), int(j)) for i, j in zip(i_idx, j_idx)]


def _is_bridge(adjacency: np.ndarray, edge: tuple[int, int]) -> bool:
    i, j = edge
    trial = adjacency.copy()
    trial[i, j] = trial[j, i] = False
    return not is_connected(trial)


@dataclass(frozen=True)
class ChurnModel:
    """Slowly varying effective topology: per slot, one uniformly chosen
    non-bridge active edge is removed with probability alpha and one
    uniformly chosen inactive edge of the base graph is added with
    probability alpha, independently. The routing matrix therefore stays
    put with probability at least (1 - alpha)^2."""

    alpha: float
    active: np.ndarray
    routing: RoutingMatrix

    @classmethod
    def initial(cls, topo: Topology, alpha: float) -> "ChurnModel":
        if not 0.0 <= alpha <= 1.0:
            raise DimensionMismatchError("alpha", "must lie in [0, 1]")
        return cls(alpha=alpha, active=topo.adjacency.copy(), routing=min_hop_routing(topo))


def churn_step(model: ChurnModel, topo: Topology, rng: np.random.Generator):
    """Advance the effective topology one slot.

    Both coins are always drawn (in the order removal, addition) so the
    random stream advances identically whether or not either move fires.
    Candidate sets are taken from the pre-step state; removal candidates
    exclude bridges, so the effective graph stays connected.

    Returns (new_model, routing); routing is the same object as before
    when the topology did not change.
    """
    do_remove = rng.random() < model.alpha
    do_add = rng.random() < model.alpha
    active = model.active
    removed = added = None
    if do_remove:
        candidates = [e for e in _undirected_edges(active) if not _is_bridge(active, e)]
        if candidates:
            removed = candidates[rng.integers(len(candidates))]
    if do_add:
        candidates = _undirected_edges(topo.adjacency & ~active)
        if candidates:
            added = candidates[rng.integers(len(candidates))]
    if removed is None and added is None:
        return model, model.routing
    new_active = active.copy()
    for edge, value in ((removed, False), (added, True)):
        if edge is not None:
            i, j = edge
            new_active[i, j] = new_active[j, i] = value
    routing = min_hop_routing(topo, new_active)
    return replace(model, active=new_active, routing=routing), routing


def churn_routing_stream(topo: Topology, alpha: float, seed: int) -> Iterator[RoutingMatrix]:
    """Infinite sequence R_1, R_2, ... under the churn model."""
    model = ChurnModel.initial(topo, alpha)
    rng = substream(seed, "churn")
    while True:
        yield model.routing
        model, _ = churn_step(model, topo, rng)


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of one synthetic measurement stream."""

    n_nodes: int = 15
    comm_range: float = 0.35
    true_rank: int = 2
    sigma: float = 1e-2
    anomaly_prob: float = 0.005
    obs_prob: float = 1.0
    horizon: int = 100
    seed: int = 0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.n_nodes < 2:
            raise DimensionMismatchError("n_nodes", "need at least two nodes")
        if self.comm_range <= 0:
            raise DimensionMismatchError("comm_range", "must be positive")
        if self.true_rank < 1:
            raise DimensionMismatchError("true_rank", "must be a positive integer")
        if self.sigma < 0:
            raise DimensionMismatchError("sigma", "must be nonnegative")
        if not 0.0 <= self.anomaly_prob <= 1.0:
            raise DimensionMismatchError("anomaly_prob", "must lie in [0, 1]")
        if not 0.0 <= self.obs_prob <= 1.0:
            raise DimensionMismatchError("obs_prob", "must lie in [0, 1]")
        if self.horizon < 1:
            raise DimensionMismatchError("horizon", "must be a positive integer")


class StreamSlot(NamedTuple):
    obs: Observation
    x_true: np.ndarray
    a_true: np.ndarray


def gen_stream(cfg: SynthConfig, routing) -> Iterator[StreamSlot]:
    """Generate the measurement stream y_t = R_t (z_t + a_t) + v_t, masked.

    ``routing`` is a single RoutingMatrix or an iterable yielding one per
    slot (e.g. churn_routing_stream). Flow traffic is z_t = U w_t with
    U drawn once (entries N(0, 1/F)) and w_t iid standard normal, so the
    noiseless link panel has rank at most true_rank. Traffic, anomalies,
    noise, and masks draw from separate substreams: changing e.g. sigma
    or obs_prob leaves everything else bit-identical.
    """
    if isinstance(routing, RoutingMatrix):
        routing_iter: Iterator[RoutingMatrix] = itertools.repeat(routing)
    else:
        routing_iter = iter(routing)
    first = next(routing_iter)
    n_flows = first.n_flows
    n_links = first.n_links
    rng_traffic = substream(cfg.seed, "traffic")
    rng_anom = substream(cfg.seed, "anomalies")
    rng_noise = substream(cfg.seed, "noise")
    rng_mask = substream(cfg.seed, "mask")
    U = rng_traffic.normal(0.0, 1.0 / np.sqrt(n_flows), (n_flows, cfg.true_rank))
    R = first
    for t in range(1, cfg.horizon + 1):
        if t > 1:
            R = next(routing_iter)
        w = rng_traffic.standard_normal(cfg.true_rank)
        z = U @ w
        u = rng_anom.random(n_flows)
        a = np.where(u < cfg.anomaly_prob / 2, -cfg.amplitude,
                     np.where(u < cfg.anomaly_prob, cfg.amplitude, 0.0))
        v = rng_noise.normal(0.0, cfg.sigma, n_links)
        observed = rng_mask.random(n_links) < cfg.obs_prob
        x = R.entries @ z
        y = x + R.entries @ a + v
        obs = Observation(y=y, mask=ObservationMask.from_bool(observed), routing=R, t=t)
        yield StreamSlot(obs, x, a)


def gen_flow_matrix(n_flows: int, horizon: int, rank: int, spike_prob: float,
                    spike_amplitude: float, sigma: float, seed: int):
    """Small flow-level panel with low-rank structure plus sparse spikes.

    Stand-in for real origin-destination data in CI: returns
    (Y, X_true, A_true) with Y = X + A + noise, X of the given rank and
    A having iid +/- spikes.
    """
    rng_traffic = substream(seed, "traffic")
    rng_anom = substream(seed, "anomalies")
    rng_noise = substream(seed, "noise")
    U = rng_traffic.normal(0.0, 1.0 / np.sqrt(rank), (n_flows, rank))
    W = rng_traffic.standard_normal((rank, horizon))
    X = U @ W
    u = rng_anom.random((n_flows, horizon))
    A = np.where(u < spike_prob / 2, -spike_amplitude,
                 np.where(u < spike_prob, spike_amplitude, 0.0))
    Y = X + A + rng_noise.normal(0.0, sigma, (n_flows, horizon))
    return Y, X, A

"""Network simulation: topologies, Metropolis weights, activation models,
lossy/stale channels, and the per-round gossip scheduler.

The scheduler here is the per-agent reference implementation of one round:
trigger evaluations on activated nodes, per-directed-edge drops and delays,
freshness-ordered cache updates, then a gossip step with the round's
effective doubly-stochastic weights. The vectorized engine used by the
experiment runner reproduces these semantics exactly (there is a test
pinning the two trajectories together).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import protocol

__all__ = [
    "Topology",
    "GossipWeights",
    "ChannelModel",
    "ActivationModel",
    "TopologyError",
    "build_topology",
    "metropolis_weights",
    "spectral_gap",
    "consensus_residual",
    "effective_weights",
    "expected_weights",
    "RoundScheduler",
    "RoundReport",
]


class TopologyError(ValueError):
    """Raised for malformed or disconnected communication graphs."""


@dataclass(frozen=True)
class Topology:
    """Connected undirected graph; edges are sorted (i, k) pairs with i < k."""

    num_nodes: int
    edges: tuple
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.num_nodes
        if n < 1:
            raise TopologyError("need at least one node")
        seen = set()
        for i, k in self.edges:
            if i == k:
                raise TopologyError("self-loops are not allowed")
            if not (0 <= i < n and 0 <= k < n):
                raise TopologyError("edge endpoint out of range")
            e = (min(i, k), max(i, k))
            if e in seen:
                raise TopologyError("duplicate edge")
            seen.add(e)
        object.__setattr__(self, "edges", tuple(sorted(seen)))
        if not self._connected():
            raise TopologyError("graph is not connected")

    def _connected(self) -> bool:
        if self.num_nodes == 1:
            return True
        adj = self.neighbor_lists()
        seen = {0}
        stack = [0]
        while stack:
            i = stack.pop()
            for k in adj[i]:
                if k not in seen:
                    seen.add(k)
                    stack.append(k)
        return len(seen) == self.num_nodes

    def neighbor_lists(self) -> list:
        adj = [[] for _ in range(self.num_nodes)]
        for i, k in self.edges:
            adj[i].append(k)
            adj[k].append(i)
        return [sorted(a) for a in adj]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes), dtype=bool)
        for i, k in self.edges:
            a[i, k] = a[k, i] = True
        return a

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1).astype(np.int64)

    def directed_edges(self) -> np.ndarray:
        """All (receiver, sender) pairs, sorted by receiver then sender."""
        pairs = []
        for i, k in self.edges:
            pairs.append((i, k))
            pairs.append((k, i))
        return np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)


def build_topology(kind: str, **params) -> Topology:
    """Construct one of the supported graph families.

    kinds: grid2d(rows, cols), ring(n), path(n), complete(n),
    random_geometric(n, radius, seed). Random geometric graphs are resampled
    (fresh sub-seed each attempt) until connected; failure after
    ``max_attempts`` raises ``TopologyError``.
    """
    if kind == "grid2d":
        rows, cols = int(params["rows"]), int(params["cols"])
        if rows < 1 or cols < 1:
            raise TopologyError("grid2d needs rows, cols >= 1")
        edges = []
        node = lambda r, c: r * cols + c
        for r in range(rows):
            for c in range(cols):
                if c + 1 < cols:
                    edges.append((node(r, c), node(r, c + 1)))
                if r + 1 < rows:
                    edges.append((node(r, c), node(r + 1, c)))
        return Topology(rows * cols, tuple(edges), kind=kind, params={"rows": rows, "cols": cols})
    if kind in ("ring", "path", "complete"):
        n = int(params["n"])
        if n < 2 or (kind == "ring" and n < 3):
            raise TopologyError(f"{kind} needs enough nodes")
        if kind == "ring":
            edges = [(i, (i + 1) % n) for i in range(n)]
        elif kind == "path":
            edges = [(i, i + 1) for i in range(n - 1)]
        else:
            edges = [(i, k) for i in range(n) for k in range(i + 1, n)]
        return Topology(n, tuple(edges), kind=kind, params={"n": n})
    if kind == "random_geometric":
        n = int(params["n"])
        radius = float(params["radius"])
        seed = int(params.get("seed", 0))
        max_attempts = int(params.get("max_attempts", 50))
        root = np.random.SeedSequence(seed)
        for child in root.spawn(max_attempts):
            rng = np.random.default_rng(child)
            pts = rng.random((n, 2))
            dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
            edges = tuple(
                (i, k) for i in range(n) for k in range(i + 1, n) if dist[i, k] <= radius
            )
            try:
                return Topology(n, edges, kind=kind, params={"n": n, "radius": radius, "seed": seed})
            except TopologyError:
                continue
        raise TopologyError(
            f"random_geometric(n={n}, radius={radius}) stayed disconnected after {max_attempts} attempts"
        )
    raise TopologyError(f"unknown topology kind: {kind!r}")


@dataclass(frozen=True)
class GossipWeights:
    """Symmetric doubly-stochastic averaging matrix with spectral data."""

    w: np.ndarray
    sigma2: float
    beta: float


def metropolis_weights(topology: Topology) -> GossipWeights:
    """Metropolis-Hastings weights: w_ik = 1/(1 + max(deg_i, deg_k)) on
    edges, diagonal takes the remainder. Symmetric and doubly stochastic by
    construction."""
    n = topology.num_nodes
    deg = topology.degrees()
    w = np.zeros((n, n))
    for i, k in topology.edges:
        w[i, k] = w[k, i] = 1.0 / (1.0 + max(deg[i], deg[k]))
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    sigma2, _ = spectral_gap(w)
    beta = float(w[w > 0].min()) if n > 1 else 1.0
    return GossipWeights(w=w, sigma2=sigma2, beta=beta)


def spectral_gap(w: np.ndarray) -> tuple:
    """(sigma2, 1 - sigma2) where sigma2 is the second-largest singular value."""
    svals = np.linalg.svd(np.asarray(w, dtype=np.float64), compute_uv=False)
    sigma2 = float(svals[1]) if svals.size > 1 else 0.0
    return sigma2, 1.0 - sigma2


def consensus_residual(z_all: np.ndarray) -> float:
    """Frobenius-style disagreement: sqrt of the summed squared deviations of
    every coordinate from its per-coordinate network mean."""
    z = np.atleast_2d(np.asarray(z_all, dtype=np.float64))
    return float(np.linalg.norm(z - z.mean(axis=0, keepdims=True)))


@dataclass(frozen=True)
class ChannelModel:
    """Per-directed-edge i.i.d. packet loss and bounded random delay.

    A packet is dropped with ``drop_prob``; otherwise it arrives after a
    uniform delay in {0, ..., max_staleness} rounds. Receivers keep the
    freshest payload per neighbor: a late packet older than the cached one
    is discarded. ``seed`` optionally pins this model's stream; by default
    streams are derived from the run seed.
    """

    drop_prob: float = 0.0
    max_staleness: int = 0
    seed: int | None = None

    def __post_init__(self):
        if not (0.0 <= self.drop_prob < 1.0):
            raise ValueError("drop_prob must be in [0, 1)")
        if self.max_staleness < 0:
            raise ValueError("max_staleness must be >= 0")


@dataclass(frozen=True)
class ActivationModel:
    """Which nodes participate each round.

    modes: "synchronous" (all nodes, every round), "randomized_pairwise"
    (one uniformly random edge; its endpoints average 1/2-1/2), and
    "randomized_subset" (each node active independently with ``p_active``;
    the active nodes run Metropolis weights of the induced subgraph).
    Inactive nodes keep their state (identity row).
    """

    mode: str = "synchronous"
    p_active: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in ("synchronous", "randomized_pairwise", "randomized_subset"):
            raise ValueError(f"unknown activation mode {self.mode!r}")
        if not (0.0 < self.p_active <= 1.0):
            raise ValueError("p_active must be in (0, 1]")


def _rng_streams(seed: int, channel: ChannelModel, activation: ActivationModel):
    """Independent activation/drop/delay generators split from one root seed."""
    act_seed, drop_seed, delay_seed = np.random.SeedSequence(seed).spawn(3)
    act = np.random.default_rng(act_seed if activation.seed is None else activation.seed)
    drop = np.random.default_rng(drop_seed if channel.seed is None else channel.seed)
    delay = np.random.default_rng(delay_seed if channel.seed is None else channel.seed + 1)
    return act, drop, delay


def draw_active(rng, activation: ActivationModel, topology: Topology) -> np.ndarray:
    """Sample the round's active-node mask (consumes the activation stream)."""
    n = topology.num_nodes
    if activation.mode == "synchronous":
        return np.ones(n, dtype=bool)
    if activation.mode == "randomized_pairwise":
        e = int(rng.integers(0, len(topology.edges)))
        mask = np.zeros(n, dtype=bool)
        i, k = topology.edges[e]
        mask[i] = mask[k] = True
        return mask
    return rng.random(n) < activation.p_active


def effective_weights(topology: Topology, active: np.ndarray) -> np.ndarray:
    """The round's averaging matrix: Metropolis weights of the subgraph
    induced by the active nodes, identity rows elsewhere.

    Symmetric and doubly stochastic for every active set; an active node
    with no active neighbor keeps an identity row.
    """
    n = topology.num_nodes
    adj = topology.adjacency()
    active = np.asarray(active, dtype=bool)
    both = np.outer(active, active) & adj
    deg_a = both.sum(axis=1)
    w = np.zeros((n, n))
    denom = 1.0 + np.maximum(deg_a[:, None], deg_a[None, :])
    w[both] = 1.0 / denom[both]
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return w


def expected_weights(topology: Topology, activation: ActivationModel) -> np.ndarray:
    """Exact expectation of the per-round effective averaging matrix.

    synchronous: the Metropolis matrix itself. randomized_pairwise:
    I - L/(2|E|) with L the graph Laplacian. randomized_subset: per-edge
    expectation by enumerating the joint activation of the two endpoint
    neighborhoods (the only nodes that influence the edge weight).
    """
    n = topology.num_nodes
    if activation.mode == "synchronous":
        return metropolis_weights(topology).w
    if activation.mode == "randomized_pairwise":
        lap = np.diag(topology.degrees().astype(np.float64)) - topology.adjacency().astype(np.float64)
        return np.eye(n) - lap / (2.0 * len(topology.edges))
    p = activation.p_active
    adj = topology.neighbor_lists()
    w_bar = np.zeros((n, n))
    for i, k in topology.edges:
        others = sorted((set(adj[i]) | set(adj[k])) - {i, k})
        m = len(others)
        in_i = np.array([o in adj[i] for o in others], dtype=np.int64)
        in_k = np.array([o in adj[k] for o in others], dtype=np.int64)
        exp_w = 0.0
        for mask in range(1 << m):
            bits = np.array([(mask >> b) & 1 for b in range(m)], dtype=np.int64)
            prob = p ** bits.sum() * (1 - p) ** (m - bits.sum())
            deg_i = 1 + int((bits * in_i).sum())
            deg_k = 1 + int((bits * in_k).sum())
            exp_w += prob / (1.0 + max(deg_i, deg_k))
        w_bar[i, k] = w_bar[k, i] = p * p * exp_w
    np.fill_diagonal(w_bar, 1.0 - w_bar.sum(axis=1))
    return w_bar


@dataclass
class RoundReport:
    """What one scheduled round did: who was active, which packets were
    delivered (receiver, packet) in application order, and the effective
    weight matrix used for the averaging step."""

    active: np.ndarray
    delivered: list
    effective: np.ndarray


class RoundScheduler:
    """Stateful per-agent round driver (reference semantics).

    Owns the activation/drop/delay streams and the in-flight packet queue.
    Each call to :meth:`schedule_round` performs: trigger evaluation on the
    activated nodes, channel effects per directed edge, freshness-ordered
    cache updates, then one gossip step per node with the round's effective
    weights.
    """

    def __init__(self, topology: Topology, comms: protocol.CommsConfig,
                 channel: ChannelModel | None = None,
                 activation: ActivationModel | None = None, seed: int = 0):
        self.topology = topology
        self.comms = comms
        self.channel = channel or ChannelModel()
        self.activation = activation or ActivationModel()
        self.rng_act, self.rng_drop, self.rng_delay = _rng_streams(seed, self.channel, self.activation)
        self.dir_edges = topology.directed_edges()  # (receiver, sender) rows
        self.pending = []  # (arrival_round, send_time, sender, receiver, Packet)
        self._send_counter = 0
        self._cache_time = {}

    def bootstrap(self, agents) -> None:
        """Round 0: mandatory full exchange. Every node broadcasts its
        clipped+quantized z unconditionally and every cache is populated;
        drops, delays, and the trigger test are bypassed this once."""
        adj = self.topology.neighbor_lists()
        packets = [protocol.maybe_transmit(a, self.comms, 0, 0, force=True) for a in agents]
        for a in agents:
            for k in adj[a.agent_id]:
                a.neighbor_cache[k] = packets[k]
        self._cache_time = {
            (rcv, snd): 0 for rcv, snd in map(tuple, self.dir_edges)
        }
        self._send_counter = 1

    def schedule_round(self, agents, round_index: int, outer_iter: int = 0,
                       inner_step: int = 0) -> RoundReport:
        active = draw_active(self.rng_act, self.activation, self.topology)
        n_dir = len(self.dir_edges)
        drops = (
            self.rng_drop.random(n_dir)
            if self.channel.drop_prob > 0.0
            else None
        )
        delays = (
            self.rng_delay.integers(0, self.channel.max_staleness + 1, size=n_dir)
            if self.channel.max_staleness > 0
            else np.zeros(n_dir, dtype=np.int64)
        )
        send_time = self._send_counter
        self._send_counter += 1

        # trigger evaluation on activated nodes; enqueue surviving copies
        for a in agents:
            if not active[a.agent_id]:
                continue
            pkt = protocol.maybe_transmit(a, self.comms, outer_iter, inner_step)
            if pkt is None:
                continue
            for e, (rcv, snd) in enumerate(self.dir_edges):
                if snd != a.agent_id:
                    continue
                if drops is not None and drops[e] < self.channel.drop_prob:
                    continue
                self.pending.append((round_index + int(delays[e]), send_time, snd, rcv, pkt))

        # deliver everything due, in (sender, send_time) order; keep freshest
        due = [p for p in self.pending if p[0] <= round_index]
        self.pending = [p for p in self.pending if p[0] > round_index]
        delivered = []
        for _, stime, snd, rcv, pkt in sorted(due, key=lambda p: (p[2], p[1], p[3])):
            if stime > self._cache_time.get((rcv, snd), -1):
                agents[rcv].neighbor_cache[snd] = pkt
                self._cache_time[(rcv, snd)] = stime
                delivered.append((rcv, pkt))

        w_eff = effective_weights(self.topology, active)
        for a in agents:
            if active[a.agent_id]:
                protocol.gossip_step(a, w_eff[a.agent_id])
        return RoundReport(active=active, delivered=delivered, effective=w_eff)

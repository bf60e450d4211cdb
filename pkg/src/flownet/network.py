"""Link-graph topology for single-origin, single-destination acyclic networks.

Links are the vertices of the graph here; an edge ``(k, j)`` means link ``k``
discharges into link ``j``.  Indices are 0-based internally: the origin is
link 0 and the destination is link ``K - 1``.  Everything user-facing (CSV
output, scenario files) uses 1-based link labels.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class NetworkError(ValueError):
    """Base class for topology validation failures."""


class CycleDetected(NetworkError):
    pass


class MultipleOrigins(NetworkError):
    pass


class UnreachableLink(NetworkError):
    pass


class OriginFiniteStorage(NetworkError):
    pass


@dataclass(frozen=True)
class Network:
    """Validated acyclic link graph.

    ``out_adj[k]`` and ``in_adj[k]`` are sorted tuples of link indices.
    ``pairs`` lists every adjacent pair ``(k, j)`` in lexicographic order; it
    fixes the column order of every per-pair array in the package.
    """

    K: int
    out_adj: tuple[tuple[int, ...], ...]
    in_adj: tuple[tuple[int, ...], ...]
    storage: tuple[float, ...]
    pairs: tuple[tuple[int, int], ...] = field(init=False)
    topo: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        pairs = tuple((k, j) for k in range(self.K) for j in self.out_adj[k])
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "topo", _topological_order(self.K, self.out_adj))

    @property
    def origin(self) -> int:
        return 0

    @property
    def destination(self) -> int:
        return self.K - 1

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def pair_index(self, k: int, j: int) -> int:
        return self.pairs.index((k, j))

    @property
    def src(self) -> np.ndarray:
        return np.array([k for k, _ in self.pairs], dtype=int)

    @property
    def dst(self) -> np.ndarray:
        return np.array([j for _, j in self.pairs], dtype=int)

    def incidence(self) -> tuple[np.ndarray, np.ndarray]:
        """(P, K) 0/1 matrices mapping pairs to their upstream / downstream link."""
        S = np.zeros((self.n_pairs, self.K))
        D = np.zeros((self.n_pairs, self.K))
        for p, (k, j) in enumerate(self.pairs):
            S[p, k] = 1.0
            D[p, j] = 1.0
        return S, D

    def finite_storage(self, k: int) -> bool:
        return np.isfinite(self.storage[k])


def _topological_order(K, out_adj):
    indeg = [0] * K
    for k in range(K):
        for j in out_adj[k]:
            indeg[j] += 1
    queue = deque(k for k in range(K) if indeg[k] == 0)
    order = []
    while queue:
        k = queue.popleft()
        order.append(k)
        for j in out_adj[k]:
            indeg[j] -= 1
            if indeg[j] == 0:
                queue.append(j)
    if len(order) != K:
        raise CycleDetected("link graph contains a directed cycle")
    return tuple(order)


def build_network(
    K: int,
    edges: Iterable[Sequence[int]],
    storage: Sequence[float] | None = None,
    *,
    one_based: bool = False,
) -> Network:
    """Validate ``edges`` over links ``0..K-1`` and return a :class:`Network`.

    ``storage[k]`` is the jam density of link ``k`` (``inf`` for infinite
    storage).  With ``one_based=True`` the edges use paper-style labels 1..K.
    """
    if K < 1:
        raise NetworkError("a network needs at least one link")
    off = 1 if one_based else 0
    out = [set() for _ in range(K)]
    for e in edges:
        k, j = int(e[0]) - off, int(e[1]) - off
        if not (0 <= k < K and 0 <= j < K):
            raise NetworkError(f"edge {tuple(e)} references a link outside 1..{K}")
        if k == j:
            raise CycleDetected(f"self-loop on link {k + 1}")
        out[k].add(j)
    out_adj = tuple(tuple(sorted(s)) for s in out)
    in_sets = [set() for _ in range(K)]
    for k in range(K):
        for j in out_adj[k]:
            in_sets[j].add(k)
    in_adj = tuple(tuple(sorted(s)) for s in in_sets)

    _topological_order(K, out_adj)  # raises on cycles
    sources = [k for k in range(K) if not in_adj[k]]
    if sources != [0]:
        raise MultipleOrigins(
            f"link 1 must be the unique link without upstream links, got {[s + 1 for s in sources]}"
        )
    sinks = [k for k in range(K) if not out_adj[k]]
    if sinks != [K - 1]:
        raise UnreachableLink(
            f"link {K} must be the unique link without downstream links, got {[s + 1 for s in sinks]}"
        )
    # acyclic + unique source/sink => every link lies on an origin-destination path
    if storage is None:
        storage = [np.inf] * K
    storage = tuple(float(v) for v in storage)
    if len(storage) != K:
        raise NetworkError("storage must list one value per link")
    if np.isfinite(storage[0]):
        raise OriginFiniteStorage("link 1 must have infinite storage")
    return Network(K=K, out_adj=out_adj, in_adj=in_adj, storage=storage)


@dataclass(frozen=True)
class AccessSets:
    """``upstream[k]`` is the set M_k of links that can reach ``k``;
    ``downstream[k]`` is the set N_k of links reachable from ``k``."""

    upstream: tuple[frozenset, ...]
    downstream: tuple[frozenset, ...]


def access_sets(net: Network) -> AccessSets:
    down = [set() for _ in range(net.K)]
    for k in reversed(net.topo):
        for j in net.out_adj[k]:
            down[k].add(j)
            down[k] |= down[j]
    up = [set() for _ in range(net.K)]
    for k in range(net.K):
        for j in down[k]:
            up[j].add(k)
    return AccessSets(
        upstream=tuple(frozenset(s) for s in up),
        downstream=tuple(frozenset(s) for s in down),
    )


# ---------------------------------------------------------------------------
# node-capacitated max-flow


def _split_graph(net: Network, caps, big):
    """Residual capacity matrix of the split graph.

    Link ``k`` becomes nodes ``2k`` (in) and ``2k + 1`` (out) joined by an edge
    of capacity ``caps[k]``; adjacency edges get capacity ``big``.
    """
    n = 2 * net.K
    cap = np.zeros((n, n))
    for k in range(net.K):
        cap[2 * k, 2 * k + 1] = caps[k]
        for j in net.out_adj[k]:
            cap[2 * k + 1, 2 * j] = big
    return cap


def _edmonds_karp(cap, source, sink, tol):
    n = cap.shape[0]
    flow = np.zeros_like(cap)
    total = 0.0
    while True:
        parent = [-1] * n
        parent[source] = source
        queue = deque([source])
        while queue and parent[sink] == -1:
            u = queue.popleft()
            for v in range(n):
                if parent[v] == -1 and cap[u, v] - flow[u, v] > tol:
                    parent[v] = u
                    queue.append(v)
        if parent[sink] == -1:
            break
        path_flow = np.inf
        v = sink
        while v != source:
            u = parent[v]
            path_flow = min(path_flow, cap[u, v] - flow[u, v])
            v = u
        v = sink
        while v != source:
            u = parent[v]
            flow[u, v] += path_flow
            flow[v, u] -= path_flow
            v = u
        total += path_flow
    return total, flow


def max_flow(net: Network, caps, tol: float = 1e-12) -> tuple[float, np.ndarray]:
    """Max origin-destination flow with per-link capacities.

    Returns the value and the per-pair flows (ordered as ``net.pairs``).
    BFS augmenting paths (Edmonds-Karp) make the result deterministic and
    prefer the fewest-link routes.
    """
    caps = np.asarray(caps, dtype=float)
    if np.any(caps < 0) or not np.all(np.isfinite(caps)):
        raise ValueError("capacities must be finite and nonnegative")
    big = float(caps.sum()) + 1.0
    cap = _split_graph(net, caps, big)
    value, flow = _edmonds_karp(cap, 0, 2 * net.destination + 1, tol)
    u = np.array([max(flow[2 * k + 1, 2 * j], 0.0) for k, j in net.pairs])
    return value, u


def enumerate_paths(net: Network) -> list[tuple[int, ...]]:
    paths = []

    def walk(k, acc):
        if k == net.destination:
            paths.append(tuple(acc))
            return
        for j in net.out_adj[k]:
            walk(j, acc + [j])

    walk(0, [0])
    return paths


def is_cut(net: Network, links: Iterable[int], paths=None) -> bool:
    """True when every origin-destination path meets ``links``."""
    s = set(links)
    if paths is None:
        paths = enumerate_paths(net)
    return all(s.intersection(p) for p in paths)


def min_cut(net: Network, caps) -> tuple[float, frozenset]:
    """Minimum link cut.

    The value comes from :func:`max_flow`.  Among the cuts attaining it, the
    lexicographically smallest sorted link tuple is returned; candidates are
    drawn from the minimal cuts of the residual graph, with an exhaustive
    fallback on small networks to settle ties.
    """
    caps = np.asarray(caps, dtype=float)
    value, _ = max_flow(net, caps)
    tol = 1e-9 * max(1.0, value)
    if net.K <= 16:
        paths = enumerate_paths(net)
        best = None
        for r in range(1, net.K + 1):
            for combo in itertools.combinations(range(net.K), r):
                if abs(caps[list(combo)].sum() - value) > tol:
                    continue
                if not is_cut(net, combo, paths):
                    continue
                if best is None or combo < best:
                    best = combo
        if best is not None:
            return value, frozenset(best)
    # large graphs: source side of the final residual graph
    big = float(caps.sum()) + 1.0
    cap = _split_graph(net, caps, big)
    _, flow = _edmonds_karp(cap, 0, 2 * net.destination + 1, 1e-12)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in range(cap.shape[0]):
            if v not in seen and cap[u, v] - flow[u, v] > 1e-12:
                seen.add(v)
                queue.append(v)
    cut = frozenset(k for k in range(net.K) if 2 * k in seen and 2 * k + 1 not in seen)
    return value, cut


def brute_force_min_cut(net: Network, caps) -> float:
    """Cut-enumeration oracle: minimum capacity over all link subsets that cut."""
    caps = np.asarray(caps, dtype=float)
    paths = enumerate_paths(net)
    best = np.inf
    for mask in range(1, 1 << net.K):
        links = [k for k in range(net.K) if mask >> k & 1]
        s = set(links)
        if all(s.intersection(p) for p in paths):
            best = min(best, caps[links].sum())
    return float(best)


@dataclass(frozen=True)
class FlowRatios:
    """Optimal expected-capacity flows and the diverging / flow ratios."""

    ustar: np.ndarray  # per pair
    beta: np.ndarray  # per pair
    gamma: np.ndarray  # (K, K); gamma[m, k] defined where k is reachable from m, else 0
    value: float


def max_flow_p1(net: Network, expected_caps) -> FlowRatios:
    """Solve the expected-capacity max-flow problem and derive beta and gamma.

    Both the inflow and the outflow of an interior link are bounded by its
    expected capacity; with conservation this is exactly the node-capacitated
    max-flow.  Diverges with zero optimal outflow split uniformly.
    """
    value, u = max_flow(net, expected_caps)
    beta = np.zeros(net.n_pairs)
    for k in range(net.K):
        idx = [net.pair_index(k, j) for j in net.out_adj[k]]
        if not idx:
            continue
        tot = u[idx].sum()
        if tot > 0:
            beta[idx] = u[idx] / tot
        else:
            beta[idx] = 1.0 / len(idx)
    gamma = flow_ratios(net, beta)
    return FlowRatios(ustar=u, beta=beta, gamma=gamma, value=value)


def flow_ratios(net: Network, beta) -> np.ndarray:
    gamma = np.zeros((net.K, net.K))
    for m in range(net.K):
        gamma[m, m] = 1.0
        for k in net.topo:
            if k == m:
                continue
            gamma[m, k] = sum(gamma[m, i] * beta[net.pair_index(i, k)] for i in net.in_adj[k])
    return gamma

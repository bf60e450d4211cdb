"""Small systems shared by the tests."""

import numpy as np

from flownet.controls import OpenLoop
from flownet.dynamics import System
from flownet.flow import FlowFunction, FlowTable
from flownet.modes import ModeSystem
from flownet.network import build_network


def make_system(K, edges, F, finite=None, rates=None, send_caps=None, xc=None):
    """CTM links with v = w = 1; ``edges`` are 0-based; ``send_caps`` is (m, K)."""
    finite = [False] * K if finite is None else list(finite)
    xc = [None] * K if xc is None else list(xc)
    funcs = [FlowFunction.ctm(F[k], xc=xc[k], finite=finite[k]) for k in range(K)]
    rates = np.zeros((1, 1)) if rates is None else np.asarray(rates, dtype=float)
    m = rates.shape[0]
    send = np.full((m, K), np.inf) if send_caps is None else np.asarray(send_caps, dtype=float)
    net = build_network(K, edges, [f.xmax for f in funcs])
    modes = ModeSystem(rates=rates, scale=np.ones((m, K)), bias=np.zeros((m, K)))
    return System(net, FlowTable(funcs, send, np.full((m, K), np.inf)), modes)


def single_link(F=1.0, two_mode=False):
    """One infinite link; with ``two_mode`` its capacity toggles between F and 0
    at unit rates."""
    if not two_mode:
        return make_system(1, [], [F])
    return make_system(1, [], [F], rates=[[0, 1], [1, 0]], send_caps=[[np.inf], [0.0]])


def chain(F, finite=None, rates=None, send_caps=None):
    K = len(F)
    return make_system(K, [(k, k + 1) for k in range(K - 1)], F, finite, rates, send_caps)


def diamond(F, finite=None, rates=None, send_caps=None):
    """1 -> {2, 3} -> 4."""
    return make_system(4, [(0, 1), (0, 2), (1, 3), (2, 3)], F, finite, rates, send_caps)


def passthrough(sys):
    """Open loop that requests each link's full capacity on every pair."""
    cap = sys.capacities.max(axis=0)
    return OpenLoop(values=cap[sys.src].astype(float))


def random_dag_edges(K, rng_or_draw):
    """Random acyclic edges on 0..K-1 with 0 the only source and K-1 the only
    sink.  ``rng_or_draw`` is a numpy Generator."""
    rng = rng_or_draw
    edges = set()
    for i in range(K):
        for j in range(i + 1, K):
            if rng.random() < 0.4:
                edges.add((i, j))
    for k in range(1, K):
        if not any(j == k for _, j in edges):
            edges.add((int(rng.integers(0, k)), k))
    for k in range(K - 1):
        if not any(i == k for i, _ in edges):
            edges.add((k, int(rng.integers(k + 1, K))))
    return sorted(edges)

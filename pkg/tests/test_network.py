import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import random_dag_edges
from flownet.network import (
    CycleDetected,
    MultipleOrigins,
    OriginFiniteStorage,
    UnreachableLink,
    access_sets,
    brute_force_min_cut,
    build_network,
    enumerate_paths,
    is_cut,
    max_flow,
    max_flow_p1,
    min_cut,
)

EXAMPLE_EDGES = [(1, 2), (1, 5), (2, 3), (2, 4), (4, 6), (5, 6), (3, 7), (6, 7)]


def example_net():
    return build_network(7, EXAMPLE_EDGES, one_based=True)


def test_pairs_are_lexicographic_and_incidence_matches():
    net = example_net()
    assert net.pairs == ((0, 1), (0, 4), (1, 2), (1, 3), (2, 6), (3, 5), (4, 5), (5, 6))
    S, D = net.incidence()
    assert S.shape == D.shape == (8, 7)
    assert np.all(S.sum(axis=1) == 1) and np.all(D.sum(axis=1) == 1)


@pytest.mark.parametrize(
    "K, edges, exc",
    [
        (3, [(0, 1), (1, 2), (2, 1)], CycleDetected),
        (3, [(0, 2), (1, 2)], MultipleOrigins),
        (3, [(0, 1), (0, 2)], UnreachableLink),
        (2, [(0, 0)], CycleDetected),
    ],
)
def test_invalid_graphs(K, edges, exc):
    with pytest.raises(exc):
        build_network(K, edges)


def test_origin_must_have_infinite_storage():
    with pytest.raises(OriginFiniteStorage):
        build_network(2, [(0, 1)], storage=[3.0, np.inf])


def test_access_sets_on_example():
    acc = access_sets(example_net())
    assert acc.downstream[1] == {2, 3, 5, 6}
    assert acc.upstream[5] == {0, 1, 3, 4}
    assert acc.upstream[0] == frozenset()


def test_paths_and_cuts():
    net = example_net()
    paths = enumerate_paths(net)
    assert len(paths) == 3
    assert is_cut(net, [0])
    assert is_cut(net, [1, 5])
    assert not is_cut(net, [2, 3])


def test_example_p1_split():
    F = np.array([1, 0.5, 0.5, 0.5, 0.5, 0.5, 1.5])
    r = max_flow_p1(example_net(), F)
    assert r.value == pytest.approx(1.0)
    # 1->2, 1->5, 2->3, 2->4, 3->7, 4->6, 5->6, 6->7
    assert np.allclose(r.ustar, [0.5, 0.5, 0.5, 0, 0.5, 0, 0.5, 0.5])
    assert r.gamma[0, 6] == pytest.approx(1.0)
    assert r.gamma[0, 5] == pytest.approx(0.5)


def test_chain_flow_is_bottleneck():
    net = build_network(4, [(0, 1), (1, 2), (2, 3)])
    value, u = max_flow(net, [3, 1.5, 2, 4])
    assert value == pytest.approx(1.5)
    assert np.allclose(u, 1.5)


def test_min_cut_prefers_smallest_lexicographic_set():
    net = build_network(3, [(0, 1), (1, 2)])
    value, cut = min_cut(net, [1, 1, 1])
    assert value == 1 and cut == {0}


@settings(max_examples=100, deadline=None)
@given(K=st.integers(2, 8), seed=st.integers(0, 2**32 - 1))
def test_max_flow_equals_brute_force_cut(K, seed):
    rng = np.random.default_rng(seed)
    net = build_network(K, random_dag_edges(K, rng))
    caps = rng.integers(0, 6, size=K).astype(float)
    value, u = max_flow(net, caps)
    assert value == brute_force_min_cut(net, caps)
    assert min_cut(net, caps)[0] == value
    # the flow respects node capacities and conserves
    S, D = net.incidence()
    assert np.all(u >= -1e-12)
    through = np.maximum(u @ S, u @ D)
    assert np.all(through <= caps + 1e-9)

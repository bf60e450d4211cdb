import numpy as np
import pytest

from flownet.modes import (
    ModeSystem,
    NotErgodic,
    balance_residual,
    independent_disruptions,
    observe,
    occupancy,
    sample_path,
    steady_state,
)


def test_product_of_two_disruptions_is_uniform():
    rates, states = independent_disruptions([(1.0, 1.0), (1.0, 1.0)])
    assert states == [(0, 0), (0, 1), (1, 0), (1, 1)]
    ms = ModeSystem(rates=rates, scale=np.ones((4, 2)), bias=np.zeros((4, 2)))
    p = steady_state(ms)
    assert np.allclose(p, 0.25)
    assert balance_residual(ms, p) <= 1e-10


def test_asymmetric_two_state_chain():
    ms = ModeSystem(rates=[[0, 2.0], [1.0, 0]], scale=np.ones((2, 1)), bias=np.zeros((2, 1)))
    assert np.allclose(steady_state(ms), [1 / 3, 2 / 3])


def test_reducible_chain_is_rejected():
    with pytest.raises(NotErgodic):
        ModeSystem(rates=[[0, 1.0], [0, 0]], scale=np.ones((2, 1)), bias=np.zeros((2, 1)))


def test_decreasing_sensor_map_is_rejected():
    with pytest.raises(ValueError):
        ModeSystem(rates=[[0.0]], scale=-np.ones((1, 1)), bias=np.zeros((1, 1)))


def test_sample_path_occupancy_approaches_p():
    rates, _ = independent_disruptions([(1.0, 1.0), (1.0, 1.0)])
    ms = ModeSystem(rates=rates, scale=np.ones((4, 1)), bias=np.zeros((4, 1)))
    path = sample_path(ms, 0, 4000.0, 3)
    assert path[0] == (0, 0.0)
    assert np.allclose(occupancy(path, 4000.0, 4), 0.25, atol=0.03)
    assert path == sample_path(ms, 0, 4000.0, 3)


def test_dos_sensor_reads_zero():
    ms = ModeSystem(
        rates=[[0, 1.0], [1.0, 0]],
        scale=[[1.0, 1.0], [1.0, 0.0]],
        bias=np.zeros((2, 2)),
    )
    x = np.array([[0.3, 0.8], [0.3, 0.8]])
    assert np.allclose(observe(ms, np.array([0, 1]), x), [[0.3, 0.8], [0.3, 0.0]])

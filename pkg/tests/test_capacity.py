import numpy as np
import pytest

from builders import make_system, random_dag_edges, single_link
from flownet.capacity import capacity_summary
from flownet.scenario import example_system


def test_example_capacities():
    cs = capacity_summary(example_system("infinite", True, True))
    assert cs.emcc == pytest.approx(0.75, abs=1e-9)
    assert cs.mecc == pytest.approx(1.0, abs=1e-9)
    assert cs.per_mode == pytest.approx([1.0, 0.5, 1.0, 0.5])


def test_two_mode_link():
    cs = capacity_summary(single_link(1.0, two_mode=True))
    assert cs.emcc == pytest.approx(0.5)
    assert cs.mecc == pytest.approx(0.5)


def test_rows_cover_every_mode():
    sys = example_system("finite", False, True)
    rows = capacity_summary(sys).to_rows()
    assert [r[0] for r in rows].count("mode") == sys.modes.m == 2
    assert {r[0] for r in rows} == {"mode", "emcc", "mecc"}


@pytest.mark.parametrize("seed", range(3))
def test_emcc_below_mecc_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    for _ in range(20):
        K = int(rng.integers(2, 8))
        edges = random_dag_edges(K, rng)
        F = rng.integers(1, 6, K).astype(float)
        caps = np.where(rng.random((2, K)) < 0.3, 0.0, np.inf)
        sys = make_system(K, edges, F, rates=[[0, 1], [2, 0]], send_caps=caps)
        cs = capacity_summary(sys)
        assert cs.emcc <= cs.mecc + 1e-9

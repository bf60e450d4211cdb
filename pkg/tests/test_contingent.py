"""Published table cells that depend on the reconstructed example network.

Exact agreement is not claimed: these are reported with a 0.05 tolerance
and allowed to fail.  Cells reuse the session cache filled by the
acceptance tests.
"""

import numpy as np
import pytest

from cells import ROWS, certified, simulated
from flownet.controls import synthesize_mode_dependent, synthesize_open_loop
from flownet.scenario import example_system

pytestmark = [pytest.mark.contingent, pytest.mark.xfail(strict=False, reason="depends on the reconstruction")]

TOL = 0.05

# keyed by (storage, cyber, physical)
LOGIT = {
    ("infinite", False, False): (1, 1, 1),
    ("infinite", True, False): (1, 1, 1),
    ("infinite", False, True): (0.667, 0.667, 0.667),
    ("infinite", True, True): (0.573, 0.573, 0.643),
    ("finite", False, False): (1, 1, 1),
    ("finite", True, False): (1, 1, 1),
    ("finite", False, True): (0.745, 0.800, 0.944),
    ("finite", True, True): (0.576, 0.688, 0.800),
}

DD_SIM = {
    ("infinite", False, False): 1,
    ("infinite", True, False): 1,
    ("infinite", False, True): 0.943,
    ("infinite", True, True): 0.943,
    ("finite", False, False): 1,
    ("finite", True, False): 1,
    ("finite", False, True): 0.970,
    ("finite", True, True): 0.958,
}


@pytest.mark.slow
@pytest.mark.parametrize("row", ROWS, ids=lambda r: "-".join(map(str, r)))
def test_logit_cells(row):
    a_t, a_p = certified("logit", row)
    got = (a_t, a_p, simulated("logit", row))
    assert np.allclose(got, LOGIT[row], atol=TOL), got


@pytest.mark.slow
def test_md_cell():
    assert abs(simulated("md", ("infinite", True, True)) - 0.75) <= TOL


@pytest.mark.slow
@pytest.mark.parametrize("row", [r for r in ROWS if not r[1]], ids=lambda r: "-".join(map(str, r)))
def test_dd_sim_cells(row):
    assert abs(simulated("dd", row) - DD_SIM[row]) <= TOL


def test_md_table_matches_published_theta_and_phi():
    sys = example_system("infinite", True, True)
    tab = synthesize_mode_dependent(sys).table
    ix = {p: i for i, p in enumerate(sys.net.pairs)}
    assert np.allclose(tab[:, ix[(0, 1)]], 0.5)
    assert np.allclose(tab[:, ix[(0, 4)]], [1, 0, 1, 0])


def test_open_loop_values_match_published():
    sys = example_system("infinite", True, True)
    vals = synthesize_open_loop(sys).values
    ix = {p: i for i, p in enumerate(sys.net.pairs)}
    want = {(0, 1): 0.5, (1, 2): 0.5, (2, 6): 0.5, (1, 3): 0.0, (0, 4): 0.5, (4, 5): 0.5, (5, 6): 1.0}
    assert all(abs(vals[ix[p]] - v) < 1e-9 for p, v in want.items())

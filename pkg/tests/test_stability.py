import numpy as np
import pytest

from builders import chain, diamond, passthrough, single_link
from flownet.invariant import InvariantBox, build_box
from flownet.scenario import example_scenario
from flownet.stability import (
    NonnegativeDrift,
    StructureViolated,
    TooManyFreeCoordinates,
    _grid,
    ak_margin,
    bks_residual,
    build_ak,
    certified_throughput,
    potentials,
    prop1_check,
    rho,
    rho_slope,
    solve_bks,
    structure,
    theorem1_check,
    theorem4_bound,
)


def test_rho_ramp():
    assert rho(1.0, 3.0, [0.0, 1.0, 2.0, 3.0, 9.0]).tolist() == [0.0, 0.0, 0.5, 1.0, 1.0]
    assert rho_slope(1.0, 3.0, [0.0, 2.0, 4.0]).tolist() == [0.0, 0.5, 0.0]


def test_rho_degenerate_interval_is_a_step():
    assert rho(1.0, 1.0, [0.5, 1.0, 1.5]).tolist() == [0.0, 1.0, 1.0]


def test_solve_bks_two_modes():
    L = np.array([[-1.0, 1.0], [1.0, -1.0]])
    p = np.array([0.5, 0.5])
    b = solve_bks(L, p, [1.0, -1.0])
    assert b == pytest.approx([1.0, 0.0])
    assert bks_residual(L, p, [1.0, -1.0], b) < 1e-12
    assert solve_bks(L, p, [0.3, 0.3]) == pytest.approx([0.0, 0.0])


def test_solve_bks_single_mode():
    assert solve_bks([[0.0]], [1.0], [2.0]).tolist() == [0.0]


def test_build_ak_without_coupling_is_flat():
    assert build_ak({0: -0.2, 3: -1.0}, 0.0, {0: (3,)}) == {0: 1.0, 3: 1.0}


def test_build_ak_chain_is_strict():
    eta, N = {0: -1.0, 1: -1.0}, {0: (1,), 1: ()}
    a = build_ak(eta, 2.0, N)
    assert a[1] < a[0]
    assert all(v < 0 for v in ak_margin(eta, 2.0, N, a).values())


def test_build_ak_weak_coupling_branch():
    eta, N = {0: -2.0, 1: -3.0, 2: -2.0}, {0: (1, 2), 1: (2,), 2: ()}
    a = build_ak(eta, 0.5, N)
    assert all(v < 0 for v in ak_margin(eta, 0.5, N, a).values())


def test_build_ak_needs_negative_drift():
    with pytest.raises(NonnegativeDrift):
        build_ak({0: 0.0}, 1.0, {})


def test_potentials_reproduce_the_vector_field():
    # without spillback links the inflow and outflow potentials are G's two halves
    sc = example_scenario("infinite", False, False)
    sys = sc.build()
    law = sc.control(sys)
    box = build_box(sys, law, 0.6)
    st = structure(sys, law, box)
    rng = np.random.default_rng(3)
    X = box.lower + rng.random((50, sys.K)) * (box.clipped_upper(sys.probe()) - box.lower)
    S = np.zeros(50, dtype=int)
    I, O, G = potentials(sys, law, 0.6, S, X, box, st, return_G=True)
    assert st.K_mu == (0,) and not st.N_tilde[0]
    assert np.allclose((I - O)[:, 0], G[:, 0])


def test_single_link_certificate_brackets_capacity():
    sys = single_link(1.0, two_mode=True)
    law = passthrough(sys)
    assert theorem1_check(sys, law, 0.4).certified
    assert not theorem1_check(sys, law, 0.6).certified
    res = theorem1_check(sys, law, 0.4)
    assert res.verdict == "stable_certified"
    assert res.certificate.residual < 1e-12


def test_single_link_certified_throughput_is_mean_capacity():
    sys = single_link(1.0, two_mode=True)
    assert certified_throughput(sys, passthrough(sys), "t", tol=1e-4) == pytest.approx(0.5, abs=2e-4)


@pytest.mark.parametrize("maker", [lambda: chain([1.0, 0.7, 1.0]), lambda: diamond([2.0, 0.6, 0.5, 2.0])])
def test_refined_test_is_never_worse(maker):
    sys = maker()
    law = passthrough(sys)
    a_t = certified_throughput(sys, law, "t", tol=1e-3)
    a_p = certified_throughput(sys, law, "p", tol=1e-3)
    assert a_p >= a_t - 1e-3


def test_prop1_reports_side_condition():
    sys = chain([1.0, 0.7, 1.0])
    res = prop1_check(sys, passthrough(sys), 0.3)
    assert res.extra["side_condition"]
    assert res.certified


def test_theorem4_single_link_is_expected_capacity():
    sys = single_link(1.0, two_mode=True)
    law = passthrough(sys)
    box = build_box(sys, law, 0.0)
    f = sys.table.send(np.arange(2), np.full((2, 1), sys.xc[0]))[:, 0]
    assert theorem4_bound(sys, law, box) == pytest.approx(float(sys.p @ f), abs=1e-6)


def test_theorem4_rejects_unbounded_downstream():
    sys = chain([1.0, 0.5])
    law = passthrough(sys)
    box = InvariantBox([0.0, 0.0], [np.inf, np.inf])
    with pytest.raises(StructureViolated):
        theorem4_bound(sys, law, box)


def test_grid_refuses_too_many_axes():
    axes = [(k, 0.0, 1.0) for k in range(13)]
    with pytest.raises(TooManyFreeCoordinates):
        _grid(np.zeros(13), axes, 9)

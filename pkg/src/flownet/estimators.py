"""scikit-learn style wrappers: synthesized controls are fitted to a
:class:`~flownet.dynamics.System`, and throughput analyzers are fitted to a
(system, control) pair."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .controls import ModeDependent, OpenLoop, synthesize_mode_dependent, synthesize_open_loop
from .invariant import build_box, build_md_box
from .network import max_flow_p1
from .stability import (
    certified_throughput,
    prop1_check,
    structure,
    theorem1_check,
    theorem4_bound,
)
from .sim import simulated_throughput


class ModeDependentControl(BaseEstimator):
    """Per-mode max-flow table; ``fit`` solves one flow problem per mode."""

    name = "md"

    def fit(self, X, y=None):
        self.law_ = synthesize_mode_dependent(X)
        self.table_ = self.law_.table
        return self

    def __call__(self, sys, s, xo, x):
        check_is_fitted(self, "law_")
        return self.law_(sys, s, xo, x)


class OpenLoopControl(BaseEstimator):
    """Constant flows from the expected-capacity max-flow split."""

    name = "ol"

    def fit(self, X, y=None):
        ratios = max_flow_p1(X.net, X.p @ X.capacities)
        self.beta_ = ratios.beta
        self.gamma_ = ratios.gamma
        self.law_ = synthesize_open_loop(X)
        self.values_ = self.law_.values
        return self

    def __call__(self, sys, s, xo, x):
        check_is_fitted(self, "law_")
        return self.law_(sys, s, xo, x)


def _law(control):
    return getattr(control, "law_", control)


def box_builder_for(sys, control):
    """Box builder matching the control: the closed form for tables, the
    generic one otherwise."""
    law = _law(control)
    if isinstance(law, ModeDependent):
        return lambda a: build_md_box(sys, law.table, a)
    return lambda a: build_box(sys, law, a)


class ThroughputAnalyzer(BaseEstimator):
    """Throughput of a control on a system.

    method: "t" (basic drift test), "p" (refined test), "sim" (simulation)
    or "bound" (demand-free lower bound for spillback-free controls).
    After ``fit(system, control)`` the estimate is in ``throughput_``.
    """

    def __init__(self, method="t", tol=1e-3, grid=9, dt=0.05, horizon=2000.0, reps=10, seed=0):
        self.method = method
        self.tol = tol
        self.grid = grid
        self.dt = dt
        self.horizon = horizon
        self.reps = reps
        self.seed = seed

    def fit(self, X, y=None, control=None):
        if control is None:
            raise ValueError("a control law is required")
        law = _law(control)
        builder = box_builder_for(X, law)
        if self.method in ("t", "p"):
            self.throughput_ = certified_throughput(
                X, law, self.method, box_builder=builder, tol=self.tol, grid=self.grid
            )
        elif self.method == "sim":
            self.throughput_ = simulated_throughput(
                X, law, tol=max(self.tol, 1e-3), reps=self.reps, horizon=self.horizon, dt=self.dt, seed=self.seed
            )
        elif self.method == "bound":
            box = builder(0.0)
            self.throughput_ = theorem4_bound(X, law, box, structure(X, law, box), grid=self.grid)
        else:
            raise ValueError(f"unknown method {self.method!r}")
        return self

    def check(self, X, control, alpha):
        """The certificate check at one demand."""
        law = _law(control)
        box = box_builder_for(X, law)(alpha)
        fn = prop1_check if self.method == "p" else theorem1_check
        return fn(X, law, alpha, box, structure(X, law, box), self.grid)

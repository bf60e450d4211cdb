"""Actual flows, the density vector field, and runtime audits of its monotone
structure (monotone actual flows, bounded and cooperative vector field)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import FlowTable
from .modes import ModeSystem, observe, steady_state
from .network import Network, access_sets


@dataclass
class System:
    """Network, flows and modes bundled with precomputed index arrays."""

    net: Network
    table: FlowTable
    modes: ModeSystem
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.table.K != self.net.K:
            raise ValueError("flow table and network disagree on the number of links")
        if self.table.n_modes != self.modes.m or self.modes.scale.shape[1] != self.net.K:
            raise ValueError("flow caps and mode system disagree on modes or links")
        for k in range(self.net.K):
            if np.isfinite(self.table.xmax[k]) != self.net.finite_storage(k):
                raise ValueError(f"storage of link {k + 1} disagrees between network and flows")
        self.S, self.D = self.net.incidence()
        self.src = self.net.src
        self.dst = self.net.dst
        self.K = self.net.K
        self.P = self.net.n_pairs

    @property
    def p(self) -> np.ndarray:
        if "p" not in self._cache:
            self._cache["p"] = steady_state(self.modes)
        return self._cache["p"]

    @property
    def capacities(self) -> np.ndarray:
        if "F" not in self._cache:
            self._cache["F"] = self.table.capacities()
        return self._cache["F"]

    @property
    def xc(self) -> np.ndarray:
        """Critical densities in the nominal mode."""
        if "xc" not in self._cache:
            self._cache["xc"] = self.table.critical_densities(0)
        return self._cache["xc"]

    @property
    def access(self):
        if "acc" not in self._cache:
            self._cache["acc"] = access_sets(self.net)
        return self._cache["acc"]

    def probe(self) -> np.ndarray:
        return self.table.upper_probe()

    def desired(self, control, s, x):
        """μ(s, T_s(x)) with actuator faults applied; shape (..., P)."""
        s = np.asarray(s)
        x = np.asarray(x, dtype=float)
        xo = observe(self.modes, s, x)
        mu = np.asarray(control(self, s, xo, x), dtype=float)
        ms = self.modes
        if ms.has_actuator_faults:
            f = self.table.send(s, x)[..., self.src]
            if ms.disengage is not None:
                mu = np.where(ms.disengage[s], f, mu)
            if ms.offset is not None:
                mu = np.maximum(mu + ms.offset[s], 0.0)
        return mu

    def actual_flow(self, mu, s, x):
        """q = min(μ, μ/Σμ_out · f_k, μ/Σμ_in · r_j), zero where μ is zero."""
        f = self.table.send(s, x)
        r = self.table.receive(s, x)
        out = mu @ self.S
        inn = mu @ self.D
        with np.errstate(divide="ignore", invalid="ignore"):
            share_f = mu / out[..., self.src] * f[..., self.src]
            share_r = mu / inn[..., self.dst] * r[..., self.dst]
        q = np.minimum(mu, np.minimum(share_f, share_r))
        return np.where(mu > 0, q, 0.0), f

    def vector_field(self, control, alpha, s, x, return_flows=False):
        mu = self.desired(control, s, x)
        q, f = self.actual_flow(mu, s, x)
        G = q @ self.D - q @ self.S
        G[..., 0] += alpha
        G[..., -1] -= f[..., -1]
        if return_flows:
            return G, q, f
        return G


def actual_flow(sys: System, mu, s, x):
    return sys.actual_flow(np.asarray(mu, dtype=float), s, np.asarray(x, dtype=float))[0]


def vector_field(sys: System, control, alpha, s, x):
    return sys.vector_field(control, alpha, s, np.asarray(x, dtype=float))


@dataclass
class LemmaReport:
    samples: int
    violations: dict
    witnesses: dict

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())


def sample_states(sys: System, n: int, rng, spread: float = 1.5) -> np.ndarray:
    """Random densities in the state space; infinite-storage links are drawn
    up to ``spread`` times a multiple of their critical density so both free
    and congested regimes are covered."""
    hi = np.where(np.isfinite(sys.table.xmax), sys.table.xmax, spread * 2.0 * np.maximum(sys.xc, 1.0))
    x = rng.uniform(0.0, 1.0, size=(n, sys.K)) * hi
    # pin some coordinates to the boundaries where kinks live
    edge = rng.random((n, sys.K))
    x = np.where(edge < 0.05, 0.0, x)
    x = np.where((edge > 0.95) & np.isfinite(sys.table.xmax), hi, x)
    return x


def check_lemmas(sys: System, control, alpha: float = 0.5, samples: int = 10_000, seed=0, tol=1e-9) -> LemmaReport:
    """Randomised coordinate-perturbation audit.

    Lemma-1: q_kj non-decreasing in x_k.  Lemma-2: |G| bounded by
    2 max F + α.  Lemma-3: G_k non-increasing in x_k and G_l non-decreasing
    in x_k for neighbours l.
    """
    rng = np.random.default_rng(seed)
    x = sample_states(sys, samples, rng)
    s = rng.integers(0, sys.modes.m, size=samples)
    k = rng.integers(0, sys.K, size=samples)
    room = np.where(np.isfinite(sys.table.xmax), sys.table.xmax, np.inf)[k] - x[np.arange(samples), k]
    delta = np.minimum(rng.exponential(0.2, size=samples), room)
    delta = np.where(delta > 0, delta, 0.0)
    x2 = x.copy()
    x2[np.arange(samples), k] += delta

    G1, q1, _ = sys.vector_field(control, alpha, s, x, return_flows=True)
    G2, q2, _ = sys.vector_field(control, alpha, s, x2, return_flows=True)
    bound = 2.0 * sys.capacities.max() + alpha

    own = sys.src[None, :] == k[:, None]
    l1 = np.any(own & (q2 < q1 - tol), axis=1)
    l2 = np.any(np.abs(G1) > bound + tol, axis=1) | np.any(np.abs(G2) > bound + tol, axis=1)
    rows = np.arange(samples)
    l3_self = G2[rows, k] > G1[rows, k] + tol
    neigh = np.zeros((samples, sys.K), dtype=bool)
    for kk in range(sys.K):
        nb = list(sys.net.out_adj[kk]) + list(sys.net.in_adj[kk])
        if nb:
            neigh[np.ix_(k == kk, nb)] = True
    l3_nb = np.any(neigh & (G2 < G1 - tol), axis=1)
    l3 = l3_self | l3_nb

    viol, wit = {}, {}
    for name, mask in (("lemma1", l1), ("lemma2", l2), ("lemma3", l3)):
        idx = np.flatnonzero(mask)
        viol[name] = int(idx.size)
        wit[name] = [
            {"mode": int(s[i]), "x": x[i].tolist(), "link": int(k[i]), "delta": float(delta[i])}
            for i in idx[:5]
        ]
    return LemmaReport(samples=samples, violations=viol, witnesses=wit)

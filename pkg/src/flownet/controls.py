"""Control laws mapping (mode, densities) to desired inter-link flows.

Every law is a callable ``law(sys, s, xo, x) -> mu`` returning an array of
shape ``(..., P)`` in ``sys.net.pairs`` order.  ``xo`` are the sensed
densities (after sensor faults) and drive every control *decision*; ``x`` is
the physical state, used only for the sending and receiving flows a node
mechanism meets physically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import max_flow, max_flow_p1


class InfeasibleSynthesis(RuntimeError):
    pass


def _pairs_of(sys, k):
    return [sys.net.pair_index(k, j) for j in sys.net.out_adj[k]]


def _diverges(sys):
    """(pair indices, downstream links) for every link with several outlets."""
    if "diverges" not in sys._cache:
        sys._cache["diverges"] = [
            (_pairs_of(sys, k), list(sys.net.out_adj[k]))
            for k in range(sys.K)
            if len(sys.net.out_adj[k]) > 1
        ]
    return sys._cache["diverges"]


def _send_per_pair(sys, s, x):
    """f_k(s, x_k) broadcast onto every pair leaving k."""
    return sys.table.send(s, x)[..., sys.src]


@dataclass(frozen=True)
class LogitRouting:
    """Split each link's sending flow across its downstream links with
    weights exp(-nu * sensed density)."""

    nu: float = 2.0
    name: str = "logit"

    def __call__(self, sys, s, xo, x):
        mu = _send_per_pair(sys, s, x)
        for idx, outs in _diverges(sys):
            d = xo[..., outs]
            logits = -self.nu * (d - d.min(axis=-1, keepdims=True))
            w = np.exp(logits)
            w /= w.sum(axis=-1, keepdims=True)
            mu[..., idx] = w * mu[..., idx]
        return mu


@dataclass(frozen=True)
class PriorityMerge:
    """Strict priority at merges on top of a routing law.

    ``orders`` maps a merge link j to its incoming links, highest priority
    first.  Each incoming link requests its routed flow, capped by what the
    receiving flow of j leaves after the links ahead of it.
    """

    orders: dict
    routing: object = field(default_factory=LogitRouting)
    name: str = "priority"

    def __call__(self, sys, s, xo, x):
        mu = np.array(self.routing(sys, s, xo, x), dtype=float)
        r = sys.table.receive(s, x)
        for j, order in self.orders.items():
            left = r[..., j]
            for i in order:
                p = sys.net.pair_index(i, j)
                mu[..., p] = np.minimum(mu[..., p], np.maximum(left, 0.0))
                left = left - mu[..., p]
        return mu


@dataclass(frozen=True)
class RampMeter:
    """Linear feedback metering on selected pairs:
    mu_kj = max(0, u_kj - kappa_kj (x_j - x_j^c)).

    At a diverge with metered pairs the unmetered outlets share the whole
    sending flow in the proportions the wrapped routing law gives them, so
    their requests do not depend on the metered outlets' densities.  Other
    pairs follow the routing law.
    """

    gains: dict  # pair (k, j) -> (u, kappa)
    routing: object = field(default_factory=LogitRouting)
    name: str = "ramp"

    def __call__(self, sys, s, xo, x):
        mu = np.array(self.routing(sys, s, xo, x), dtype=float)
        f = sys.table.send(s, x)
        metered = {}
        for (k, j) in self.gains:
            metered.setdefault(k, set()).add(j)
        for k, outs in metered.items():
            free = [sys.net.pair_index(k, j) for j in sys.net.out_adj[k] if j not in outs]
            if not free:
                continue
            tot = mu[..., free].sum(axis=-1, keepdims=True)
            with np.errstate(divide="ignore", invalid="ignore"):
                share = np.where(tot > 0, mu[..., free] / tot, 1.0 / len(free))
            mu[..., free] = share * f[..., k : k + 1]
        xc = sys.xc
        for (k, j), (u, kappa) in self.gains.items():
            p = sys.net.pair_index(k, j)
            mu[..., p] = np.maximum(u - kappa * (xo[..., j] - xc[j]), 0.0)
        return mu


@dataclass(frozen=True)
class MaxPressure:
    """Pressure-weighted merges: the receiving flow of a merge is shared
    among the incoming links in proportion to their pressure, measured by
    their sending flows.  Switching priority outright on the largest queue
    makes the desired flows jump by more than the sending flow changes,
    which the boundedness audit rejects; the proportional form keeps every
    increment within the sending-flow increment."""

    routing: object = field(default_factory=LogitRouting)
    name: str = "maxpressure"

    def __call__(self, sys, s, xo, x):
        mu = np.array(self.routing(sys, s, xo, x), dtype=float)
        r = sys.table.receive(s, x)
        for j in range(sys.K):
            ins = sys.net.in_adj[j]
            if len(ins) < 2:
                continue
            idx = [sys.net.pair_index(i, j) for i in ins]
            demand = mu[..., idx]
            tot = demand.sum(axis=-1, keepdims=True)
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(tot > 0, np.minimum(1.0, r[..., j : j + 1] / tot), 1.0)
            mu[..., idx] = demand * scale
        return mu


@dataclass(frozen=True)
class ModeDependent:
    """Piecewise-constant law mu(s) from a (modes, pairs) table."""

    table: np.ndarray
    name: str = "md"

    def __call__(self, sys, s, xo, x):
        return self.table[np.asarray(s)] + 0.0 * xo[..., :1]


@dataclass(frozen=True)
class OpenLoop:
    values: np.ndarray
    name: str = "ol"

    def __call__(self, sys, s, xo, x):
        return np.broadcast_to(self.values, xo.shape[:-1] + (len(self.values),)).copy()


@dataclass(frozen=True)
class DensityDependent:
    """mu_kj = max(0, min over j' in terms[kj] of (jam_j' - sensed x_j')).

    ``terms`` maps a pair to the links whose spare room limits it; an empty
    tuple means the pair is closed.  Pairs not listed pass the sending flow.
    """

    terms: dict
    jam: np.ndarray
    name: str = "dd"

    def __call__(self, sys, s, xo, x):
        mu = _send_per_pair(sys, s, x).copy()
        for (k, j), links in self.terms.items():
            p = sys.net.pair_index(k, j)
            if not links:
                mu[..., p] = 0.0
                continue
            room = np.min(np.stack([self.jam[l] - xo[..., l] for l in links], axis=-1), axis=-1)
            mu[..., p] = np.maximum(room, 0.0)
        return mu


def jam_densities(sys) -> np.ndarray:
    """CTM jam density x^c + F/w per link, whether or not storage is finite."""
    out = []
    for f in sys.table.funcs:
        if f.family == "ctm":
            out.append(max(f.xc + f.F / f.w, 0.0))
        else:
            out.append(f.xmax)
    return np.array(out)


def example_density_dependent(sys) -> DensityDependent:
    """Builtin density-dependent law for the seven-link example network.

    Links (1-based) 1->2, 1->5, 2->3, 2->4, 4->6, 5->6, 3->7, 6->7.  When
    link 5 has infinite storage its inflow is also limited by link 6.
    """
    if sys.K != 7 or set(sys.net.pairs) != {(0, 1), (0, 4), (1, 2), (1, 3), (3, 5), (4, 5), (2, 6), (5, 6)}:
        raise ValueError("the builtin density-dependent law targets the seven-link example")
    terms = {
        (0, 1): (1,),
        (4, 5): (5,),
        (0, 4): (4,) if sys.net.finite_storage(4) else (4, 5),
        (1, 3): (),
    }
    return DensityDependent(terms=terms, jam=jam_densities(sys))


# ---------------------------------------------------------------------------
# synthesis


def node_caps_at_critical(sys, s: int) -> np.ndarray:
    """min{f_k(s, x_k^c), r_k(s, x_k^c)} (link 1's receiving flow excluded)."""
    xc = sys.xc
    f = sys.table.send(s, xc)
    r = sys.table.receive(s, xc)
    r[0] = np.inf
    return np.minimum(f, r)


def synthesize_mode_dependent(sys) -> ModeDependent:
    """Per-mode max-flow table on the critical-density node capacities."""
    tab = np.zeros((sys.modes.m, sys.P))
    for s in range(sys.modes.m):
        caps = node_caps_at_critical(sys, s)
        if np.any(caps < 0) or not np.all(np.isfinite(caps)):
            raise InfeasibleSynthesis(f"mode {s + 1}: node capacities not finite and nonnegative")
        _, u = max_flow(sys.net, caps)
        tab[s] = u
    return ModeDependent(table=tab)


def expected_capacities(sys) -> np.ndarray:
    return sys.p @ sys.capacities


def synthesize_open_loop(sys) -> OpenLoop:
    ratios = max_flow_p1(sys.net, expected_capacities(sys))
    fmax = sys.capacities.max(axis=0)
    return OpenLoop(values=ratios.beta * fmax[sys.src])


# ---------------------------------------------------------------------------
# audit


@dataclass
class ControlReport:
    samples: int
    violations: dict
    witnesses: dict

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())

    @property
    def total(self) -> int:
        return sum(self.violations.values())


def validate_control(sys, law, samples: int = 1000, seed=0, tol=1e-9) -> ControlReport:
    """Randomised finite-difference audit of a control law.

    Perturbs one physical density upward and checks: desired outflows of
    that link do not decrease and grow by at most its sending-flow increase;
    desired inflows do not increase and fall by at most its receiving-flow
    decrease (the lower bound is skipped under infinite storage); and, at
    each state, the increments of every mode agree in sign.
    """
    from .dynamics import sample_states

    if samples < 1:
        raise ValueError("sample budget must be positive")
    rng = np.random.default_rng(seed)
    K, m = sys.K, sys.modes.m
    x = sample_states(sys, samples, rng)
    k = rng.integers(0, K, size=samples)
    rows = np.arange(samples)
    room = np.where(np.isfinite(sys.table.xmax), sys.table.xmax, np.inf)[k] - x[rows, k]
    delta = np.clip(rng.exponential(0.2, size=samples), 0.0, room)
    x2 = x.copy()
    x2[rows, k] += delta

    own_out = sys.src[None, :] == k[:, None]
    own_in = sys.dst[None, :] == k[:, None]
    finite = np.isfinite(sys.table.xmax)[k]

    viol = {"nonneg": 0, "monotone_out": 0, "monotone_in": 0, "bounded_out": 0, "bounded_in": 0, "mode_sign": 0}
    wit = {key: [] for key in viol}
    signs = []
    for s in range(m):
        ss = np.full(samples, s)
        mu1 = sys.desired(law, ss, x)
        mu2 = sys.desired(law, ss, x2)
        d = mu2 - mu1
        df = sys.table.send(ss, x2)[rows, k] - sys.table.send(ss, x)[rows, k]
        r1 = sys.table.receive(ss, x)[rows, k]
        r2 = sys.table.receive(ss, x2)[rows, k]
        with np.errstate(invalid="ignore"):
            dr = np.where(finite, r2 - r1, 0.0)
        dout = np.where(own_out, d, 0.0).sum(axis=1)
        din = np.where(own_in, d, 0.0).sum(axis=1)
        checks = {
            "nonneg": np.any(mu1 < -tol, axis=1),
            "monotone_out": np.any(own_out & (d < -tol), axis=1),
            "monotone_in": np.any(own_in & (d > tol), axis=1),
            "bounded_out": dout > df + tol,
            "bounded_in": finite & (din < dr - tol),
        }
        for name, mask in checks.items():
            idx = np.flatnonzero(mask)
            viol[name] += int(idx.size)
            for i in idx[: max(0, 5 - len(wit[name]))]:
                wit[name].append({"mode": s, "x": x[i].tolist(), "link": int(k[i]), "delta": float(delta[i])})
        signs.append(np.sign(np.where(np.abs(d) > tol, d, 0.0)))
    if m > 1:
        sg = np.stack(signs)
        mixed = np.any((sg.max(axis=0) > 0) & (sg.min(axis=0) < 0), axis=1)
        idx = np.flatnonzero(mixed)
        viol["mode_sign"] = int(idx.size)
        wit["mode_sign"] = [{"x": x[i].tolist(), "link": int(k[i])} for i in idx[:5]]
    return ControlReport(samples=samples, violations=viol, witnesses=wit)

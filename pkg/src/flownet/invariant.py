"""Rectangular invariant sets and their sampled verification."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .flow import _bisect

INF = math.inf


class FixedPointDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class InvariantBox:
    lower: np.ndarray
    upper: np.ndarray  # inf where unbounded

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or np.any(lo > hi + 1e-12) or np.any(lo < 0):
            raise ValueError("box needs 0 <= lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def K(self) -> int:
        return self.lower.size

    @property
    def unbounded(self) -> np.ndarray:
        return ~np.isfinite(self.upper)

    def clipped_upper(self, probe) -> np.ndarray:
        return np.where(np.isfinite(self.upper), self.upper, np.maximum(probe, self.lower))

    def contains(self, x, tol=0.0) -> np.ndarray:
        x = np.asarray(x)
        return np.all((x >= self.lower - tol) & (x <= self.upper + tol), axis=-1)

    def to_rows(self):
        return [(k + 1, float(lo), float(hi)) for k, (lo, hi) in enumerate(zip(self.lower, self.upper))]


def state_space_box(sys) -> InvariantBox:
    return InvariantBox(np.zeros(sys.K), sys.table.xmax.copy())


def damped_fixed_point(phi, x0, lam=0.5, tol=1e-10, max_iter=100_000):
    x = np.asarray(x0, dtype=float)
    for _ in range(max_iter):
        nxt = (1 - lam) * x + lam * np.asarray(phi(x), dtype=float)
        if not np.all(np.isfinite(nxt)):
            raise FixedPointDiverged("fixed-point iterate became non-finite")
        if np.max(np.abs(nxt - x)) <= tol:
            return nxt
        x = nxt
    raise FixedPointDiverged(f"no convergence within {max_iter} iterations")


# ---------------------------------------------------------------------------
# builders


def origin_lower(sys, alpha: float) -> float:
    """Largest x_1 whose sending flow stays at or below the demand in every
    mode (so the origin cannot drain below it), capped at x_1^c."""
    xc1 = sys.xc[0]
    hi = sys.probe()[0]
    f = lambda x: sys.table.send(np.arange(sys.modes.m), np.full((sys.modes.m, sys.K), x))[:, 0].max()
    if f(xc1) <= alpha:
        return float(xc1)
    return float(_bisect(lambda x: f(x) > alpha, 0.0, min(hi, xc1)))


def build_logit_box(sys, alpha: float, nu: float, cyber: bool, physical: bool) -> InvariantBox:
    """Invariant box for logit routing with priority merges on the
    seven-link example.

    ``cyber``/``physical`` say whether the mode set contains the sensor
    fault on link 5 and the capacity drop on link 6.
    """
    if sys.K != 7:
        raise ValueError("the logit box construction targets the seven-link example")
    funcs = sys.table.funcs
    v = funcs[0].v
    F = np.array([f.F for f in funcs])
    F_all = sys.capacities
    F6min, F6max = F_all[:, 5].min(), F_all[:, 5].max()
    F5max = F_all[:, 4].max()
    lo = np.zeros(7)
    hi = np.full(7, INF)

    lo[0] = alpha / v
    send1 = min(v * lo[0], F[0])
    if not cyber:
        lo[1] = lo[4] = send1 / (2 * v)
    else:
        def phi(w):
            w2, w5 = w
            a = send1 * math.exp(-nu * w2) / (math.exp(-nu * w2) + 1.0) / v
            b = send1 * math.exp(-nu * w5) / (math.exp(-nu * w2) + math.exp(-nu * w5)) / v
            return (a, b)
        lo[1], lo[4] = damped_fixed_point(phi, (send1 / (2 * v),) * 2)
    lo[2] = lo[3] = min(v * lo[1], F[1]) / (2 * v)
    lo[5] = (min(v * lo[3], F[3]) + min(v * lo[4], F[4])) / v
    lo[6] = (min(v * lo[2], F[2]) + min(v * lo[5], F6min)) / v

    finite = sys.table.finite
    xc = sys.xc
    if finite[1:].all() and physical:
        hi[[1, 3, 4, 5]] = sys.table.xmax[[1, 3, 4, 5]]
        hi[[2, 6]] = xc[[2, 6]]
    else:
        # upstream demand bounded by the origin capacity rather than by
        # min(alpha, F_1): the origin density may exceed alpha / v
        dem = F[0]
        if not cyber:
            hi[1] = hi[4] = dem / (2 * v)
        else:
            s2p = damped_fixed_point(
                lambda w: (dem * math.exp(-nu * w[0]) / (math.exp(-nu * w[0]) + 1.0) / v,),
                (dem / (2 * v),),
            )[0]
            hi[4] = dem / (math.exp(-nu * s2p) + 1.0) / v
            s5 = hi[4]
            hi[1] = damped_fixed_point(
                lambda w: (dem * math.exp(-nu * w[0]) / (math.exp(-nu * w[0]) + math.exp(-nu * s5)) / v,),
                (dem / (2 * v),),
            )[0]
        hi[2] = hi[3] = min(v * hi[1], F[1]) / (2 * v)
        f6bar = min(v * hi[3], F[3]) + min(v * hi[4], F5max)
        hi[5] = f6bar / v if f6bar < F6min else INF
        hi[6] = (min(v * hi[2], F[2]) + min(v * hi[5], F6max)) / v
        hi = np.where(finite, np.minimum(hi, sys.table.xmax), hi)
    lo = np.minimum(lo, hi)
    return InvariantBox(lo, hi)


def build_md_box(sys, mu_table, alpha: float = 0.0) -> InvariantBox:
    """Upper bounds for a mode-dependent table: for finite storage the
    largest density whose receiving flow still covers the desired inflow in
    every mode; for infinite storage the critical density."""
    mu_table = np.asarray(mu_table, dtype=float)
    K = sys.K
    hi = np.full(K, INF)
    xc = sys.xc
    for k in range(1, K):
        idx = [sys.net.pair_index(i, k) for i in sys.net.in_adj[k]]
        if not sys.net.finite_storage(k):
            hi[k] = xc[k]
            continue
        xmax = sys.table.xmax[k]
        bound = xmax
        for s in range(sys.modes.m):
            need = mu_table[s, idx].sum()
            mf = sys.table.moded(k)
            # r is non-increasing, so {x : need <= r} is an interval [0, x*]
            x_star = _bisect(lambda x: float(mf.receive(s, x)) < need, 0.0, xmax)
            bound = min(bound, max(x_star, xc[k]))
        hi[k] = bound
    lo = np.zeros(K)
    lo[0] = origin_lower(sys, alpha)
    return InvariantBox(lo, hi)


def _influence(sys, control=None, samples=400, seed=0) -> list[list[int]]:
    """Links whose density can enter G_k: k itself, its neighbours, and the
    competitors at its upstream diverges and downstream merges.  With a
    control, links it reads beyond that neighbourhood are added by probing
    random states one coordinate at a time."""
    net = sys.net
    out = []
    for k in range(sys.K):
        s = {k}
        for i in net.in_adj[k]:
            s.add(i)
            s.update(net.out_adj[i])
        for j in net.out_adj[k]:
            s.add(j)
            s.update(net.in_adj[j])
        out.append(s)
    if control is not None:
        from .dynamics import sample_states

        rng = np.random.default_rng(seed)
        X = sample_states(sys, samples, rng)
        S = rng.integers(0, sys.modes.m, samples)
        G0 = sys.vector_field(control, 0.0, S, X)
        for j in range(sys.K):
            Xj = X.copy()
            Xj[:, j] = np.minimum(Xj[:, j] * 0.7 + 0.3 * rng.random(samples) * (2.0 + Xj[:, j]), sys.table.xmax[j])
            moved = np.abs(sys.vector_field(control, 0.0, S, Xj) - G0).max(axis=0) > 1e-12
            for k in np.flatnonzero(moved):
                out[k].add(j)
    return [sorted(s) for s in out]


def _face_plan(sys, control):
    """Influence lists and interior sample count for a control, cached on the
    system (neither depends on the demand)."""
    from .dynamics import check_lemmas

    plans = sys._cache.setdefault("face_plan", [])
    for ctl, plan in plans:
        if ctl is control:
            return plan
    # corners bound the face drift only when the field is cooperative
    coop = check_lemmas(sys, control, 0.0, samples=2000).violations["lemma3"] == 0
    plan = (_influence(sys, control), 0 if coop else 256)
    plans.append((control, plan))
    return plan


def _face_states(sys, k, value, lo, hi, rel, cap=4096, rng=None, interior=0):
    """States on the face x_k = value: corners over the influencing links,
    others at the middle of their range (they do not enter G_k).  For fields
    that are not cooperative the extremes can sit inside the face, so
    ``interior`` uniform draws are added."""
    others = [j for j in rel if j != k]
    base = 0.5 * (lo + hi)
    rng = rng or np.random.default_rng(0)
    if 2 ** len(others) <= cap:
        corners = np.array(list(itertools.product((0, 1), repeat=len(others))), dtype=float).reshape(-1, len(others))
    else:
        corners = rng.integers(0, 2, size=(cap, len(others))).astype(float)
    if interior and others:
        # kinks of min/max fields sit near the bounds: a third of the
        # coordinates are pulled towards each end
        u = rng.random((interior, len(others)))
        pick = rng.random((interior, len(others)))
        u = np.where(pick < 1 / 3, u**4, np.where(pick < 2 / 3, 1 - u**4, u))
        corners = np.vstack([corners, u])
    X = np.tile(base, (corners.shape[0], 1))
    if others:
        X[:, others] = lo[others] + corners * (hi[others] - lo[others])
    X[:, k] = value
    return X


def _face_drift(sys, control, alpha, k, values, lo, hi, rel, reduce, interior=0):
    """Extreme drift of link k on the faces x_k = v for every v in ``values``."""
    values = np.atleast_1d(np.asarray(values, dtype=float))
    X = _face_states(sys, k, 0.0, lo, hi, rel, interior=interior)
    m, c, nv = sys.modes.m, X.shape[0], values.size
    XX = np.tile(X, (nv * m, 1))
    XX[:, k] = np.repeat(values, m * c)
    S = np.tile(np.repeat(np.arange(m), c), nv)
    G = sys.vector_field(control, alpha, S, XX)[:, k]
    return reduce(G.reshape(nv, m * c), axis=1)


def _multisect(pred, lo, hi, tol=1e-8, n=16):
    """Smallest v in [lo, hi] with pred(v) true for a monotone vectorised
    ``pred``; returns ``hi`` when even ``hi`` fails."""
    if pred(np.array([lo]))[0]:
        return lo
    while hi - lo > tol * max(1.0, abs(hi)):
        grid = np.linspace(lo, hi, n + 1)
        ok = pred(grid[1:])
        if not ok.any():
            return hi
        i = int(np.argmax(ok))
        lo, hi = grid[i], grid[i + 1]
    return hi


def build_box(sys, control, alpha: float, max_sweeps: int = 40, tol: float = 1e-9) -> InvariantBox:
    """Generic rectangular invariant set by face-drift bisection.

    Upper faces grow from below: each is raised to the smallest density at
    which the drift of that link is non-positive on the whole face, given the
    current box, until no face moves (the least such box for a cooperative
    field).  A face that cannot be closed below the jam density or the probe
    becomes the state-space bound.  Lower faces are then raised from zero to
    the largest density with non-negative drift on the face, and upper faces
    re-tightened against the raised lowers.  Faces are evaluated on the
    corners of the influencing coordinates, in all modes.
    """
    K = sys.K
    probe = sys.probe()
    xmax = sys.table.xmax.astype(float)
    rel, interior = _face_plan(sys, control)
    xc = sys.xc
    lo = np.zeros(K)
    lo[0] = origin_lower(sys, alpha)
    hi = lo.copy()
    hi[0] = INF
    closed = np.ones(K, dtype=bool)
    closed[0] = False

    def view():
        return np.where(np.isfinite(hi), hi, probe)

    def inward_up(k, hv):
        return lambda v: _face_drift(sys, control, alpha, k, v, lo, hv, rel[k], np.max, interior) <= tol

    def outward_lo(k, hv):
        return lambda v: _face_drift(sys, control, alpha, k, v, lo, hv, rel[k], np.min, interior) < -tol

    # grow upper faces
    for _ in range(max_sweeps):
        changed = False
        for k in reversed(sys.net.topo):
            if not closed[k]:
                continue
            up = inward_up(k, view())
            if up(hi[k])[0]:
                continue
            top = min(xmax[k], probe[k])
            # a face that only closes near the probe is an artefact of the
            # probe itself: treat it as open
            if not np.isfinite(xmax[k]):
                top = 0.5 * top
            if up(top)[0]:
                hi[k] = _multisect(up, hi[k], top)
            else:
                hi[k] = xmax[k]
                closed[k] = False
            changed = True
        if not changed:
            break

    for _ in range(max_sweeps):
        changed = False
        for k in sys.net.topo:
            if k == 0:
                continue
            hv = view()
            cap = hv[k] if np.isfinite(hi[k]) else min(hv[k], xc[k])
            bad = outward_lo(k, hv)
            if cap > lo[k] + 1e-9 and not bad(lo[k])[0]:
                if not bad(cap)[0]:
                    new = cap
                else:
                    new = max(lo[k], _multisect(bad, lo[k], cap) - 1e-7)
                if new > lo[k] + 1e-9:
                    lo[k] = new
                    changed = True
        for k in reversed(sys.net.topo):
            if not closed[k]:
                continue
            new = _multisect(inward_up(k, view()), lo[k], hi[k])
            if new < hi[k] - 1e-9:
                hi[k] = new
                changed = True
        if not changed:
            break
    return InvariantBox(np.minimum(lo, hi), hi)


def verify_box(sys, box: InvariantBox, control, alpha: float, samples: int = 10_000, seed=0, tol=1e-9):
    """Sampled check that the vector field points into the box on every face.

    Returns ``(ok, witness)``; the witness is None when no violation is found.
    """
    rng = np.random.default_rng(seed)
    K, m = sys.K, sys.modes.m
    hi = box.clipped_upper(sys.probe())
    lo = box.lower
    n = max(samples // (2 * K), 1)
    for k in range(K):
        for side in ("lower", "upper"):
            if side == "upper" and not np.isfinite(box.upper[k]):
                continue
            X = lo + rng.random((n, K)) * (hi - lo)
            pick = rng.random((n, K))
            X = np.where(pick < 0.25, lo, np.where(pick > 0.75, hi, X))
            X[:, k] = lo[k] if side == "lower" else box.upper[k]
            S = rng.integers(0, m, size=n)
            G = sys.vector_field(control, alpha, S, X)[:, k]
            bad = G < -tol if side == "lower" else G > tol
            if np.any(bad):
                i = int(np.flatnonzero(bad)[0])
                return False, {"link": k, "face": side, "mode": int(S[i]), "x": X[i].tolist(), "G": float(G[i])}
    return True, None

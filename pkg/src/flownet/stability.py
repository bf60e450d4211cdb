"""Stability certificates on rectangular invariant sets.

The drift test of a link k with unbounded density compares the worst-case
inflow potential I_k (weighted upstream drifts plus direct inflow) with the
best-case outflow potential O_k (outflow minus the ramp-weighted drift of
downstream links that can spill back), averaged over the stationary mode
distribution.  Worst and best cases are searched on a grid over the
coordinates left free by the test; everything else sits at the box's upper
face.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .invariant import InvariantBox, build_box, verify_box
from .network import max_flow_p1, min_cut

GRID_BUDGET = 250_000


class TooManyFreeCoordinates(ValueError):
    pass


class NonnegativeDrift(ValueError):
    pass


class StructureViolated(ValueError):
    pass


def rho(lower, upper, x):
    """Ramp: 0 below ``lower``, 1 at or above ``upper``, affine between."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.asarray(x, dtype=float)
    width = upper - lower
    with np.errstate(divide="ignore", invalid="ignore"):
        mid = (x - lower) / width
    out = np.where(x < lower, 0.0, np.where(x >= upper, 1.0, mid))
    return np.clip(out, 0.0, 1.0)


def rho_slope(lower, upper, x):
    """One-sided slope of the ramp: 1/(upper-lower) on [lower, upper], else 0."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    with np.errstate(divide="ignore"):
        slope = np.where(upper > lower, 1.0 / (upper - lower), 0.0)
    return np.where((x >= lower) & (x <= upper), slope, 0.0)


def flow_ratios_for(sys) -> np.ndarray:
    """γ from the expected-capacity max-flow problem."""
    if "gamma" not in sys._cache:
        sys._cache["gamma"] = max_flow_p1(sys.net, sys.p @ sys.capacities).gamma
    return sys._cache["gamma"]


def mecc(sys) -> float:
    return float(min_cut(sys.net, sys.p @ sys.capacities)[0])


# ---------------------------------------------------------------------------
# structure


@dataclass(frozen=True)
class BottleneckStructure:
    K_mu: tuple[int, ...]
    M_mu: tuple[frozenset, ...]
    M_tilde: tuple[frozenset, ...]
    N_mu: tuple[frozenset, ...]
    N_tilde: tuple[tuple[int, ...], ...]
    spill: frozenset  # links that can be congested and can spill back


Structure = BottleneckStructure


def _corner_states(box: InvariantBox, probe, cap=4096, seed=0):
    lo = box.lower
    hi = box.clipped_upper(probe)
    K = lo.size
    if 2**K <= cap:
        c = np.array(list(itertools.product((0, 1), repeat=K)), dtype=float)
    else:
        c = np.random.default_rng(seed).integers(0, 2, size=(cap, K)).astype(float)
    return lo + c * (hi - lo)


def structure(sys, control, box: InvariantBox, tol=1e-9) -> Structure:
    """Bottleneck sets for the box.

    A link joins the spillback candidates when its upper face is finite and
    above its critical density, and at some box corner in some mode the
    desired inflow exceeds its receiving flow.  N~_k keeps the downstream
    candidates j whose every intermediate link (on any k->j path) is a
    candidate too.
    """
    K = sys.K
    acc = sys.access
    K_mu = tuple(k for k in range(K) if not np.isfinite(box.upper[k]))
    kset = frozenset(K_mu)
    M_mu = tuple(acc.upstream[k] & kset for k in range(K))
    M_t = tuple(acc.upstream[k] - kset for k in range(K))
    N_mu = tuple(acc.downstream[k] & kset for k in range(K))

    X = _corner_states(box, sys.probe())
    m = sys.modes.m
    S = np.repeat(np.arange(m), X.shape[0])
    XX = np.tile(X, (m, 1))
    mu = sys.desired(control, S, XX)
    demand = mu @ sys.D
    r = sys.table.receive(S, XX)
    spills = np.any(demand > r + tol, axis=0)
    xc = sys.xc
    cand = frozenset(
        j for j in range(K)
        if np.isfinite(box.upper[j]) and box.upper[j] > xc[j] + 1e-9 and spills[j]
    )
    N_t = []
    for k in range(K):
        out = []
        for j in sorted(acc.downstream[k] & cand):
            between = acc.downstream[k] & acc.upstream[j]
            if between <= cand:
                out.append(j)
        N_t.append(tuple(out))
    return Structure(K_mu, M_mu, M_t, N_mu, tuple(N_t), cand)


# ---------------------------------------------------------------------------
# potentials


def _masks(sys, st: Structure):
    gamma = flow_ratios_for(sys).copy()
    np.fill_diagonal(gamma, 0.0)
    acc = sys.access
    up = np.zeros((sys.K, sys.K))
    for k in range(sys.K):
        for mm in acc.upstream[k]:
            up[mm, k] = 1.0
    gamma = gamma * up
    R = np.zeros((sys.K, sys.K))
    for k, nt in enumerate(st.N_tilde):
        for n in nt:
            R[n, k] = 1.0
    return gamma, R


def potentials(sys, control, alpha, s, x, box: InvariantBox, st: Structure, return_G=False):
    """(I, O) for every link at the states ``x`` (..., K) in modes ``s``."""
    gamma, R = _masks(sys, st)
    G, q, f = sys.vector_field(control, alpha, s, x, return_flows=True)
    inflow = q @ sys.D
    inflow[..., 0] = alpha
    outflow = q @ sys.S
    outflow[..., -1] = outflow[..., -1] + f[..., -1]
    I = G @ gamma + inflow
    rG = rho(box.lower, box.upper, x) * G
    O = outflow - rG @ R
    if return_G:
        return I, O, G
    return I, O


def _axis_values(lo, hi, n):
    if hi <= lo:
        return np.array([lo])
    return np.linspace(lo, hi, n)


def _grid(base, axes, n, budget=GRID_BUDGET):
    """States varying the (link, lo, hi) ``axes`` on a tensor grid around ``base``."""
    if len(axes) > 12:
        raise TooManyFreeCoordinates(f"{len(axes)} free coordinates (limit 12)")
    if axes:
        while n > 2 and n ** len(axes) > budget:
            n -= 1
    vals = [_axis_values(lo, hi, n) for _, lo, hi in axes]
    size = int(np.prod([len(v) for v in vals])) if vals else 1
    X = np.tile(base, (size, 1))
    if axes:
        mesh = np.meshgrid(*vals, indexing="ij")
        for (k, _, _), col in zip(axes, mesh):
            X[:, k] = col.ravel()
    return X


def _eval_modes(sys, fn, X):
    m = sys.modes.m
    S = np.repeat(np.arange(m), X.shape[0])
    XX = np.tile(X, (m, 1))
    return S, XX, fn(S, XX)


def _theorem1_axes(sys, box, st, k):
    xc = sys.xc
    hi = box.clipped_upper(sys.probe())
    base = hi.copy()
    base[k] = xc[k]
    i_axes = [(mm, box.lower[mm], max(box.lower[mm], xc[mm])) for mm in sorted(st.M_mu[k])]
    i_axes += [(mm, box.lower[mm], hi[mm]) for mm in sorted(st.M_tilde[k])]
    o_axes = [(n, box.lower[n], hi[n]) for n in st.N_tilde[k]]
    return base, i_axes, o_axes


def extremal_potentials(sys, control, alpha, box, st, k, grid=9):
    """(I*_k(s), O*_k(s)) for every mode s."""
    base, i_axes, o_axes = _theorem1_axes(sys, box, st, k)
    m = sys.modes.m
    XI = _grid(base, i_axes, grid)
    _, _, (I, _) = _eval_modes(sys, lambda S, X: potentials(sys, control, alpha, S, X, box, st), XI)
    XO = _grid(base, o_axes, grid)
    _, _, (_, O) = _eval_modes(sys, lambda S, X: potentials(sys, control, alpha, S, X, box, st), XO)
    I_star = I[:, k].reshape(m, -1).max(axis=1)
    O_star = O[:, k].reshape(m, -1).min(axis=1)
    return I_star, O_star


# ---------------------------------------------------------------------------
# certificate pieces


def solve_bks(generator, p, z) -> np.ndarray:
    """Offsets b >= 0 with z_s + Σ_s' λ_ss'(b_s' - b_s) = p·z for every s.

    The generator has rank m-1; b_1 is pinned to zero, the consistent
    overdetermined system solved by least squares, then b shifted so its
    minimum is zero (common shifts leave every difference unchanged).
    """
    L = np.asarray(generator, dtype=float)
    z = np.asarray(z, dtype=float)
    p = np.asarray(p, dtype=float)
    m = z.size
    if m == 1:
        return np.zeros(1)
    rhs = p @ z - z
    sol, *_ = np.linalg.lstsq(L[:, 1:], rhs, rcond=None)
    b = np.concatenate([[0.0], sol])
    return b - b.min()


def bks_residual(generator, p, z, b) -> float:
    L = np.asarray(generator, dtype=float)
    return float(np.abs(np.asarray(z) + L @ b - np.asarray(p) @ np.asarray(z)).max())


def build_ak(eta: dict, delta: float, N_mu: dict) -> dict:
    """Positive weights with η_k a_k + δ Σ_{n∈N_k} a_n < 0 for every k.

    ``eta`` maps each unbounded link to its expected drift, ``N_mu`` to its
    unbounded downstream links.  Weights are assigned downstream first; the
    ``δ >= |M|`` branch grows geometrically with a base slightly above
    δN/|M| so the inequality holds strictly.
    """
    if any(v >= 0 for v in eta.values()):
        raise NonnegativeDrift("every expected drift must be negative")
    keys = list(eta)
    if delta <= 0 or not keys:
        return {k: 1.0 for k in keys}
    M = max(eta.values())
    N = max((len(N_mu.get(k, ())) for k in keys), default=0)
    N = max(N, 1)
    remaining = set(keys)
    a = {}
    i = 1
    while remaining:
        layer = [k for k in remaining if not (set(N_mu.get(k, ())) & remaining)]
        if not layer:
            raise ValueError("downstream relation among unbounded links is cyclic")
        for k in layer:
            if delta >= abs(M):
                c = (delta * N / abs(M)) * (1 + 1e-6)
                a[k] = c ** (i - 1)
            else:
                a[k] = delta * N ** (i - 1) / abs(M)
        remaining -= set(layer)
        i += 1
    return a


def ak_margin(eta: dict, delta: float, N_mu: dict, a: dict) -> dict:
    return {k: eta[k] * a[k] + delta * sum(a[n] for n in N_mu.get(k, ())) for k in eta}


@dataclass
class Certificate:
    z: dict  # k -> per-mode drift bound
    b: dict  # k -> per-mode offsets
    eta: dict
    a: dict
    delta: float
    residual: float
    margin: dict


@dataclass
class CheckResult:
    certified: bool
    alpha: float
    drift: dict  # k -> expected drift
    structure: Structure
    box: InvariantBox
    certificate: Certificate | None = None
    extra: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "stable_certified" if self.certified else "inconclusive"


def _coupling(sys, alpha, st) -> float:
    if not any(st.N_mu[k] for k in st.K_mu):
        return 0.0
    g = flow_ratios_for(sys)
    return float((2.0 * sys.capacities.max() + alpha) * max(1.0, g.max()))


def _certificate(sys, alpha, st, z: dict) -> Certificate:
    p = sys.p
    L = sys.modes.generator
    eta = {k: float(p @ z[k]) for k in z}
    b = {k: solve_bks(L, p, z[k]) for k in z}
    res = max((bks_residual(L, p, z[k], b[k]) for k in z), default=0.0)
    delta = _coupling(sys, alpha, st)
    N_mu = {k: tuple(st.N_mu[k]) for k in z}
    a = build_ak(eta, delta, N_mu)
    return Certificate(z, b, eta, a, delta, res, ak_margin(eta, delta, N_mu, a))


def theorem1_check(sys, control, alpha, box=None, st=None, grid=9) -> CheckResult:
    if box is None:
        box = build_box(sys, control, alpha)
    if st is None:
        st = structure(sys, control, box)
    p = sys.p
    z, drift = {}, {}
    for k in st.K_mu:
        I_star, O_star = extremal_potentials(sys, control, alpha, box, st, k, grid)
        z[k] = I_star - O_star
        drift[k] = float(p @ z[k])
    ok = all(v < 0 for v in drift.values())
    cert = _certificate(sys, alpha, st, z) if ok else None
    return CheckResult(ok, alpha, drift, st, box, cert)


def prop1_check(sys, control, alpha, box=None, st=None, grid=9) -> CheckResult:
    """Refined test with ramp-weighted offsets for spillback links.

    For each unbounded link the free coordinates of the basic test are
    varied jointly and the pointwise drift, including the offset terms of
    the spillback links, is maximised per mode; the per-mode maxima are then
    averaged as in the basic test (mode offsets for the link itself absorb
    the variation across modes).  Offsets of the spillback links are either
    zero or solved from their per-mode worst ramp-weighted drift; the better
    of the two is kept.  The non-negativity side condition is checked on the
    same grid.
    """
    if box is None:
        box = build_box(sys, control, alpha)
    if st is None:
        st = structure(sys, control, box)
    p = sys.p
    L = sys.modes.generator
    m = sys.modes.m
    lo = box.lower
    hi_all = box.upper
    gamma, _ = _masks(sys, st)
    drift, nonneg_ok = {}, True
    for k in st.K_mu:
        base, i_axes, o_axes = _theorem1_axes(sys, box, st, k)
        seen = {a[0] for a in i_axes}
        axes = i_axes + [a for a in o_axes if a[0] not in seen]
        X = _grid(base, axes, grid)
        S, XX, (I, O, G) = _eval_modes(
            sys, lambda S_, X_: potentials(sys, control, alpha, S_, X_, box, st, return_G=True), X
        )
        W = (I - O)[:, k]
        nts = list(st.N_tilde[k])
        best = math.inf
        for use_b in (False, True):
            extra = np.zeros_like(W)
            side = 0.5 * lo[k] + float(gamma[:, k] @ lo)
            side_vals = np.full_like(W, side)
            for n in nts:
                r = rho(lo[n], hi_all[n], XX[:, n])
                if use_b:
                    zn = (r * G[:, n]).reshape(m, -1).max(axis=1)
                    bn = solve_bks(L, p, zn)
                    bs = bn[S]
                    lam = (L @ bn)[S]  # Σ_s' λ_ss'(b_s' - b_s)
                    extra += rho_slope(lo[n], hi_all[n], XX[:, n]) * bs + r * lam
                    side_vals += r * bs
                # ∫_{lo}^{x} ρ is non-negative
                side_vals += _rho_integral(lo[n], hi_all[n], XX[:, n])
            nonneg_ok &= bool(np.all(side_vals >= -1e-12))
            phi = (W + extra).reshape(m, -1).max(axis=1)
            best = min(best, float(p @ phi))
            if not nts:
                break
        drift[k] = best
    ok = nonneg_ok and all(v < 0 for v in drift.values())
    return CheckResult(ok, alpha, drift, st, box, extra={"side_condition": nonneg_ok})


def _rho_integral(lo, hi, x):
    x = np.asarray(x, dtype=float)
    w = hi - lo
    mid = np.clip(x - lo, 0.0, w)
    return np.where(x <= lo, 0.0, 0.5 * mid**2 / w + np.maximum(x - hi, 0.0))


# ---------------------------------------------------------------------------
# restricted controls


def spillback_free(sys, control, box: InvariantBox, samples=2000, seed=0, tol=1e-9) -> bool:
    """Desired inflow never exceeds the receiving flow on the box (k != 1)."""
    rng = np.random.default_rng(seed)
    hi = box.clipped_upper(sys.probe())
    X = np.vstack([_corner_states(box, sys.probe()), box.lower + rng.random((samples, sys.K)) * (hi - box.lower)])
    S, XX, mu = _eval_modes(sys, lambda S_, X_: sys.desired(control, S_, X_), X)
    demand = mu @ sys.D
    r = sys.table.receive(S, XX)
    return bool(np.all(demand[:, 1:] <= r[:, 1:] + tol))


def theorem4_bound(sys, control, box: InvariantBox, st: Structure | None = None, grid=9) -> float:
    """Demand-independent lower bound on the throughput of a control whose
    densities stay bounded outside the origin and whose desired inflows
    respect receiving flows."""
    if np.any(~np.isfinite(box.upper[1:])):
        raise StructureViolated("some link other than the origin is unbounded")
    if not spillback_free(sys, control, box):
        raise StructureViolated("desired inflow exceeds the receiving flow somewhere on the box")
    if st is None:
        st = structure(sys, control, box)
    hi = box.clipped_upper(sys.probe())
    base = hi.copy()
    base[0] = sys.xc[0]
    axes = [(n, box.lower[n], hi[n]) for n in st.N_tilde[0]]
    X = _grid(base, axes, grid)

    def origin_out(S, XX):
        mu = sys.desired(control, S, XX)
        f = sys.table.send(S, XX)
        out = mu @ sys.S
        with np.errstate(divide="ignore", invalid="ignore"):
            share = mu / out[..., sys.src] * f[..., sys.src]
        q = np.where(mu > 0, np.minimum(mu, share), 0.0)
        qin, qout = q @ sys.D, q @ sys.S
        qout[..., -1] += f[..., -1]
        G = qin - qout
        rg = rho(box.lower, box.upper, XX) * G
        return qout[..., 0] - rg[..., list(st.N_tilde[0])].sum(axis=-1)

    _, _, val = _eval_modes(sys, origin_out, X)
    per_mode = val.reshape(sys.modes.m, -1).min(axis=1)
    return float(sys.p @ per_mode)


# ---------------------------------------------------------------------------
# throughput


def certified_throughput(
    sys, control, which="t", box_builder=None, tol=1e-3, grid=9, hi=None, verify_samples=4000
):
    """Largest demand certified stable, by bisection on [0, MECC + 1].

    ``which`` is "t" (basic test), "p" (refined test) or "both"; with
    "both" the two bisections share their boxes and a pair is returned.
    Each box is first audited with ``verify_samples`` random face states.
    """
    builder = box_builder or (lambda a: build_box(sys, control, a))
    hi = mecc(sys) + 1.0 if hi is None else hi
    cache = {}

    def parts(a):
        if a not in cache:
            box = builder(a)
            # a box the sampled audit refutes cannot carry a certificate
            ok, _ = verify_box(sys, box, control, a, samples=verify_samples)
            cache[a] = (box, structure(sys, control, box), ok)
        return cache[a]

    def bisect(check):
        lo, up = 0.0, hi
        while up - lo > tol:
            mid = 0.5 * (lo + up)
            box, st, ok = parts(mid)
            if ok and check(sys, control, mid, box, st, grid).certified:
                lo = mid
            else:
                up = mid
        return lo

    if which == "t":
        return bisect(theorem1_check)
    if which == "p":
        return bisect(prop1_check)
    return bisect(theorem1_check), bisect(prop1_check)

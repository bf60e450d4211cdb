"""Sending / receiving flow functions and their mode-dependent caps.

Infinite receiving flow (infinite storage) is represented by ``math.inf``;
IEEE arithmetic already propagates it correctly through ``min``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

INF = math.inf

BISECT_TOL = 1e-10
# asymptotic families never attain capacity; this fraction stands in
ATTAIN_FRACTION = 1.0 - 1e-6


def _bisect(pred, lo, hi, tol=BISECT_TOL, max_iter=200):
    """Smallest x in [lo, hi] with ``pred(x)`` true, assuming monotone ``pred``."""
    if pred(lo):
        return lo
    for _ in range(max_iter):
        if hi - lo <= tol * max(1.0, abs(hi)):
            break
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class FlowFunction:
    """Base sending/receiving flows of one link.

    ``xmax`` is the jam density (``inf`` for infinite storage).  With finite
    storage the receiving flow is ``w * (xmax - x)``; for the CTM this is the
    familiar ``F - w (x - xc)``.
    """

    family: str = "ctm"
    F: float = 1.0
    v: float = 1.0
    w: float = 1.0
    xc: float | None = None  # CTM congestion-onset density
    eps: float = 1.0  # clearing
    rho: float = 1.0  # exponential server
    xmax: float = INF
    x_clip: float = 1e3

    def __post_init__(self):
        if self.family not in ("ctm", "clearing", "exp"):
            raise ValueError(f"unknown flow family {self.family!r}")
        if self.F < 0 or self.v <= 0 or self.w <= 0 or self.eps <= 0 or self.rho <= 0:
            raise ValueError("flow parameters must be positive (F nonnegative)")
        if self.family == "ctm" and self.xc is None:
            object.__setattr__(self, "xc", self.F / self.v)

    @classmethod
    def ctm(cls, F, v=1.0, w=1.0, xc=None, finite=False, **kw):
        if v <= 0 or w <= 0:
            raise ValueError("free-flow speed and congestion wave speed must be positive")
        xc = F / v if xc is None else xc
        xmax = xc + F / w if finite else INF
        return cls(family="ctm", F=F, v=v, w=w, xc=xc, xmax=xmax, **kw)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.xmax)

    def send(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "ctm":
            return np.minimum(self.v * x, self.F)
        if self.family == "clearing":
            return self.F * x / (self.eps + x)
        return self.F * -np.expm1(-self.rho * x)

    def receive(self, x):
        x = np.asarray(x, dtype=float)
        if not self.finite:
            return np.full_like(x, INF)
        return np.maximum(self.w * (self.xmax - x), 0.0)

    @property
    def sup_send(self) -> float:
        return self.F

    @property
    def attains(self) -> bool:
        return self.family == "ctm"


@dataclass(frozen=True)
class ModedFlow:
    """A base flow function with per-mode caps on sending and receiving flow."""

    base: FlowFunction
    send_caps: tuple[float, ...] = (INF,)
    recv_caps: tuple[float, ...] = (INF,)

    def __post_init__(self):
        m = max(len(self.send_caps), len(self.recv_caps))
        for name in ("send_caps", "recv_caps"):
            caps = tuple(float(c) for c in getattr(self, name))
            if len(caps) == 1:
                caps = caps * m
            elif len(caps) != m:
                raise ValueError("send and receive caps must list the same modes")
            object.__setattr__(self, name, caps)

    def send(self, s: int, x):
        return np.minimum(self.base.send(x), self.send_caps[s])

    def receive(self, s: int, x):
        return np.minimum(self.base.receive(x), self.recv_caps[s])


def sending_flow(mf: ModedFlow, s: int, x: float) -> float:
    return float(mf.send(s, x))


def receiving_flow(mf: ModedFlow, s: int, x: float) -> float:
    return float(mf.receive(s, x))


def mode_capacity(mf: ModedFlow, s: int, x_clip: float | None = None) -> tuple[float, float]:
    """Capacity ``sup_x min{f(s,x), r(s,x)}`` and critical density in mode ``s``.

    Finite storage: bisection on the crossing of non-decreasing ``f`` and
    non-increasing ``r``.  Infinite storage: the supremum of ``f`` (attained
    only in the limit for the asymptotic families).  The critical density is
    the smallest ``x`` where ``f(s, x)`` reaches the capacity (or the
    ``ATTAIN_FRACTION`` proxy when the family never attains it), searched up
    to ``x_clip``.
    """
    base = mf.base
    x_clip = base.x_clip if x_clip is None else x_clip
    hi = min(base.xmax, x_clip)
    if base.finite:
        cross = _bisect(lambda x: mf.send(s, x) >= mf.receive(s, x), 0.0, base.xmax)
        cap = float(min(mf.send(s, cross), mf.receive(s, cross)))
    else:
        cap = float(min(base.sup_send, mf.send_caps[s], mf.recv_caps[s]))
    if cap <= 0:
        return 0.0, 0.0
    if base.attains or cap < base.sup_send * ATTAIN_FRACTION:
        target = cap * (1.0 - 1e-12)
    else:
        target = cap * ATTAIN_FRACTION
    xc = _bisect(lambda x: mf.send(s, x) >= target, 0.0, hi)
    return cap, float(xc)


@dataclass
class FlowTable:
    """Vectorised flows for all links of a network.

    ``send_caps`` / ``recv_caps`` are (m, K) arrays of per-mode caps.
    """

    funcs: Sequence[FlowFunction]
    send_caps: np.ndarray
    recv_caps: np.ndarray
    _groups: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.send_caps = np.asarray(self.send_caps, dtype=float)
        self.recv_caps = np.asarray(self.recv_caps, dtype=float)
        K = len(self.funcs)
        if self.send_caps.shape[1] != K or self.recv_caps.shape != self.send_caps.shape:
            raise ValueError("mode caps must be (modes, links) arrays")
        groups = {}
        for fam in ("ctm", "clearing", "exp"):
            idx = np.array([k for k, f in enumerate(self.funcs) if f.family == fam], dtype=int)
            if idx.size:
                groups[fam] = idx
        self._groups = groups
        self.F = np.array([f.F for f in self.funcs])
        self.v = np.array([f.v for f in self.funcs])
        self.w = np.array([f.w for f in self.funcs])
        self.eps = np.array([f.eps for f in self.funcs])
        self.rho = np.array([f.rho for f in self.funcs])
        self.xmax = np.array([f.xmax for f in self.funcs])
        self.finite = np.isfinite(self.xmax)
        self.xmax_safe = np.where(self.finite, self.xmax, 0.0)

    @classmethod
    def from_moded(cls, moded: Sequence[ModedFlow]):
        send = np.array([mf.send_caps for mf in moded]).T
        recv = np.array([mf.recv_caps for mf in moded]).T
        return cls([mf.base for mf in moded], send, recv)

    @property
    def K(self) -> int:
        return len(self.funcs)

    @property
    def n_modes(self) -> int:
        return self.send_caps.shape[0]

    def moded(self, k: int) -> ModedFlow:
        return ModedFlow(
            self.funcs[k], tuple(self.send_caps[:, k]), tuple(self.recv_caps[:, k])
        )

    def base_send(self, x):
        x = np.asarray(x, dtype=float)
        g = self._groups
        if len(g) == 1 and "ctm" in g:
            return np.minimum(self.v * x, self.F)
        out = np.empty_like(x)
        if "ctm" in g:
            i = g["ctm"]
            out[..., i] = np.minimum(self.v[i] * x[..., i], self.F[i])
        if "clearing" in g:
            i = g["clearing"]
            out[..., i] = self.F[i] * x[..., i] / (self.eps[i] + x[..., i])
        if "exp" in g:
            i = g["exp"]
            out[..., i] = -self.F[i] * np.expm1(-self.rho[i] * x[..., i])
        return out

    def base_receive(self, x):
        x = np.asarray(x, dtype=float)
        r = np.maximum(self.w * (self.xmax_safe - x), 0.0)
        return np.where(self.finite, r, INF)

    def send(self, s, x):
        """f_k(s, x_k) for states ``x`` (..., K) and modes ``s`` (...)."""
        return np.minimum(self.base_send(x), self.send_caps[s])

    def receive(self, s, x):
        return np.minimum(self.base_receive(x), self.recv_caps[s])

    def capacities(self) -> np.ndarray:
        """(m, K) array of mode capacities F_{s,k}."""
        m = self.n_modes
        out = np.zeros((m, self.K))
        for k in range(self.K):
            mf = self.moded(k)
            for s in range(m):
                out[s, k] = mode_capacity(mf, s)[0]
        return out

    def critical_densities(self, s: int = 0) -> np.ndarray:
        return np.array([mode_capacity(self.moded(k), s)[1] for k in range(self.K)])

    def upper_probe(self) -> np.ndarray:
        """Finite stand-in for unbounded densities: the jam density, or a
        clipped large value where storage is infinite."""
        clip = np.array([f.x_clip for f in self.funcs])
        return np.where(self.finite, self.xmax, clip)

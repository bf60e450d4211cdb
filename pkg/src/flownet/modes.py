"""Disruption modes: an ergodic CTMC plus per-mode sensor and actuator faults."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components


class NotErgodic(ValueError):
    pass


@dataclass(frozen=True)
class ModeSystem:
    """Mode set with transition rates and fault maps.

    Sensor faults are affine and non-decreasing: the observed density of link
    ``k`` in mode ``s`` is ``max(0, scale[s, k] * x_k + bias[s, k])``.  A
    denial-of-service fault is ``scale = bias = 0``.

    Actuator faults act after the control law is evaluated: where
    ``disengage[s, p]`` is set the pair's desired flow is replaced by the
    upstream sending flow, and ``offset[s, p]`` is added (clipped at zero).
    """

    rates: np.ndarray
    scale: np.ndarray
    bias: np.ndarray
    disengage: np.ndarray | None = None
    offset: np.ndarray | None = None
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        rates = np.array(self.rates, dtype=float)
        if rates.ndim != 2 or rates.shape[0] != rates.shape[1]:
            raise ValueError("rate matrix must be square")
        np.fill_diagonal(rates, 0.0)
        if np.any(rates < 0):
            raise ValueError("transition rates must be nonnegative")
        m = rates.shape[0]
        if m > 1:
            n, _ = connected_components(rates > 0, directed=True, connection="strong")
            if n != 1:
                raise NotErgodic("mode transition graph is not strongly connected")
        object.__setattr__(self, "rates", rates)
        scale = np.array(self.scale, dtype=float)
        bias = np.array(self.bias, dtype=float)
        if scale.shape[0] != m or bias.shape != scale.shape:
            raise ValueError("sensor fault arrays must be (modes, links)")
        if np.any(scale < 0):
            raise ValueError("sensor fault maps must be non-decreasing")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "bias", bias)
        if self.disengage is not None:
            object.__setattr__(self, "disengage", np.asarray(self.disengage, dtype=bool))
        if self.offset is not None:
            object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(s + 1) for s in range(m)))

    @classmethod
    def nominal(cls, K: int, rates=None):
        rates = np.zeros((1, 1)) if rates is None else np.asarray(rates, dtype=float)
        m = rates.shape[0]
        return cls(rates=rates, scale=np.ones((m, K)), bias=np.zeros((m, K)))

    @property
    def m(self) -> int:
        return self.rates.shape[0]

    @property
    def generator(self) -> np.ndarray:
        """The matrix Λ with off-diagonal rates and rows summing to zero."""
        L = self.rates.copy()
        np.fill_diagonal(L, -self.rates.sum(axis=1))
        return L

    @property
    def exit_rates(self) -> np.ndarray:
        return self.rates.sum(axis=1)

    @property
    def has_actuator_faults(self) -> bool:
        return self.disengage is not None or self.offset is not None


def steady_state(ms: ModeSystem) -> np.ndarray:
    """Stationary distribution p with p Λ = 0 and Σp = 1.

    Solves the transposed generator with one balance row replaced by the
    normalisation (the generator has rank m-1 for an ergodic chain).
    """
    m = ms.m
    if m == 1:
        return np.ones(1)
    A = ms.generator.T.copy()
    A[-1, :] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    p = np.linalg.solve(A, rhs)
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def balance_residual(ms: ModeSystem, p) -> float:
    p = np.asarray(p, dtype=float)
    return float(max(np.abs(p @ ms.generator).max(), abs(p.sum() - 1.0)))


def sample_path(ms: ModeSystem, s0: int, horizon: float, rng) -> list[tuple[int, float]]:
    """Mode path on [0, horizon] as (mode, entry time) pairs.

    ``rng`` is a ``numpy.random.Generator`` or a seed.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(rng)
    path = [(int(s0), 0.0)]
    t, s = 0.0, int(s0)
    exit_rates = ms.exit_rates
    while exit_rates[s] > 0:
        t += rng.exponential(1.0 / exit_rates[s])
        if t >= horizon:
            break
        s = int(rng.choice(ms.m, p=ms.rates[s] / exit_rates[s]))
        path.append((s, t))
    return path


def occupancy(path, horizon: float, m: int) -> np.ndarray:
    occ = np.zeros(m)
    for (s, t0), (_, t1) in zip(path, path[1:] + [(None, horizon)]):
        occ[s] += t1 - t0
    return occ / horizon


def observe(ms: ModeSystem, s, x):
    """Observed densities T_s(x); vectorised over leading axes of ``x``/``s``."""
    x = np.asarray(x, dtype=float)
    return np.maximum(ms.scale[s] * x + ms.bias[s], 0.0)


def independent_disruptions(components) -> tuple[np.ndarray, list[tuple[int, ...]]]:
    """Generator rates for a product of independent two-state disruptions.

    ``components`` lists (rate_on, rate_off) pairs.  Modes enumerate the
    on/off tuples with the first component as the slowest-varying index,
    so mode 0 is fully nominal.
    """
    comps = list(components)
    states = [()]
    for _ in comps:
        states = [st + (b,) for st in states for b in (0, 1)]
    m = len(states)
    rates = np.zeros((m, m))
    for a, sa in enumerate(states):
        for b, sb in enumerate(states):
            diff = [i for i in range(len(comps)) if sa[i] != sb[i]]
            if len(diff) != 1:
                continue
            i = diff[0]
            on, off = comps[i]
            rates[a, b] = on if sa[i] == 0 else off
    return rates, states

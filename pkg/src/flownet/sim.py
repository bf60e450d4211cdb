"""PDMP trajectories by explicit Euler with exact landing on mode jumps,
empirical stability classification and throughput estimation.

Replicas are integrated side by side: one row per (demand, seed) pair, each
row following its own pre-sampled mode path.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .modes import sample_path
from .stability import mecc

SLOPE_EPS = 1e-3


class NonFiniteState(FloatingPointError):
    pass


@dataclass
class Trajectory:
    times: np.ndarray  # (T,)
    modes: np.ndarray  # (T,)
    states: np.ndarray  # (T, K)
    running_avg: np.ndarray  # (T,) time average of Σ_k x_k
    cum_in: float
    cum_out: float
    max_clip: float

    @property
    def mass_error(self) -> float:
        """Relative mismatch between net inflow and stored mass."""
        stored = float(self.states[-1].sum() - self.states[0].sum())
        scale = max(abs(self.cum_in), abs(self.cum_out), 1.0)
        return abs((self.cum_in - self.cum_out) - stored) / scale

    def to_csv(self, path):
        K = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "s"] + [f"x{k + 1}" for k in range(K)] + ["running_avg"])
            for t, s, x, ra in zip(self.times, self.modes, self.states, self.running_avg):
                w.writerow([f"{t:.6g}", int(s) + 1] + [f"{v:.6g}" for v in x] + [f"{ra:.6g}"])

    def to_svg(self, path):
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(8, 4))
        for k in range(self.states.shape[1]):
            ax.plot(self.times, self.states[:, k], lw=0.7, label=f"x{k + 1}")
        ax.plot(self.times, self.running_avg, "k--", lw=1.2, label="running avg")
        ax.set_xlabel("t")
        ax.set_ylabel("density")
        ax.legend(ncol=4, fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format="svg")
        plt.close(fig)


def _paths(sys, seeds, s0, horizon):
    """Jump times and post-jump modes per replica, padded with +inf."""
    ms = sys.modes
    paths = [sample_path(ms, s0, horizon, np.random.default_rng(seed)) for seed in seeds]
    n = max(len(p) for p in paths)
    times = np.full((len(paths), n + 1), np.inf)
    modes = np.zeros((len(paths), n + 1), dtype=int)
    for i, p in enumerate(paths):
        for j, (s, t) in enumerate(p):
            times[i, j] = t
            modes[i, j] = s
    return times, modes


def _integrate(sys, control, alphas, seeds, horizon, dt, x0=None, s0=0, record=None):
    """Euler integration of every (alpha, seed) row.

    ``record`` is the number of evenly spaced stamps kept; None keeps every
    step.  Returns a dict of arrays.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    alphas = np.asarray(alphas, dtype=float)
    B, K = alphas.size, sys.K
    xmax = sys.table.xmax
    x = np.zeros((B, K)) if x0 is None else np.array(np.broadcast_to(x0, (B, K)), dtype=float)
    jt, jm = _paths(sys, seeds, s0, horizon)
    # the first entry of a sampled path is the initial mode at time 0
    ptr = np.ones(B, dtype=int)
    s = jm[:, 0].copy()
    t = np.zeros(B)
    integral = np.zeros(B)
    cum_in = np.zeros(B)
    cum_out = np.zeros(B)
    max_clip = 0.0

    stamps = None if record is None else np.linspace(0.0, horizon, record + 1)[1:]
    rec_t, rec_s, rec_x, rec_ra = [np.zeros(B)], [s.copy()], [x.copy()], [x.sum(axis=1)]
    next_stamp = 0
    rows = np.arange(B)
    while True:
        live = t < horizon - 1e-12
        if not live.any():
            break
        nxt = jt[rows, ptr]
        h = np.minimum(np.minimum(dt, nxt - t), horizon - t)
        h = np.where(live, np.maximum(h, 0.0), 0.0)
        G, _, f = _field(sys, control, alphas, s, x)
        x_new = x + h[:, None] * G
        clipped = np.clip(x_new, 0.0, xmax)
        clip = np.abs(clipped - x_new).max(axis=1)
        max_clip = max(max_clip, float(clip.max()))
        cum_in += h * alphas
        cum_out += h * f[:, -1]
        integral += 0.5 * h * (x.sum(axis=1) + clipped.sum(axis=1))
        x = clipped
        if not np.all(np.isfinite(x)):
            raise NonFiniteState("density became non-finite")
        t = t + h
        jumped = live & (t >= nxt - 1e-12)
        if jumped.any():
            s = np.where(jumped, jm[rows, ptr], s)
            ptr = np.where(jumped, ptr + 1, ptr)
        if stamps is None:
            rec_t.append(t.copy())
            rec_s.append(s.copy())
            rec_x.append(x.copy())
            with np.errstate(invalid="ignore", divide="ignore"):
                rec_ra.append(np.where(t > 0, integral / t, x.sum(axis=1)))
        else:
            tmin = t.min()
            while next_stamp < stamps.size and tmin >= stamps[next_stamp] - 1e-9:
                rec_t.append(t.copy())
                rec_s.append(s.copy())
                rec_x.append(x.copy())
                rec_ra.append(integral / np.maximum(t, 1e-300))
                next_stamp += 1
    return {
        "t": np.stack(rec_t, axis=1),
        "s": np.stack(rec_s, axis=1),
        "x": np.stack(rec_x, axis=1),
        "ra": np.stack(rec_ra, axis=1),
        "cum_in": cum_in,
        "cum_out": cum_out,
        "max_clip": max_clip,
    }


def _field(sys, control, alphas, s, x):
    mu = sys.desired(control, s, x)
    q, f = sys.actual_flow(mu, s, x)
    G = q @ sys.D - q @ sys.S
    G[:, 0] += alphas
    G[:, -1] -= f[:, -1]
    return G, q, f


def simulate(sys, control, alpha, x0=None, s0=0, horizon=100.0, dt=0.05, seed=0) -> Trajectory:
    """One trajectory, every Euler step recorded."""
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        if np.any(x0 < 0) or np.any(x0 > sys.table.xmax):
            raise ValueError("initial densities lie outside the state space")
    out = _integrate(sys, control, [alpha], [seed], horizon, dt, x0=x0, s0=s0)
    return Trajectory(
        times=out["t"][0],
        modes=out["s"][0],
        states=out["x"][0],
        running_avg=out["ra"][0],
        cum_in=float(out["cum_in"][0]),
        cum_out=float(out["cum_out"][0]),
        max_clip=out["max_clip"],
    )


@dataclass
class StabilityVerdict:
    verdict: str  # stable | unstable | undecided
    slope: float  # largest second-half slope across seeds
    plateau: float  # mean final running average
    slopes: np.ndarray


def _second_half_slopes(t, ra):
    """Least-squares slope of each row's running average over t >= T/2."""
    T = t[:, -1:]
    mask = t >= 0.5 * T
    n = mask.sum(axis=1)
    tm = np.where(mask, t, 0).sum(axis=1) / n
    rm = np.where(mask, ra, 0).sum(axis=1) / n
    dt_ = np.where(mask, t - tm[:, None], 0.0)
    cov = (dt_ * np.where(mask, ra - rm[:, None], 0.0)).sum(axis=1)
    var = (dt_**2).sum(axis=1)
    return cov / var


def _verdicts(slopes, eps):
    """slopes: (n_alpha, reps) -> verdict per alpha."""
    out = []
    for row in slopes:
        if row.max() < eps:
            out.append("stable")
        elif row.min() > 10 * eps:
            out.append("unstable")
        else:
            out.append("undecided")
    return out


def _batch(sys, control, alphas, reps, horizon, dt, seed, record=200):
    alphas = np.asarray(alphas, dtype=float)
    A = np.repeat(alphas, reps)
    seeds = np.tile(seed + np.arange(reps), alphas.size)
    out = _integrate(sys, control, A, seeds, horizon, dt, record=record)
    slopes = _second_half_slopes(out["t"], out["ra"]).reshape(alphas.size, reps)
    plateau = out["ra"][:, -1].reshape(alphas.size, reps).mean(axis=1)
    return slopes, plateau


def classify_stability(sys, control, alpha, reps=10, horizon=5000.0, dt=0.01, seed=0, eps=SLOPE_EPS) -> StabilityVerdict:
    if reps < 5:
        raise ValueError("at least five replicas are needed")
    slopes, plateau = _batch(sys, control, [alpha], reps, horizon, dt, seed)
    v = _verdicts(slopes, eps)[0]
    return StabilityVerdict(v, float(slopes[0].max()), float(plateau[0]), slopes[0])


def classify_many(sys, control, alphas, reps=10, horizon=5000.0, dt=0.01, seed=0, eps=SLOPE_EPS):
    """Verdicts for several demands in one batched run."""
    if reps < 5:
        raise ValueError("at least five replicas are needed")
    slopes, plateau = _batch(sys, control, alphas, reps, horizon, dt, seed)
    return [
        StabilityVerdict(v, float(sl.max()), float(pl), sl)
        for v, sl, pl in zip(_verdicts(slopes, eps), slopes, plateau)
    ]


def simulated_throughput(
    sys, control, tol=1e-2, reps=10, horizon=5000.0, dt=0.05, seed=0, hi=None, points=16,
    eps=SLOPE_EPS, coarse=0.2,
) -> float:
    """Largest stable demand, by multisection on [0, MECC + 1].

    A first pass at ``coarse`` times the horizon brackets the boundary: its
    last stable demand bounds from below and its first clearly unstable one
    from above (short runs call slowly settling demands undecided, so only
    the clear verdicts are used).  Full-horizon rounds of ``points`` demands
    then shrink the bracket to ``tol``; undecided counts as unstable.
    Returns the midpoint of the final bracket.
    """
    if tol < 1e-3:
        raise ValueError("tolerance below 1e-3 is not supported")
    lo, up = 0.0, (mecc(sys) + 1.0 if hi is None else hi)
    if coarse and coarse < 1:
        grid = np.linspace(lo, up, points + 2)[1:-1]
        verdicts = classify_many(sys, control, grid, reps, coarse * horizon, dt, seed, eps)
        first_bad = next((i for i, v in enumerate(verdicts) if v.verdict != "stable"), len(grid))
        new_lo = grid[first_bad - 1] if first_bad > 0 else lo
        new_up = next((a for a, v in zip(grid[first_bad:], verdicts[first_bad:]) if v.verdict == "unstable"), up)
        lo, up = new_lo, new_up
    while up - lo > tol:
        grid = np.linspace(lo, up, points + 2)[1:-1]
        verdicts = classify_many(sys, control, grid, reps, horizon, dt, seed, eps)
        new_lo, new_up = lo, up
        for a, v in zip(grid, verdicts):
            if v.verdict == "stable":
                new_lo = a
            else:
                new_up = a
                break
        lo, up = new_lo, new_up
    return 0.5 * (lo + up)

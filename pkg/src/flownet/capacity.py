"""Min-cut capacities of a moded network: per mode, in expectation (EMCC)
and of the expected capacities (MECC)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import min_cut


@dataclass(frozen=True)
class CapacitySummary:
    emcc: float
    mecc: float
    per_mode: tuple[float, ...]
    cuts: tuple[frozenset, ...]
    mecc_cut: frozenset

    def to_rows(self):
        rows = [("mode", i + 1, c, " ".join(str(k + 1) for k in sorted(cut)))
                for i, (c, cut) in enumerate(zip(self.per_mode, self.cuts))]
        rows.append(("emcc", "", self.emcc, ""))
        rows.append(("mecc", "", self.mecc, " ".join(str(k + 1) for k in sorted(self.mecc_cut))))
        return rows


def capacity_summary(sys) -> CapacitySummary:
    F = sys.capacities
    per, cuts = [], []
    for s in range(sys.modes.m):
        c, cut = min_cut(sys.net, F[s])
        per.append(float(c))
        cuts.append(cut)
    E = float(sys.p @ np.array(per))
    M, mcut = min_cut(sys.net, sys.p @ F)
    return CapacitySummary(E, float(M), tuple(per), tuple(cuts), mcut)

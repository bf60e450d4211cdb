"""End-to-end analysis of a scenario and its tabular output."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .capacity import CapacitySummary, capacity_summary
from .estimators import box_builder_for
from .invariant import InvariantBox
from .scenario import Scenario
from .sim import simulated_throughput
from .stability import (
    CheckResult,
    StructureViolated,
    certified_throughput,
    structure,
    theorem1_check,
    theorem4_bound,
)


@dataclass
class AnalysisReport:
    name: str
    control: str
    alpha_t: float
    alpha_p: float
    alpha_sim: float | None
    capacity: CapacitySummary
    box: InvariantBox
    check: CheckResult
    bound: float | None = None
    notes: list = field(default_factory=list)

    def summary_rows(self):
        rows = [
            ("control", self.control),
            ("alpha_t", _fmt(self.alpha_t)),
            ("alpha_p", _fmt(self.alpha_p)),
            ("alpha_sim", _fmt(self.alpha_sim)),
            ("emcc", _fmt(self.capacity.emcc)),
            ("mecc", _fmt(self.capacity.mecc)),
        ]
        if self.bound is not None:
            rows.append(("alpha_bound", _fmt(self.bound)))
        return rows

    def box_rows(self):
        return [(k + 1, lo, hi) for k, lo, hi in self.box.to_rows()]

    def certificate_rows(self):
        cert = self.check.certificate
        if cert is None:
            return []
        rows = []
        for k in cert.z:
            for s, (z, b) in enumerate(zip(cert.z[k], cert.b[k])):
                rows.append((k + 1, s + 1, z, b, cert.a[k], cert.eta[k]))
        return rows

    def text(self) -> str:
        out = io.StringIO()
        out.write(f"{self.name} [{self.control}]\n")
        for key, val in self.summary_rows()[1:]:
            out.write(f"  {key:<10} {val}\n")
        out.write("  per-mode min cuts: " + ", ".join(_fmt(c) for c in self.capacity.per_mode) + "\n")
        out.write(f"  invariant box at alpha = {_fmt(self.check.alpha)}\n")
        for k, lo, hi in self.box_rows():
            out.write(f"    link {k:<3} [{lo:.4f}, {_fmt(hi)}]\n")
        if self.check.certificate is not None:
            c = self.check.certificate
            out.write(f"  certificate: delta={c.delta:.4g} residual={c.residual:.2e}\n")
            for k in c.z:
                out.write(
                    f"    link {k + 1}: eta={c.eta[k]:.4f} a={c.a[k]:.4g} "
                    f"z={np.round(c.z[k], 4).tolist()} b={np.round(c.b[k], 4).tolist()}\n"
                )
        for note in self.notes:
            out.write(f"  note: {note}\n")
        return out.getvalue()


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    if math.isinf(v):
        return "inf"
    return f"{v:.4f}".rstrip("0").rstrip(".") if v != 0 else "0"


def analyze(scenario: Scenario, simulate: bool = True) -> AnalysisReport:
    opts = scenario.analysis
    sys = scenario.build()
    law = scenario.control(sys)
    kind = scenario.data.get("control", {}).get("kind", "logit")
    builder = box_builder_for(sys, law)
    a_t = certified_throughput(sys, law, "t", box_builder=builder, tol=opts["tol"], grid=opts["grid"])
    a_p = certified_throughput(sys, law, "p", box_builder=builder, tol=opts["tol"], grid=opts["prop1_grid"])
    a_sim = None
    if simulate:
        a_sim = simulated_throughput(
            sys, law, tol=max(opts["sim_tol"], 1e-3), reps=int(opts["seeds"]),
            horizon=float(opts["horizon"]), dt=float(opts["dt"]),
        )
    alpha = opts["alpha"] if opts["alpha"] is not None else a_t
    box = builder(alpha)
    st = structure(sys, law, box)
    check = theorem1_check(sys, law, alpha, box, st, opts["grid"])
    notes, bound = [], None
    if kind == "dd":
        try:
            b0 = builder(0.0)
            bound = theorem4_bound(sys, law, b0, structure(sys, law, b0), grid=opts["grid"])
        except StructureViolated as e:
            notes.append(f"demand-free bound not applicable: {e}")
    return AnalysisReport(
        scenario.name, kind, a_t, a_p, a_sim, capacity_summary(sys), box, check, bound, notes
    )


TABLE_CONTROLS = ("md", "ol", "dd")


def default_matrix(controls=TABLE_CONTROLS):
    # physical outer, cyber inner: the row order of the published tables
    rows = []
    for storage in ("infinite", "finite"):
        for physical in (False, True):
            for cyber in (False, True):
                rows.append({"storage": storage, "cyber": cyber, "physical": physical})
    return rows


def table_header(controls=TABLE_CONTROLS):
    head = ["storage", "cyber", "physical"]
    for c in controls:
        head += [f"{c}_t", f"{c}_p", f"{c}_sim"]
    return head


def comparison_table(base: Scenario, rows, controls=TABLE_CONTROLS, simulate=True):
    """One analysis per (row, control); returns header and string rows."""
    out = []
    for row in rows:
        line = [row["storage"], "yes" if row["cyber"] else "no", "yes" if row["physical"] else "no"]
        for c in controls:
            ctrl = dict(base.data.get("control", {}))
            ctrl["kind"] = c
            sc = base.with_options(
                storage=row["storage"], cyber=row["cyber"], physical=row["physical"], control=ctrl
            )
            rep = analyze(sc, simulate=simulate)
            line += [_fmt(rep.alpha_t), _fmt(rep.alpha_p), _fmt(rep.alpha_sim)]
        out.append(line)
    return table_header(controls), out


def aligned(header, rows) -> str:
    cols = [header] + rows
    widths = [max(len(str(r[i])) for r in cols) for i in range(len(header))]
    lines = ["  ".join(str(v).rjust(w) for v, w in zip(r, widths)) for r in cols]
    return "\n".join(lines) + "\n"


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()

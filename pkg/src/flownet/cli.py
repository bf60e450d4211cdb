"""Command-line front end.

    flownet analyze    <scenario> [--out DIR] [--no-sim]
    flownet synthesize <scenario> --kind md|ol|dd [--out FILE]
    flownet table      <scenario> [--matrix FILE] [--out DIR] [--no-sim]
    flownet simulate   <scenario> --alpha A [--seed N] [--out FILE] [--svg FILE]

Every command accepts --storage/--cyber/--physical/--control overrides and the
numeric options --dt --horizon --grid --tol --seeds.  Exit status: 0 on
success, 1 for invalid input, 2 for failures during analysis.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys
from pathlib import Path

import numpy as np

from .controls import example_density_dependent, synthesize_mode_dependent, synthesize_open_loop
from .report import aligned, analyze, comparison_table, default_matrix, table_header, to_csv
from .scenario import Scenario, ScenarioError
from .sim import simulate

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _yes_no(text):
    t = text.lower()
    if t in ("yes", "y", "true", "1", "on"):
        return True
    if t in ("no", "n", "false", "0", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected yes/no, got {text!r}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # bad arguments are invalid input, not a runtime failure
        self.print_usage(_sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _parser():
    p = _Parser(prog="flownet", description="Flow networks under stochastic disruptions.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("scenario", help="scenario file (JSON), or 'example' for the bundled one")
        sp.add_argument("--storage", choices=("finite", "infinite"))
        sp.add_argument("--cyber", type=_yes_no)
        sp.add_argument("--physical", type=_yes_no)
        sp.add_argument("--control", help="control kind override")
        sp.add_argument("--dt", type=float)
        sp.add_argument("--horizon", type=float)
        sp.add_argument("--grid", type=int)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--seeds", type=int)

    a = sub.add_parser("analyze", help="certified and simulated throughput of one scenario")
    common(a)
    a.add_argument("--out", type=Path, help="directory for CSV reports")
    a.add_argument("--no-sim", action="store_true", help="skip the simulation estimate")

    s = sub.add_parser("synthesize", help="write the table of a synthesized control")
    common(s)
    s.add_argument("--kind", choices=("md", "ol", "dd"), required=True)
    s.add_argument("--out", type=Path, help="CSV file (stdout if omitted)")

    t = sub.add_parser("table", help="comparison of md/ol/dd over a scenario matrix")
    common(t)
    t.add_argument("--matrix", type=Path, help="JSON list of {storage, cyber, physical} rows")
    t.add_argument("--out", type=Path, help="directory for table.csv and table.txt")
    t.add_argument("--no-sim", action="store_true")

    m = sub.add_parser("simulate", help="one trajectory")
    common(m)
    m.add_argument("--alpha", type=float, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", type=Path, help="trajectory CSV")
    m.add_argument("--svg", type=Path, help="density plot")
    return p


def _load(args) -> Scenario:
    if args.scenario == "example":
        from .scenario import bundled_example

        sc = bundled_example()
    else:
        path = Path(args.scenario)
        if not path.exists():
            raise ScenarioError("<file>", f"{path} does not exist")
        sc = Scenario.load(path)
    changes = {}
    for key in ("storage", "cyber", "physical"):
        val = getattr(args, key)
        if val is not None:
            changes[key] = val
    if args.control:
        ctrl = dict(sc.data.get("control", {}))
        ctrl["kind"] = args.control
        changes["control"] = ctrl
    for key in ("dt", "horizon", "grid", "tol", "seeds"):
        val = getattr(args, key)
        if val is not None:
            changes[key] = val
            if key == "grid":
                changes["prop1_grid"] = val
    return sc.with_options(**changes) if changes else sc


def _write(path: Path | None, text: str):
    if path is None:
        _sys.stdout.write(text)
    else:
        path.write_text(text)


def cmd_analyze(args):
    sc = _load(args)
    rep = analyze(sc, simulate=not args.no_sim)
    _sys.stdout.write(rep.text())
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "summary.csv").write_text(to_csv(["key", "value"], rep.summary_rows()))
        (args.out / "box.csv").write_text(to_csv(["link", "lower", "upper"], rep.box_rows()))
        (args.out / "capacity.csv").write_text(to_csv(["kind", "mode", "capacity", "cut"], rep.capacity.to_rows()))
        (args.out / "certificate.csv").write_text(
            to_csv(["link", "mode", "z", "b", "a", "eta"], rep.certificate_rows())
        )
        (args.out / "report.txt").write_text(rep.text())


def cmd_synthesize(args):
    sc = _load(args)
    sys = sc.build()
    pairs = [f"{i + 1}->{j + 1}" for i, j in sys.net.pairs]
    if args.kind == "md":
        tab = synthesize_mode_dependent(sys).table
        labels = sys.modes.labels or tuple(str(s + 1) for s in range(sys.modes.m))
        rows = [[s + 1, labels[s]] + [f"{v:.6g}" for v in tab[s]] for s in range(sys.modes.m)]
        text = to_csv(["mode", "label"] + pairs, rows)
    elif args.kind == "ol":
        vals = synthesize_open_loop(sys).values
        text = to_csv(pairs, [[f"{v:.6g}" for v in vals]])
    else:
        law = example_density_dependent(sys)
        rows = []
        for (k, j), links in sorted(law.terms.items()):
            rows.append([f"{k + 1}->{j + 1}", " ".join(str(l + 1) for l in links) or "closed",
                         " ".join(f"{law.jam[l]:.6g}" for l in links)])
        text = to_csv(["pair", "limiting_links", "jam_densities"], rows)
    _write(args.out, text)


def cmd_table(args):
    sc = _load(args)
    rows = default_matrix() if args.matrix is None else json.loads(args.matrix.read_text())
    if not isinstance(rows, list):
        raise ScenarioError("matrix", "must be a JSON list")
    for i, r in enumerate(rows):
        if not isinstance(r, dict) or r.get("storage") not in ("finite", "infinite"):
            raise ScenarioError(f"matrix[{i}]", "needs storage 'finite' or 'infinite'")
        for key in ("cyber", "physical"):
            if not isinstance(r.get(key), bool):
                raise ScenarioError(f"matrix[{i}].{key}", "must be true or false")
    if rows:
        header, body = comparison_table(sc, rows, simulate=not args.no_sim)
    else:
        header, body = table_header(), []
    text = aligned(header, body)
    _sys.stdout.write(text)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "table.csv").write_text(to_csv(header, body))
        (args.out / "table.txt").write_text(text)


def cmd_simulate(args):
    sc = _load(args)
    sys = sc.build()
    law = sc.control(sys)
    opts = sc.analysis
    tr = simulate(sys, law, args.alpha, horizon=float(opts["horizon"]), dt=float(opts["dt"]), seed=args.seed)
    _sys.stdout.write(
        f"t={tr.times[-1]:.4g} final x={np.round(tr.states[-1], 4).tolist()} "
        f"running avg={tr.running_avg[-1]:.4g} mass error={tr.mass_error:.2e}\n"
    )
    if args.out:
        tr.to_csv(args.out)
    if args.svg:
        tr.to_svg(args.svg)


COMMANDS = {"analyze": cmd_analyze, "synthesize": cmd_synthesize, "table": cmd_table, "simulate": cmd_simulate}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        COMMANDS[args.cmd](args)
    except ScenarioError as e:
        _sys.stderr.write(f"invalid input: {e}\n")
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001 - reported as a runtime failure
        _sys.stderr.write(f"error: {type(e).__name__}: {e}\n")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())

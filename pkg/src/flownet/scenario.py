"""JSON scenario files: network, flows, disruptions, control and options.

A scenario is a plain dict with these keys (link labels are 1-based)::

    {
      "name": "example7",
      "storage": "finite" | "infinite",      # links 2..K; link 1 is always infinite
      "links": [{"family": "ctm", "F": 1.0, "v": 1.0, "w": 1.0, "xc": 1.0}, ...],
      "edges": [[1, 2], [1, 5], ...],
      "disruptions": [
        {"name": "cyber", "enabled": true, "rate_on": 1.0, "rate_off": 1.0,
         "sensor": {"5": {"kind": "dos"}}},
        {"name": "physical", "enabled": true, "rate_on": 1.0, "rate_off": 1.0,
         "send_cap": {"6": 0.0}}
      ],
      "control": {"kind": "logit", "nu": 2.0, "priority": {"6": [4, 5], "7": [3, 6]}},
      "analysis": {"alpha": 0.5, "dt": 0.05, "horizon": 2000, "grid": 9,
                   "prop1_grid": 9, "tol": 1e-3, "seeds": 10}
    }

Enabled disruptions combine as independent two-state processes; with ``k``
of them enabled there are ``2**k`` modes, mode 1 being fully nominal and the
first listed disruption varying slowest.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .controls import (
    LogitRouting,
    MaxPressure,
    OpenLoop,
    PriorityMerge,
    RampMeter,
    example_density_dependent,
    synthesize_mode_dependent,
    synthesize_open_loop,
)
from .dynamics import System
from .flow import FlowFunction, FlowTable
from .modes import ModeSystem, independent_disruptions
from .network import build_network

DEFAULT_ANALYSIS = {
    "alpha": None,
    "dt": 0.05,
    "horizon": 2000.0,
    "grid": 9,
    "prop1_grid": 9,
    "tol": 1e-3,
    "sim_tol": 1e-2,
    "seeds": 10,
}

CONTROL_KINDS = ("logit", "priority", "ramp", "maxpressure", "md", "ol", "dd", "constant")


class ScenarioError(ValueError):
    """Validation failure; ``field`` locates the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _link(label, K, field):
    try:
        k = int(label)
    except (TypeError, ValueError):
        raise ScenarioError(field, f"link label {label!r} is not an integer") from None
    if not 1 <= k <= K:
        raise ScenarioError(field, f"link {k} outside 1..{K}")
    return k - 1


def _num(d, key, field, default=None, positive=False):
    v = d.get(key, default)
    if v is None:
        raise ScenarioError(f"{field}.{key}", "missing")
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        v = math.inf
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ScenarioError(f"{field}.{key}", f"expected a number, got {v!r}")
    if positive and not v > 0:
        raise ScenarioError(f"{field}.{key}", "must be positive")
    return float(v)


@dataclass
class Scenario:
    data: dict

    # -- serialisation -----------------------------------------------------
    @classmethod
    def loads(cls, text: str) -> "Scenario":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"line {e.lineno}", e.msg) from None
        sc = cls(data)
        sc.validate()
        return sc

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.loads(Path(path).read_text())

    def dumps(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def with_options(self, **changes) -> "Scenario":
        data = copy.deepcopy(self.data)
        for key, val in changes.items():
            if key in ("storage",):
                data[key] = val
            elif key in ("cyber", "physical"):
                for d in data.get("disruptions", []):
                    if d.get("name") == key:
                        d["enabled"] = bool(val)
            elif key == "control":
                data["control"] = val
            else:
                data.setdefault("analysis", {})[key] = val
        sc = Scenario(data)
        sc.validate()
        return sc

    # -- accessors -----------------------------------------------------------
    @property
    def name(self) -> str:
        return self.data.get("name", "scenario")

    @property
    def K(self) -> int:
        return len(self.data["links"])

    @property
    def analysis(self) -> dict:
        out = dict(DEFAULT_ANALYSIS)
        out.update(self.data.get("analysis", {}))
        return out

    def flag(self, name: str) -> bool:
        return any(d.get("name") == name and d.get("enabled", True) for d in self.data.get("disruptions", []))

    @property
    def storage(self) -> str:
        return self.data.get("storage", "infinite")

    # -- validation ----------------------------------------------------------
    def validate(self) -> None:
        d = self.data
        if not isinstance(d, dict):
            raise ScenarioError("<root>", "scenario must be a JSON object")
        links = d.get("links")
        if not isinstance(links, list) or not links:
            raise ScenarioError("links", "must be a non-empty list")
        K = len(links)
        for i, spec in enumerate(links):
            f = f"links[{i}]"
            if not isinstance(spec, dict):
                raise ScenarioError(f, "must be an object")
            fam = spec.get("family", "ctm")
            if fam not in ("ctm", "clearing", "exp"):
                raise ScenarioError(f"{f}.family", f"unknown family {fam!r}")
            _num(spec, "F", f)
            if spec.get("storage", None) not in (None, "finite", "infinite"):
                raise ScenarioError(f"{f}.storage", "must be 'finite' or 'infinite'")
        if d.get("storage", "infinite") not in ("finite", "infinite"):
            raise ScenarioError("storage", "must be 'finite' or 'infinite'")
        edges = d.get("edges", [])
        if not isinstance(edges, list):
            raise ScenarioError("edges", "must be a list of [from, to] pairs")
        for i, e in enumerate(edges):
            if not (isinstance(e, list) and len(e) == 2):
                raise ScenarioError(f"edges[{i}]", "must be a [from, to] pair")
            _link(e[0], K, f"edges[{i}]")
            _link(e[1], K, f"edges[{i}]")
        try:
            build_network(K, edges, one_based=True)
        except ValueError as e:
            raise ScenarioError("edges", str(e)) from None
        edge_set = {(int(a) - 1, int(b) - 1) for a, b in edges}
        for i, dis in enumerate(d.get("disruptions", [])):
            f = f"disruptions[{i}]"
            if not isinstance(dis, dict):
                raise ScenarioError(f, "must be an object")
            _num(dis, "rate_on", f, default=1.0, positive=True)
            _num(dis, "rate_off", f, default=1.0, positive=True)
            for key in ("send_cap", "recv_cap"):
                for lab, val in dis.get(key, {}).items():
                    _link(lab, K, f"{f}.{key}")
                    _num({"v": val}, "v", f"{f}.{key}.{lab}")
            for lab, spec in dis.get("sensor", {}).items():
                _link(lab, K, f"{f}.sensor")
                if spec.get("kind") not in ("dos", "bias"):
                    raise ScenarioError(f"{f}.sensor.{lab}", "kind must be 'dos' or 'bias'")
            for j, act in enumerate(dis.get("actuator", [])):
                a = _link(act.get("from"), K, f"{f}.actuator[{j}].from")
                b = _link(act.get("to"), K, f"{f}.actuator[{j}].to")
                if (a, b) not in edge_set:
                    raise ScenarioError(f"{f}.actuator[{j}]", f"no edge {a + 1}->{b + 1}")
        ctrl = d.get("control", {"kind": "logit"})
        kind = ctrl.get("kind")
        if kind not in CONTROL_KINDS:
            raise ScenarioError("control.kind", f"must be one of {CONTROL_KINDS}")
        for lab, order in ctrl.get("priority", {}).items():
            j = _link(lab, K, "control.priority")
            for i in order:
                if (_link(i, K, "control.priority"), j) not in edge_set:
                    raise ScenarioError(f"control.priority.{lab}", f"no edge {i}->{lab}")
        for i, g in enumerate(ctrl.get("ramp", [])):
            a = _link(g.get("from"), K, f"control.ramp[{i}].from")
            b = _link(g.get("to"), K, f"control.ramp[{i}].to")
            if (a, b) not in edge_set:
                raise ScenarioError(f"control.ramp[{i}]", f"no edge {a + 1}->{b + 1}")
        if kind == "constant":
            vals = ctrl.get("values", [])
            if len(vals) != len(edges):
                raise ScenarioError("control.values", "one value per edge (in edge-list order)")
        for key, val in d.get("analysis", {}).items():
            if key not in DEFAULT_ANALYSIS:
                raise ScenarioError(f"analysis.{key}", "unknown option")

    # -- construction --------------------------------------------------------
    def build(self) -> System:
        d = self.data
        K = self.K
        glob_finite = self.storage == "finite"
        funcs = []
        for k, spec in enumerate(d["links"]):
            fam = spec.get("family", "ctm")
            finite = spec.get("storage", "finite" if glob_finite else "infinite") == "finite" and k != 0
            F = float(spec["F"])
            v = float(spec.get("v", 1.0))
            w = float(spec.get("w", 1.0))
            clip = float(spec.get("x_clip", 1e3))
            if fam == "ctm":
                funcs.append(FlowFunction.ctm(F, v=v, w=w, xc=spec.get("xc"), finite=finite, x_clip=clip))
            else:
                xmax = float(spec.get("xmax", math.inf)) if finite else math.inf
                if finite and not math.isfinite(xmax):
                    raise ScenarioError(f"links[{k}].xmax", "finite storage needs xmax for this family")
                funcs.append(
                    FlowFunction(
                        family=fam, F=F, w=w, eps=float(spec.get("eps", 1.0)),
                        rho=float(spec.get("rho", 1.0)), xmax=xmax, x_clip=clip,
                    )
                )
        storage = [f.xmax for f in funcs]
        net = build_network(K, d["edges"], storage, one_based=True)

        active = [x for x in d.get("disruptions", []) if x.get("enabled", True)]
        rates, states = independent_disruptions([(x.get("rate_on", 1.0), x.get("rate_off", 1.0)) for x in active])
        m = len(states)
        send = np.full((m, K), math.inf)
        recv = np.full((m, K), math.inf)
        scale = np.ones((m, K))
        bias = np.zeros((m, K))
        diseng = np.zeros((m, net.n_pairs), dtype=bool)
        offset = np.zeros((m, net.n_pairs))
        any_act = False
        for s, st in enumerate(states):
            for on, dis in zip(st, active):
                if not on:
                    continue
                for lab, val in dis.get("send_cap", {}).items():
                    send[s, int(lab) - 1] = min(send[s, int(lab) - 1], float(val))
                for lab, val in dis.get("recv_cap", {}).items():
                    recv[s, int(lab) - 1] = min(recv[s, int(lab) - 1], float(val))
                for lab, spec in dis.get("sensor", {}).items():
                    k = int(lab) - 1
                    if spec["kind"] == "dos":
                        scale[s, k], bias[s, k] = 0.0, 0.0
                    else:
                        bias[s, k] += float(spec.get("delta", 0.0))
                for act in dis.get("actuator", []):
                    any_act = True
                    p = net.pair_index(int(act["from"]) - 1, int(act["to"]) - 1)
                    if act.get("kind", "disengage") == "disengage":
                        diseng[s, p] = True
                    else:
                        offset[s, p] += float(act.get("delta", 0.0))
        labels = tuple(
            "+".join(dis["name"] for on, dis in zip(st, active) if on) or "nominal" for st in states
        )
        modes = ModeSystem(
            rates=rates, scale=scale, bias=bias,
            disengage=diseng if any_act else None,
            offset=offset if any_act else None,
            labels=labels,
        )
        return System(net, FlowTable(funcs, send, recv), modes)

    def control(self, sys: System):
        ctrl = self.data.get("control", {"kind": "logit"})
        kind = ctrl["kind"]
        nu = float(ctrl.get("nu", 2.0))
        routing = LogitRouting(nu=nu)
        orders = {int(j) - 1: tuple(int(i) - 1 for i in o) for j, o in ctrl.get("priority", {}).items()}
        if kind == "logit":
            return PriorityMerge(orders, routing) if orders else routing
        if kind == "priority":
            return PriorityMerge(orders, routing)
        if kind == "ramp":
            gains = {
                (int(g["from"]) - 1, int(g["to"]) - 1): (float(g["u"]), float(g["kappa"]))
                for g in ctrl.get("ramp", [])
            }
            ramp = RampMeter(gains, routing)
            return PriorityMerge(orders, ramp) if orders else ramp
        if kind == "maxpressure":
            return MaxPressure(routing)
        if kind == "md":
            return synthesize_mode_dependent(sys)
        if kind == "ol":
            return synthesize_open_loop(sys)
        if kind == "dd":
            return example_density_dependent(sys)
        # constant: values follow the scenario's edge-list order
        vals = np.zeros(sys.P)
        for (a, b), val in zip(self.data["edges"], ctrl["values"]):
            vals[sys.net.pair_index(int(a) - 1, int(b) - 1)] = float(val)
        return OpenLoop(vals)


def bundled_example() -> Scenario:
    text = resources.files("flownet").joinpath("data/example7.scenario").read_text()
    return Scenario.loads(text)


def example_scenario(storage="infinite", cyber=True, physical=True, control="logit") -> Scenario:
    sc = bundled_example()
    ctrl = copy.deepcopy(sc.data["control"])
    ctrl["kind"] = control
    return sc.with_options(storage=storage, cyber=cyber, physical=physical, control=ctrl)


def example_system(storage="infinite", cyber=True, physical=True) -> System:
    return example_scenario(storage, cyber, physical).build()

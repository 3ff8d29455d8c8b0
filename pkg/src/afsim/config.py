"""Scenario files: JSON documents describing one dumbbell experiment.

Every key is checked against the schema below. Unknown keys are errors;
missing keys take the documented default and are listed in the validation
report. All rates are bits/s and all durations seconds.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .aqm import RedParams
from .conditioner import KINDS
from .core import FlowSpec, Transport

SCHEMA_VERSION = 1

DEFAULTS: dict[str, Any] = {
    "seed": 1,
    "as_capacity": None,  # -> bottleneck.rate
    "metrics_tick": 1.0,
    "feedback_interval": 0.1,
    "access_rate": 100e6,
    "bottleneck": {"delay": 0.005},
    "conditioner": {"kind": "token_bucket", "aggregate": False, "params": {}},
    "aqm": {
        "in": {"min_th": 40, "max_th": 70, "max_p": 0.02},
        "out": {"min_th": 10, "max_th": 30, "max_p": 0.20},
        "wq": 0.002,
        "capacity": 100,
        "ecn": True,
        "penalty_coupling": False,
        "random_red_drop": 0.0,
    },
    "tcp": {
        "rwnd": 64,
        "rto_min": 0.2,
        "rto_init": 1.0,
        "delayed_ack": False,
        "ecn_reaction": True,
    },
}

FLOW_DEFAULTS: dict[str, Any] = {
    "transport": "tcp_reno",
    "target_rate": 0.0,
    "peak_rate": None,  # -> 2 * target_rate
    "access_delay": 0.01,
    "packet_size": 1500,
    "start_time": 0.0,
    "cbr_rate": 0.0,
}

COMMON_PARAMS = {"target_scale": 1.0, "depth_packets": 10}
KIND_PARAMS: dict[str, dict[str, Any]] = {
    "none": {},
    "token_bucket": {},
    "trtcm": {"pbs_packets": 10},
    "tsw3cm": {"window": 1.0},
    "memory": {"window": 1.0, "gain": 0.1, "w_min": 0.5, "w_max": 2.0},
    "yeom": {"window": 4.0, "gain": 0.25, "epoch": 1.0},
    "equation": {"epoch": 1.0, "wmax": None, "b_ack": None},
    "park_choi": {"beta": 0.5, "f_lo": 0.02, "f_hi": 0.10},
    "penalty": {"window": 1.0, "increase_step": 0.010, "decrease_slope": 0.002},
    "mellia": {"protect": 8},
}
AGGREGATE_KINDS = {"none", "token_bucket", "trtcm", "tsw3cm", "memory"}


class ConfigError(ValueError):
    """A scenario failed to parse or validate; the message names the key."""


@dataclass
class ConditionerConfig:
    kind: str
    params: dict[str, Any]


@dataclass
class ScenarioConfig:
    duration: float
    seed: int
    bottleneck_rate: float
    bottleneck_delay: float
    as_capacity: float
    access_rate: float
    metrics_tick: float
    feedback_interval: float
    flows: list[FlowSpec]
    conditioner: ConditionerConfig
    flow_conditioners: dict[int, ConditionerConfig]
    aggregate: bool
    aqm: dict[str, Any]
    tcp: dict[str, Any]
    resolved: dict[str, Any] = field(repr=False, default_factory=dict)
    defaulted: list[str] = field(default_factory=list)

    def conditioner_for(self, flow_id: int) -> ConditionerConfig:
        return self.flow_conditioners.get(flow_id, self.conditioner)

    @property
    def in_params(self) -> RedParams:
        return RedParams(wq=self.aqm["wq"], **self.aqm["in"])

    @property
    def out_params(self) -> RedParams:
        return RedParams(wq=self.aqm["wq"], **self.aqm["out"])


def _merge(raw: Any, defaults: dict, path: str, defaulted: list[str]) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    out = {}
    for key in raw:
        if key not in defaults:
            raise ConfigError(f"unknown key: {path}{key}")
    for key, default in defaults.items():
        if key in raw:
            if isinstance(default, dict) and key != "params":
                out[key] = _merge(raw[key], default, f"{path}{key}.", defaulted)
            else:
                out[key] = copy.deepcopy(raw[key])
        else:
            out[key] = copy.deepcopy(default)
            defaulted.append(f"{path}{key}")
    return out


def _number(value: Any, key: str, *, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{key}: must be finite")
    if positive and value <= 0:
        raise ConfigError(f"{key}: must be > 0, got {value}")
    if nonneg and value < 0:
        raise ConfigError(f"{key}: must be >= 0, got {value}")
    return value


def _conditioner(raw: Any, path: str, defaulted: list[str]) -> ConditionerConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    kind = raw.get("kind", "token_bucket")
    if kind not in KINDS:
        raise ConfigError(f"{path}.kind: unknown conditioner kind {kind!r} (expected one of {', '.join(KINDS)})")
    schema = {**COMMON_PARAMS, **KIND_PARAMS[kind]}
    params = _merge(raw.get("params", {}), schema, f"{path}.params.", defaulted)
    for key in ("target_scale",):
        _number(params[key], f"{path}.params.{key}", nonneg=True)
    _number(params["depth_packets"], f"{path}.params.depth_packets", nonneg=True)
    return ConditionerConfig(kind, params)


def validate(doc: dict) -> ScenarioConfig:
    """Validate a parsed scenario document and apply defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected an object")
    if doc.get("v") != SCHEMA_VERSION:
        raise ConfigError(f"v: schema version must be {SCHEMA_VERSION}, got {doc.get('v')!r}")
    for required in ("duration", "bottleneck", "flows"):
        if required not in doc:
            raise ConfigError(f"{required}: required key missing")
    defaulted: list[str] = []
    top_defaults = {"v": SCHEMA_VERSION, "duration": None, "flows": None, **DEFAULTS,
                    "bottleneck": {"rate": None, **DEFAULTS["bottleneck"]}}
    resolved = _merge(doc, top_defaults, "", defaulted)

    duration = _number(resolved["duration"], "duration", positive=True)
    seed = resolved["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed: expected an integer, got {seed!r}")
    if resolved["bottleneck"]["rate"] is None:
        raise ConfigError("bottleneck.rate: required key missing")
    rate = _number(resolved["bottleneck"]["rate"], "bottleneck.rate", positive=True)
    delay = _number(resolved["bottleneck"]["delay"], "bottleneck.delay", nonneg=True)
    if resolved["as_capacity"] is None:
        resolved["as_capacity"] = rate
    as_capacity = _number(resolved["as_capacity"], "as_capacity", positive=True)
    tick = _number(resolved["metrics_tick"], "metrics_tick", positive=True)
    fb = _number(resolved["feedback_interval"], "feedback_interval", positive=True)
    access_rate = _number(resolved["access_rate"], "access_rate", positive=True)

    raw_flows = resolved["flows"]
    if not isinstance(raw_flows, list) or not raw_flows:
        raise ConfigError("flows: need at least one flow")
    flows: list[FlowSpec] = []
    flow_conditioners: dict[int, ConditionerConfig] = {}
    resolved_flows = []
    for i, raw in enumerate(raw_flows):
        path = f"flows.{i}."
        fdefaults = {"flow_id": i, **FLOW_DEFAULTS}
        if isinstance(raw, dict) and "conditioner" in raw:
            fdefaults["conditioner"] = None
        f = _merge(raw, fdefaults, path, defaulted)
        try:
            transport = Transport(f["transport"])
        except ValueError:
            raise ConfigError(f"{path}transport: unknown transport {f['transport']!r}") from None
        for key in ("target_rate", "access_delay", "start_time", "cbr_rate"):
            _number(f[key], path + key, nonneg=True)
        if f["peak_rate"] is None:
            f["peak_rate"] = 2.0 * f["target_rate"]
        _number(f["peak_rate"], path + "peak_rate", nonneg=True)
        if not isinstance(f["packet_size"], int) or f["packet_size"] <= 0:
            raise ConfigError(f"{path}packet_size: must be a positive integer")
        if f["peak_rate"] < f["target_rate"]:
            raise ConfigError(
                f"{path}peak_rate: flow {f['flow_id']} has peak_rate {f['peak_rate']} < target_rate {f['target_rate']}")
        if transport is Transport.UDP_CBR and f["cbr_rate"] <= 0:
            raise ConfigError(f"{path}cbr_rate: UDP CBR flow needs cbr_rate > 0")
        spec = FlowSpec(flow_id=f["flow_id"], transport=transport, target_rate=float(f["target_rate"]),
                        peak_rate=float(f["peak_rate"]), access_delay=float(f["access_delay"]),
                        packet_size=f["packet_size"], start_time=float(f["start_time"]),
                        cbr_rate=float(f["cbr_rate"]))
        if spec.flow_id in {x.flow_id for x in flows}:
            raise ConfigError(f"{path}flow_id: duplicate flow id {spec.flow_id}")
        if "conditioner" in f:
            cc = _conditioner(f["conditioner"], f"{path}conditioner", defaulted)
            flow_conditioners[spec.flow_id] = cc
            f["conditioner"] = {"kind": cc.kind, "params": cc.params}
        flows.append(spec)
        resolved_flows.append(f)
    resolved["flows"] = resolved_flows

    cond = resolved["conditioner"]
    gc = _conditioner({"kind": cond["kind"], "params": cond["params"]}, "conditioner", defaulted)
    cond["params"] = gc.params
    aggregate = cond["aggregate"]
    if not isinstance(aggregate, bool):
        raise ConfigError("conditioner.aggregate: expected a boolean")
    if aggregate and (gc.kind not in AGGREGATE_KINDS or flow_conditioners):
        raise ConfigError(
            f"conditioner.aggregate: supported only for {sorted(AGGREGATE_KINDS)} without per-flow overrides")

    aqm = resolved["aqm"]
    for side in ("in", "out"):
        for key in ("min_th", "max_th", "max_p"):
            _number(aqm[side][key], f"aqm.{side}.{key}", nonneg=True)
    _number(aqm["wq"], "aqm.wq", positive=True)
    try:
        in_p = RedParams(wq=aqm["wq"], **aqm["in"])
        out_p = RedParams(wq=aqm["wq"], **aqm["out"])
    except ValueError as exc:
        raise ConfigError(f"aqm: {exc}") from None
    if out_p.min_th > in_p.min_th or out_p.max_th > in_p.max_th:
        raise ConfigError("aqm.out: thresholds must not exceed aqm.in thresholds")
    if not isinstance(aqm["capacity"], int) or aqm["capacity"] < 1:
        raise ConfigError("aqm.capacity: must be a positive integer")
    for key in ("ecn", "penalty_coupling"):
        if not isinstance(aqm[key], bool):
            raise ConfigError(f"aqm.{key}: expected a boolean")
    p = _number(aqm["random_red_drop"], "aqm.random_red_drop", nonneg=True)
    if p > 1:
        raise ConfigError("aqm.random_red_drop: must be <= 1")

    tcp = resolved["tcp"]
    if not isinstance(tcp["rwnd"], int) or tcp["rwnd"] < 1:
        raise ConfigError("tcp.rwnd: must be a positive integer")
    _number(tcp["rto_min"], "tcp.rto_min", positive=True)
    _number(tcp["rto_init"], "tcp.rto_init", positive=True)
    for key in ("delayed_ack", "ecn_reaction"):
        if not isinstance(tcp[key], bool):
            raise ConfigError(f"tcp.{key}: expected a boolean")

    return ScenarioConfig(
        duration=duration, seed=seed, bottleneck_rate=rate, bottleneck_delay=delay,
        as_capacity=as_capacity, access_rate=access_rate, metrics_tick=tick,
        feedback_interval=fb, flows=flows, conditioner=gc, flow_conditioners=flow_conditioners,
        aggregate=aggregate, aqm=aqm, tcp=tcp, resolved=resolved, defaulted=defaulted)


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return validate(doc)


# Dotted-path access used by sweeps: "aqm.in.min_th", "flows.2.access_delay",
# "flows.*.target_rate".


def _split(key: str) -> list[str]:
    parts = key.split(".")
    if not key or any(not p for p in parts):
        raise ConfigError(f"bad key path {key!r}")
    return parts


def set_path(doc: dict, key: str, value: Any) -> None:
    """Set ``key`` in a raw scenario document; '*' fans out over a list."""
    parts = _split(key)

    def walk(node: Any, i: int, trail: str) -> None:
        part = parts[i]
        last = i == len(parts) - 1
        if isinstance(node, list):
            if part == "*":
                targets = range(len(node))
            elif part.isdigit() and int(part) < len(node):
                targets = [int(part)]
            else:
                raise ConfigError(f"unknown key: {key} (no list element {trail}{part})")
            for j in targets:
                if last:
                    node[j] = value
                else:
                    walk(node[j], i + 1, f"{trail}{j}.")
            return
        if not isinstance(node, dict):
            raise ConfigError(f"unknown key: {key}")
        if last:
            node[part] = value
            return
        if part not in node:
            node[part] = {}
        walk(node[part], i + 1, f"{trail}{part}.")

    walk(doc, 0, "")

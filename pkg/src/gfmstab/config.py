"""Strict JSON scenario files.

Layout::

    {
      "plant":    {"per_unit": {...}} | {"nameplate": {...}},
      "control":  {"law": "droop" | "droop-i", ...},
      "ad":       {"kind": ..., "gain": ..., "time_const": ...},      optional
      "analysis": {...},                                            optional
      "sweep":    {"parameter": "control.k_iq", "values": [...],
                   "output": "poles" | "verdict"}                   optional
    }

Unknown keys are rejected. Every error names the offending field path.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidInput
from .loops import AdController, AdKind
from .plant import ControlLaw, ControlParams, PlantParams, to_per_unit
from .simulator import SIGNAL_NAMES, EventStep


class ConfigError(InvalidInput):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}" if path else msg)
        self.path = path
        self.msg = msg


_NUM = "number"
_OPT_NUM = "number|null"

PER_UNIT_KEYS = {"S_n": _NUM, "V_n": _NUM, "f_n": _NUM, "L_f": _NUM, "C_f": _NUM, "L_g": _NUM,
                 "R_f": _NUM, "R_g": _OPT_NUM, "x_over_r": _OPT_NUM, "V_g": _NUM,
                 "omega_g": _NUM}
NAMEPLATE_KEYS = {"S_n": _NUM, "V_n": _NUM, "f_n": _NUM, "L_f": _NUM, "C_f": _NUM, "L_g": _NUM,
                  "x_over_r": _OPT_NUM, "R_f": _NUM, "V_g": _NUM, "omega_g": _NUM}
NAMEPLATE_REQUIRED = ("S_n", "V_n", "f_n", "L_f", "C_f", "L_g")
CONTROL_KEYS = {"law": "string", "H": _NUM, "D_p": _NUM, "D_q": _NUM, "T_q": _NUM, "k_pq": _NUM,
                "k_iq": _NUM, "P_st": _NUM, "Q_st": _NUM, "V_st": _NUM, "omega_st": _NUM}
AD_KEYS = {"kind": "string", "gain": _NUM, "time_const": _NUM}
ANALYSIS_KEYS = {"omega_min": _NUM, "omega_max": _OPT_NUM, "pts": "integer",
                 "lossless_routh": "boolean", "t_end": _NUM, "dt": _NUM,
                 "record_every": "integer", "record": "list", "events": "list", "fft": "object"}
FFT_KEYS = {"signal": "string", "window": "list|null", "t_start": _OPT_NUM, "f_min": _NUM,
            "max_dev": _NUM}
EVENT_KEYS = {"t": _NUM, "target": "string", "value": _NUM}
SWEEP_KEYS = {"parameter": "string", "values": "list", "output": "string"}


def _is(kind: str, v) -> bool:
    for k in kind.split("|"):
        if k == "null" and v is None:
            return True
        if k == _NUM and isinstance(v, (int, float)) and not isinstance(v, bool):
            return math.isfinite(v)
        if k == "integer" and isinstance(v, int) and not isinstance(v, bool):
            return True
        if k == "string" and isinstance(v, str):
            return True
        if k == "boolean" and isinstance(v, bool):
            return True
        if k == "list" and isinstance(v, list):
            return True
        if k == "object" and isinstance(v, dict):
            return True
    return False


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _check(block, spec: dict, path: str, required=()) -> dict:
    if not isinstance(block, dict):
        raise ConfigError(path, "expected an object")
    for key, val in block.items():
        if key not in spec:
            raise ConfigError(_join(path, key), "unknown key")
        if not _is(spec[key], val):
            raise ConfigError(_join(path, key), f"expected {spec[key]}, got {val!r}")
    for key in required:
        if key not in block:
            raise ConfigError(_join(path, key), "missing required key")
    return block


@dataclass(frozen=True)
class FftOptions:
    signal: str = "q"
    window: tuple | None = None
    t_start: float | None = None
    f_min: float = 0.0
    max_dev: float = 0.05


@dataclass(frozen=True)
class AnalysisOptions:
    omega_min: float = 1.0
    omega_max: float | None = None
    pts: int = 2000
    lossless_routh: bool = False
    t_end: float = 1.0
    dt: float = 5e-6
    record_every: int = 4
    record: tuple = ("p", "q", "V", "omega", "delta")
    events: tuple = ()
    fft: FftOptions = field(default_factory=FftOptions)


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    output: str = "poles"


SWEEPABLE_PLANT = ("L_f", "C_f", "L_g", "R_f", "x_over_r", "V_g", "omega_g")


@dataclass(frozen=True)
class ScenarioConfig:
    plant: PlantParams
    control: ControlParams
    ad: AdController | None = None
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)
    sweep: SweepSpec | None = None
    given_control: frozenset = frozenset()

    def with_law(self, law) -> "ScenarioConfig":
        """Switch control law, re-checking that its gain was given explicitly."""
        law = ControlLaw.parse(law)
        _require_law_gain(law, self.given_control, "control")
        try:
            return dataclasses.replace(self, control=self.control.replace(law=law))
        except InvalidInput as exc:
            raise ConfigError("control", str(exc)) from exc

    def with_ad(self, kind) -> "ScenarioConfig":
        """``none`` drops AD; a kind keeps configured values of that kind, else the design example."""
        if kind is None or str(kind).lower() == "none":
            return dataclasses.replace(self, ad=None)
        kind = AdKind.parse(kind)
        if self.ad is not None and self.ad.kind is kind:
            return self
        return dataclasses.replace(self, ad=AdController.design_example(kind))

    def with_parameter(self, path: str, value: float) -> "ScenarioConfig":
        group, _, name = path.partition(".")
        try:
            if group == "control" and name in CONTROL_KEYS and name != "law":
                return dataclasses.replace(self, control=self.control.replace(**{name: value}))
            if group == "plant" and name in SWEEPABLE_PLANT:
                return dataclasses.replace(self, plant=self.plant.replace(**{name: value}))
            if group == "ad" and name in ("gain", "time_const"):
                if self.ad is None:
                    raise ConfigError(path, "no AD block to modify")
                return dataclasses.replace(self, ad=self.ad.replace(**{name: value}))
        except InvalidInput as exc:
            raise ConfigError(path, f"value {value!r}: {exc}") from exc
        raise ConfigError(path, "not a sweepable parameter")


def _require_law_gain(law: ControlLaw, given, path):
    need = "T_q" if law is ControlLaw.DROOP else "k_iq"
    if need not in given:
        raise ConfigError(f"{path}.{need}", f"required under law={law.value}")


def _plant(block) -> PlantParams:
    _check(block, {"per_unit": "object", "nameplate": "object"}, "plant")
    if len(block) != 1:
        raise ConfigError("plant", "exactly one of 'per_unit' or 'nameplate' is required")
    try:
        if "per_unit" in block:
            pu = _check(block["per_unit"], PER_UNIT_KEYS, "plant.per_unit")
            if pu.get("R_g") is not None and "x_over_r" not in pu:
                pu = dict(pu, x_over_r=None)
            return PlantParams(**pu)
        npl = _check(block["nameplate"], NAMEPLATE_KEYS, "plant.nameplate", NAMEPLATE_REQUIRED)
        return to_per_unit(**npl)
    except ConfigError:
        raise
    except InvalidInput as exc:
        raise ConfigError("plant", str(exc)) from exc


def _events(items) -> tuple:
    out = []
    for i, ev in enumerate(items):
        p = f"analysis.events[{i}]"
        _check(ev, EVENT_KEYS, p, ("t", "target", "value"))
        try:
            out.append(EventStep(float(ev["t"]), ev["target"], float(ev["value"])))
        except InvalidInput as exc:
            raise ConfigError(p, str(exc)) from exc
    return tuple(out)


def _analysis(block) -> AnalysisOptions:
    _check(block, ANALYSIS_KEYS, "analysis")
    kw = {k: v for k, v in block.items() if k not in ("record", "events", "fft")}
    if "record" in block:
        for i, name in enumerate(block["record"]):
            if name not in SIGNAL_NAMES:
                raise ConfigError(f"analysis.record[{i}]", f"unknown signal {name!r}")
        kw["record"] = tuple(block["record"])
    if "events" in block:
        kw["events"] = _events(block["events"])
    if "fft" in block:
        f = _check(block["fft"], FFT_KEYS, "analysis.fft")
        if f.get("window") is not None:
            w = f["window"]
            if len(w) != 2 or not all(_is(_NUM, x) for x in w) or w[1] <= w[0]:
                raise ConfigError("analysis.fft.window", "expected [t_start, t_end] with t_end > t_start")
            f = dict(f, window=tuple(float(x) for x in w))
        kw["fft"] = FftOptions(**f)
    for key in ("pts", "record_every"):
        if key in kw and kw[key] < 1:
            raise ConfigError(f"analysis.{key}", "must be >= 1")
    for key in ("t_end", "dt", "omega_min"):
        if key in kw and kw[key] <= 0:
            raise ConfigError(f"analysis.{key}", "must be positive")
    return AnalysisOptions(**kw)


def parse_config(data: dict) -> ScenarioConfig:
    _check(data, {"plant": "object", "control": "object", "ad": "object|null",
                  "analysis": "object", "sweep": "object|null"}, "", ("plant", "control"))
    plant = _plant(data["plant"])
    ctrl = _check(data["control"], CONTROL_KEYS, "control", ("law",))
    try:
        law = ControlLaw.parse(ctrl["law"])
    except InvalidInput as exc:
        raise ConfigError("control.law", str(exc)) from exc
    _require_law_gain(law, ctrl, "control")
    try:
        control = ControlParams(**ctrl)
    except InvalidInput as exc:
        raise ConfigError("control", str(exc)) from exc
    ad = None
    if data.get("ad") is not None:
        a = _check(data["ad"], AD_KEYS, "ad", ("kind",))
        try:
            kind = AdKind.parse(a["kind"])
            gain, tc = AdController.design_example(kind).gain, AdController.design_example(kind).time_const
            ad = AdController(kind, a.get("gain", gain), a.get("time_const", tc))
        except InvalidInput as exc:
            raise ConfigError("ad", str(exc)) from exc
    analysis = _analysis(data.get("analysis", {}))
    sweep = None
    if data.get("sweep") is not None:
        s = _check(data["sweep"], SWEEP_KEYS, "sweep", ("parameter", "values"))
        if not s["values"]:
            raise ConfigError("sweep.values", "must not be empty")
        for i, v in enumerate(s["values"]):
            if not _is(_NUM, v):
                raise ConfigError(f"sweep.values[{i}]", f"expected number, got {v!r}")
        if s.get("output", "poles") not in ("poles", "verdict"):
            raise ConfigError("sweep.output", "expected 'poles' or 'verdict'")
        sweep = SweepSpec(s["parameter"], tuple(float(v) for v in s["values"]),
                          s.get("output", "poles"))
    cfg = ScenarioConfig(plant=plant, control=control, ad=ad, analysis=analysis, sweep=sweep,
                         given_control=frozenset(ctrl))
    if sweep is not None:
        cfg.with_parameter(sweep.parameter, sweep.values[0])
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from exc
    try:
        return parse_config(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc.path}" if exc.path else str(path), exc.msg) from exc

"""Scenario files: TOML with a fixed schema, documented defaults, no unknown keys.

Durations are written either as integers (femtoseconds) or as strings with
a unit: ``"40 ns"``, ``"4444 fs"``, ``"4.5 ps"``. A jitter table has
``kind`` (``none``/``uniform``/``gaussian``) plus ``half_width`` or
``sigma``/``clamp``. See ``DEFAULTS`` for every key.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .calibration import DESK_PULSE_COUNT, ProbeConfig
from .errors import ConfigurationError, SyncTrigError
from .metastability import DelayChain, MetastabilityModel
from .timebase import ClockDomain, JitterSpec, RngHandle, parse_duration
from .topology import Topology, build_star_topology, clock_domains
from .trigger import QubitStateModel, TriggerConfig


class ScenarioError(ConfigurationError):
    """Scenario file could not be parsed or failed validation."""


_NONE_JITTER = {"kind": "none"}

DEFAULTS: dict[str, Any] = {
    "seed": 1,
    "topology": {
        "n_slaves": 10,
        "fanout_width": 28,
        "trigger_delay": "1 ns",
        "trigger_delays": None,
        "clock_delay": "0 fs",
        "fanout_delay": "0 fs",
        "clock_period": "4 ns",
        "trigger_jitter": _NONE_JITTER,
        "clock_jitter": _NONE_JITTER,
    },
    "metastability": {
        "window_width": "90 ps",
        "resolve_probability": 0.5,
        "profile": "hard_window",
    },
    "delay_chain": {
        "elements": 4,
        "taps_per_element": 512,
        "tap_step": "4444 fs",
        "element_max_delay": None,
    },
    "probe": {
        "pulse_count": DESK_PULSE_COUNT,
        "interval": "40 ns",
    },
    "trigger": {
        "output_delay": "0 fs",
        "pulse_width": "20 ns",
        "level1_interval": "400 ns",
        "level1_count": 2,
        "level2_interval": "1 us",
        "level2_count": 10,
        "output_jitter": {"kind": "gaussian", "sigma": "5 ps", "clamp": "25 ps"},
    },
    "qubits": {
        "excited_probability": 0.5,
    },
}

_DURATION_KEYS = {
    "trigger_delay", "clock_delay", "fanout_delay", "clock_period", "window_width",
    "tap_step", "element_max_delay", "interval", "output_delay", "pulse_width",
    "level1_interval", "level2_interval", "half_width", "sigma", "clamp",
}
_INT_KEYS = {"seed", "n_slaves", "fanout_width", "elements", "taps_per_element",
             "pulse_count", "level1_count", "level2_count"}
_FLOAT_KEYS = {"resolve_probability", "excited_probability"}
_JITTER_KEYS = {"trigger_jitter", "clock_jitter", "output_jitter"}


@dataclass(frozen=True)
class TopologySpec:
    n_slaves: int = 10
    fanout_width: int = 28
    trigger_delay: int = 1_000_000
    trigger_delays: tuple[int, ...] | None = None
    clock_delay: int = 0
    fanout_delay: int = 0
    clock_period: int = 4_000_000
    trigger_jitter: JitterSpec = field(default_factory=JitterSpec)
    clock_jitter: JitterSpec = field(default_factory=JitterSpec)

    def build(self) -> Topology:
        delays = list(self.trigger_delays) if self.trigger_delays is not None else self.trigger_delay
        return build_star_topology(
            self.n_slaves, self.fanout_width, delays, self.trigger_jitter,
            clock_delay=self.clock_delay, clock_jitter=self.clock_jitter,
            fanout_delay=self.fanout_delay,
        )


@dataclass(frozen=True)
class Scenario:
    seed: int = 1
    topology: TopologySpec = field(default_factory=TopologySpec)
    metastability: MetastabilityModel = field(default_factory=MetastabilityModel)
    chain: DelayChain = field(default_factory=DelayChain)
    probe: ProbeConfig = field(default_factory=lambda: ProbeConfig(DESK_PULSE_COUNT))
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    output_jitter: JitterSpec = field(default_factory=lambda: JitterSpec.gaussian(5_000, 25_000))
    qubits: QubitStateModel = field(default_factory=QubitStateModel)

    def rng(self) -> RngHandle:
        return RngHandle(self.seed)

    def build_topology(self) -> Topology:
        return self.topology.build()

    def clocks(self, topo: Topology) -> dict[int, ClockDomain]:
        return clock_domains(topo, self.rng().child("clocks"), self.topology.clock_period)


def _merge(defaults: dict, given: dict, path: str) -> dict:
    if not isinstance(given, dict):
        raise ScenarioError(f"{path or 'scenario'}: expected a table")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ScenarioError(f"unknown key {where!r}")
    out = {}
    for key, default in defaults.items():
        where = f"{path}.{key}" if path else key
        value = given.get(key, default)
        if isinstance(default, dict) and key not in _JITTER_KEYS:
            out[key] = _merge(default, value if key in given else {}, where)
        else:
            out[key] = _convert(key, value, where)
    return out


def _convert(key: str, value: Any, where: str) -> Any:
    if value is None:
        return None
    try:
        if key in _JITTER_KEYS:
            return _jitter(value, where)
        if key == "trigger_delays":
            if not isinstance(value, list):
                raise ScenarioError(f"{where}: expected a list of durations")
            return tuple(parse_duration(v) for v in value)
        if key in _DURATION_KEYS:
            return parse_duration(value)
        if key in _INT_KEYS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ScenarioError(f"{where}: expected an integer, got {value!r}")
            return value
        if key in _FLOAT_KEYS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ScenarioError(f"{where}: expected a number, got {value!r}")
            return float(value)
        if not isinstance(value, str):
            raise ScenarioError(f"{where}: expected a string, got {value!r}")
        return value
    except ScenarioError:
        raise
    except ConfigurationError as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def _jitter(table: Any, where: str) -> JitterSpec:
    if not isinstance(table, dict):
        raise ScenarioError(f"{where}: expected a jitter table")
    allowed = {"kind", "half_width", "sigma", "clamp"}
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ScenarioError(f"unknown key {where}.{unknown[0]!r}")
    kind = table.get("kind", "none")
    args = {k: parse_duration(v) for k, v in table.items() if k != "kind"}
    return JitterSpec(kind=kind, **args)


def scenario_from_dict(raw: dict) -> Scenario:
    cfg = _merge(DEFAULTS, raw, "")
    t, m, d, p, g, q = (cfg[k] for k in
                        ("topology", "metastability", "delay_chain", "probe", "trigger", "qubits"))
    sections = {}
    try:
        sections["topology"] = TopologySpec(**t)
        sections["metastability"] = MetastabilityModel(**m)
        sections["delay_chain"] = DelayChain(**d)
        sections["probe"] = ProbeConfig(**p)
        output_jitter = g.pop("output_jitter")
        sections["trigger"] = TriggerConfig(**g)
        sections["qubits"] = QubitStateModel(**q)
    except ConfigurationError as exc:
        failed = next(k for k in ("topology", "metastability", "delay_chain", "probe", "trigger", "qubits")
                      if k not in sections)
        raise ScenarioError(f"[{failed}]: {exc}") from None
    if not 0 <= cfg["seed"] < 1 << 64:
        raise ScenarioError("seed: must be a 64-bit unsigned integer")
    if sections["probe"].interval % sections["topology"].clock_period:
        raise ScenarioError("probe.interval: must be a whole number of clock periods")
    scenario = Scenario(
        seed=cfg["seed"],
        topology=sections["topology"],
        metastability=sections["metastability"],
        chain=sections["delay_chain"],
        probe=sections["probe"],
        trigger=sections["trigger"],
        output_jitter=output_jitter,
        qubits=sections["qubits"],
    )
    try:
        scenario.build_topology()
    except SyncTrigError as exc:
        raise ScenarioError(f"[topology]: {exc}") from None
    return scenario


def parse_scenario(text: str) -> Scenario:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"syntax error: {exc}") from None
    return scenario_from_dict(raw)


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return parse_scenario(text)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def default_scenario(**overrides) -> Scenario:
    """Defaults table as a :class:`Scenario`; keyword overrides are raw nested dicts."""
    return scenario_from_dict(copy.deepcopy(overrides))

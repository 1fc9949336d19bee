"""Scenario files.

A scenario is a TOML document describing the topology, probing and
controller settings, both endpoints' audio profiles and the latency
injection schedule. ``validate_scenario`` reports every problem it finds;
``load_scenario`` raises on the first file that has any.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .controller import ControllerConfig
from .delay import AudioConfig, DelayModelError, SoundcardProfile
from .netsim import LatencyInjection, Link, Topology, enumerate_paths, topology_violations

PAPER_SCENARIO = "paper.scenario"


class ScenarioError(ValueError):
    def __init__(self, message: str, violations: Optional[list[str]] = None, line: Optional[int] = None) -> None:
        super().__init__(message)
        self.violations = violations or [message]
        self.line = line


@dataclass
class EndpointSpec:
    endpoint_id: str
    d0_ms: float
    configs: list[AudioConfig]

    def profile(self) -> SoundcardProfile:
        return SoundcardProfile(self.endpoint_id, self.d0_ms, tuple(self.configs))


@dataclass
class Scenario:
    topology: Topology
    source: str
    destination: str
    transmitter: EndpointSpec
    receiver: EndpointSpec
    seed: int
    duration_s: float
    stream_start_s: float
    injections: list[LatencyInjection] = field(default_factory=list)
    probe_start_s: float = 0.0
    probe_period_s: float = 1.0
    probe_window: int = 3
    sample_period_s: float = 1.0
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    interaction_enabled: bool = True
    name: str = "scenario"

    def with_overrides(self, seed: Optional[int] = None, interaction_enabled: Optional[bool] = None) -> "Scenario":
        changes: dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = seed
        if interaction_enabled is not None:
            changes["interaction_enabled"] = interaction_enabled
        return replace(self, **changes)


@dataclass
class ValidationReport:
    path: str
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return f"{self.path}: valid"
        return "\n".join([f"{self.path}: {len(self.violations)} violation(s)"] + [f"  - {v}" for v in self.violations])


_LINE_RE = re.compile(r"line (\d+)")


def _number(errors: list[str], where: str, value: Any, *, minimum: Optional[float] = None, positive: bool = False) -> Optional[float]:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        errors.append(f"{where}: expected a number, got {value!r}")
        return None
    if positive and value <= 0:
        errors.append(f"{where}: must be > 0, got {value!r}")
    elif minimum is not None and value < minimum:
        errors.append(f"{where}: must be >= {minimum}, got {value!r}")
    return float(value)


def _get(errors: list[str], table: dict, key: str, where: str, default: Any = ...) -> Any:
    if key in table:
        return table[key]
    if default is ...:
        errors.append(f"{where}: missing required key '{key}'")
        return None
    return default


def _endpoint(errors: list[str], raw: Any, where: str, default_id: str) -> Optional[EndpointSpec]:
    if not isinstance(raw, dict):
        errors.append(f"{where}: missing table")
        return None
    eid = str(raw.get("id", default_id))
    d0 = _number(errors, f"{where}.d0_ms", _get(errors, raw, "d0_ms", where), minimum=0)
    configs = []
    raw_configs = _get(errors, raw, "configs", where)
    if raw_configs is not None and (not isinstance(raw_configs, list) or not raw_configs):
        errors.append(f"{where}.configs: must be a non-empty list")
        raw_configs = None
    for i, c in enumerate(raw_configs or []):
        cw = f"{where}.configs[{i}]"
        if not isinstance(c, dict):
            errors.append(f"{cw}: expected a table")
            continue
        try:
            configs.append(AudioConfig(str(c.get("label", f"cfg{i}")), c.get("frame_size", 0), c.get("sampling_rate", 0)))
        except (DelayModelError, TypeError) as exc:
            errors.append(f"{cw}: {exc}")
    labels = [c.label for c in configs]
    if len(set(labels)) != len(labels):
        errors.append(f"{where}.configs: duplicate labels {labels}")
    if d0 is None:
        return None
    return EndpointSpec(eid, d0, configs)


def scenario_from_dict(raw: dict, name: str = "scenario") -> Scenario:
    errors: list[str] = []
    seed = _get(errors, raw, "seed", "scenario")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        errors.append(f"seed: must be a non-negative integer, got {seed!r}")
    duration = _number(errors, "duration_s", _get(errors, raw, "duration_s", "scenario"), positive=True)
    stream_start = _number(errors, "stream_start_s", _get(errors, raw, "stream_start_s", "scenario"), minimum=0)
    sample_period = _number(errors, "sample_period_s", raw.get("sample_period_s", 1.0), positive=True)
    interaction = raw.get("interaction_enabled", True)
    if not isinstance(interaction, bool):
        errors.append(f"interaction_enabled: expected true/false, got {interaction!r}")

    topo_raw = raw.get("topology")
    topology = None
    source = destination = None
    if not isinstance(topo_raw, dict):
        errors.append("topology: missing table")
    else:
        switches = [str(s) for s in topo_raw.get("switches", [])]
        hosts = [str(h) for h in topo_raw.get("hosts", [])]
        if not switches:
            errors.append("topology.switches: must list at least one switch")
        if len(hosts) < 2:
            errors.append("topology.hosts: must list at least two hosts")
        links = []
        for i, l in enumerate(topo_raw.get("links", [])):
            lw = f"topology.links[{i}]"
            if not isinstance(l, dict) or "a" not in l or "b" not in l:
                errors.append(f"{lw}: needs keys 'a' and 'b'")
                continue
            lat = _number(errors, f"{lw}.latency_ms", l.get("latency_ms", 0.0), minimum=0)
            jit = _number(errors, f"{lw}.jitter_ms", l.get("jitter_ms", 0.0), minimum=0)
            links.append(Link(str(l["a"]), str(l["b"]), lat or 0.0, jit or 0.0))
        switch_delay = {str(k): v for k, v in dict(topo_raw.get("switch_delay_ms", {})).items()}
        topo_errors = topology_violations(set(switches), set(hosts), links, switch_delay)
        errors.extend(f"topology: {e}" for e in topo_errors)
        source = str(topo_raw.get("source", ""))
        destination = str(topo_raw.get("destination", ""))
        for key, host in (("source", source), ("destination", destination)):
            if host not in hosts:
                errors.append(f"topology.{key}: {host!r} is not a declared host")
        if not topo_errors:
            topology = Topology(set(switches), set(hosts), links, switch_delay)

    paths = []
    if topology is not None and source in topology.hosts and destination in topology.hosts:
        paths = enumerate_paths(topology, source, destination)
        if not paths:
            errors.append(f"topology: no path between {source!r} and {destination!r}")

    probing = raw.get("probing", {})
    probe_start = _number(errors, "probing.start_s", probing.get("start_s", 0.0), minimum=0)
    probe_period = _number(errors, "probing.period_s", probing.get("period_s", 1.0), positive=True)
    window = probing.get("window", 3)
    if isinstance(window, bool) or not isinstance(window, int) or window < 1:
        errors.append(f"probing.window: must be a positive integer, got {window!r}")

    ctl_raw = raw.get("controller", {})
    controller = None
    known_ctl = {"ept_ms", "reroute_threshold_ms", "min_dwell_s", "guard_margin_ms", "rtt_divisor"}
    unknown = set(ctl_raw) - known_ctl
    if unknown:
        errors.append(f"controller: unknown keys {sorted(unknown)}")
    try:
        controller = ControllerConfig(**{k: v for k, v in ctl_raw.items() if k in known_ctl})
    except (TypeError, ValueError) as exc:
        errors.append(f"controller: {exc}")

    tx = _endpoint(errors, raw.get("transmitter"), "transmitter", source or "tx")
    rx = _endpoint(errors, raw.get("receiver"), "receiver", destination or "rx")
    if tx and rx and [c.label for c in tx.configs] != [c.label for c in rx.configs]:
        errors.append("transmitter/receiver configs must list the same labels in the same order")

    injections = []
    last_t = -math.inf
    for i, inj in enumerate(raw.get("injections", [])):
        iw = f"injections[{i}]"
        if not isinstance(inj, dict):
            errors.append(f"{iw}: expected a table")
            continue
        t = _number(errors, f"{iw}.at_s", _get(errors, inj, "at_s", iw), minimum=0)
        added = _number(errors, f"{iw}.added_ms", _get(errors, inj, "added_ms", iw))
        target = str(_get(errors, inj, "target", iw, ""))
        if t is not None:
            if t < last_t:
                errors.append(f"{iw}: schedule not sorted by time ({t} after {last_t})")
            last_t = max(last_t, t)
            if duration is not None and t > duration:
                errors.append(f"{iw}: at_s={t} is beyond duration_s={duration}")
        errors.extend(_target_violations(iw, target, topology, topo_raw, paths))
        if t is not None and added is not None:
            injections.append(LatencyInjection(t, target, added))

    if duration is not None and stream_start is not None and stream_start > duration:
        errors.append(f"stream_start_s={stream_start} is beyond duration_s={duration}")

    if errors:
        raise ScenarioError(f"{name}: {len(errors)} violation(s): {errors[0]}", errors)
    return Scenario(
        topology=topology,
        source=source,
        destination=destination,
        transmitter=tx,
        receiver=rx,
        seed=seed,
        duration_s=duration,
        stream_start_s=stream_start,
        injections=injections,
        probe_start_s=probe_start,
        probe_period_s=probe_period,
        probe_window=window,
        sample_period_s=sample_period,
        controller=controller,
        interaction_enabled=interaction,
        name=str(raw.get("name", name)),
    )


def _target_violations(where: str, target: str, topology: Optional[Topology], topo_raw: Any, paths: list) -> list[str]:
    kind, _, name = target.partition(":")
    if not name:
        kind, name = "path", target
    if kind not in ("path", "link") or not name:
        return [f"{where}.target: expected 'path:<id>' or 'link:<a>-<b>', got {target!r}"]
    declared = set()
    if isinstance(topo_raw, dict):
        declared = {str(s) for s in topo_raw.get("switches", [])} | {str(h) for h in topo_raw.get("hosts", [])}
    if kind == "path":
        out = [f"{where}.target: unknown switch {s!r} in path {name!r}" for s in name.split("-") if s not in declared]
        if not out and topology is not None and name not in {p.path_id for p in paths}:
            out.append(f"{where}.target: {name!r} is not a path between the endpoints")
        return out
    a, sep, b = name.partition("-")
    if not sep:
        return [f"{where}.target: malformed link {name!r}"]
    out = [f"{where}.target: unknown node {n!r} in link {name!r}" for n in (a, b) if n not in declared]
    if not out and topology is not None and not topology.has_link(a, b):
        out.append(f"{where}.target: no link {name!r} in topology")
    return out


def _parse_text(text: str, name: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = _LINE_RE.search(str(exc))
        line = int(m.group(1)) if m else None
        where = f"{name}:{line}" if line else name
        raise ScenarioError(f"{where}: parse error: {exc}", line=line) from None


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    return scenario_from_dict(_parse_text(text, name), name)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario: {exc}") from None
    return parse_scenario(text, str(path))


def validate_scenario(path: str | Path) -> ValidationReport:
    """Check a scenario file and list every violation found.

    An unreadable file raises ``OSError``.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        parse_scenario(text, str(path))
    except ScenarioError as exc:
        return ValidationReport(str(path), list(exc.violations))
    return ValidationReport(str(path), [])


def paper_scenario_path() -> Path:
    return Path(str(resources.files("nmpsim") / "data" / PAPER_SCENARIO))


def load_paper_scenario() -> Scenario:
    return load_scenario(paper_scenario_path())

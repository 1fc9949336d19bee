"""Discrete-event network fabric.

Switches and hosts joined by undirected links whose one-way latency can be
changed at runtime (the NETEM role), per-switch flow rules installed by the
controller, and a virtual clock driving everything through one event queue.
"""

from __future__ import annotations

import bisect
import heapq
import logging
import random
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Iterable, Optional

logger = logging.getLogger(__name__)

PACKET_DELIVERY = "packet-delivery"
INJECTION = "injection"
PROBE_TIMER = "probe-timer"
CONTROL_MESSAGE = "control-message"
EVENT_KINDS = (PACKET_DELIVERY, INJECTION, PROBE_TIMER, CONTROL_MESSAGE)


class NetsimError(Exception):
    pass


class TopologyError(NetsimError, ValueError):
    pass


class UnknownPathError(NetsimError, KeyError):
    pass


class NoRouteError(NetsimError):
    pass


def link_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    base_latency_ms: float
    jitter_ms: float = 0.0

    @property
    def key(self) -> tuple[str, str]:
        return link_key(self.a, self.b)


def topology_violations(
    switches: set[str], hosts: set[str], links: list[Link], switch_delay_ms: dict[str, float]
) -> list[str]:
    errors = []
    overlap = switches & hosts
    if overlap:
        errors.append(f"identifiers declared as both switch and host: {sorted(overlap)}")
    nodes = switches | hosts
    seen = set()
    for l in links:
        for end in (l.a, l.b):
            if end not in nodes:
                errors.append(f"link {l.a}-{l.b} references undeclared node {end!r}")
        if l.a == l.b:
            errors.append(f"self-loop on {l.a!r}")
        if l.key in seen:
            errors.append(f"duplicate link {l.a}-{l.b}")
        seen.add(l.key)
        if l.base_latency_ms < 0 or l.jitter_ms < 0:
            errors.append(f"link {l.a}-{l.b} has negative latency or jitter")
    for s, d in switch_delay_ms.items():
        if s not in switches:
            errors.append(f"switch delay given for undeclared switch {s!r}")
        elif d < 0:
            errors.append(f"switch {s!r} has negative processing delay")
    return errors


@dataclass
class Topology:
    switches: set[str]
    hosts: set[str]
    links: list[Link]
    switch_delay_ms: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.switches = {str(s) for s in self.switches}
        self.hosts = {str(h) for h in self.hosts}
        errors = self.violations()
        if errors:
            raise TopologyError("; ".join(errors))
        self._links = {l.key: l for l in self.links}
        self._adj: dict[str, list[str]] = {n: [] for n in self.switches | self.hosts}
        for l in self.links:
            self._adj[l.a].append(l.b)
            self._adj[l.b].append(l.a)
        for n in self._adj:
            self._adj[n].sort()

    def violations(self) -> list[str]:
        return topology_violations(self.switches, self.hosts, self.links, self.switch_delay_ms)

    def link(self, a: str, b: str) -> Link:
        try:
            return self._links[link_key(a, b)]
        except KeyError:
            raise TopologyError(f"no link between {a!r} and {b!r}") from None

    def has_link(self, a: str, b: str) -> bool:
        return link_key(a, b) in self._links

    def neighbors(self, node: str) -> list[str]:
        return self._adj[node]


@dataclass(frozen=True)
class PathRoute:
    path_id: str
    hops: tuple[str, ...]
    src: str
    dst: str

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.src, *self.hops, self.dst)

    @cached_property
    def link_keys(self) -> tuple[tuple[str, str], ...]:
        n = self.nodes
        return tuple(link_key(n[i], n[i + 1]) for i in range(len(n) - 1))


def path_id_of(hops: Iterable[str]) -> str:
    return "-".join(hops)


@dataclass(frozen=True)
class FlowRule:
    switch_id: str
    flow_id: str
    next_hop: str


@dataclass(frozen=True)
class LatencyInjection:
    """Latency change taking effect at ``at_time_s``.

    ``target`` is ``"link:A-B"`` or ``"path:<path_id>"``; a bare path id is
    accepted too.
    """

    at_time_s: float
    target: str
    added_latency_ms: float


@dataclass(frozen=True)
class Delivery:
    flow_id: str
    payload: Any
    sent_at_s: float
    deliver_at_s: float
    path_id: str
    transit_ms: float


def enumerate_paths(topology: Topology, src_host: str, dst_host: str) -> list[PathRoute]:
    """All simple switch paths between two hosts, sorted by path_id."""
    for h in (src_host, dst_host):
        if h not in topology.hosts:
            raise TopologyError(f"{h!r} is not a declared host")
    found: list[PathRoute] = []

    def walk(node: str, trail: list[str]) -> None:
        for nxt in topology.neighbors(node):
            if nxt == dst_host:
                found.append(PathRoute(path_id_of(trail), tuple(trail), src_host, dst_host))
            elif nxt in topology.switches and nxt not in trail:
                trail.append(nxt)
                walk(nxt, trail)
                trail.pop()

    for first in topology.neighbors(src_host):
        if first in topology.switches:
            walk(first, [first])
    found.sort(key=lambda p: p.path_id)
    return found


class Simulator:
    """Virtual-time event loop. Equal timestamps run in insertion order."""

    def __init__(self, record_trace: bool = False) -> None:
        self.now = 0.0
        self._queue: list[tuple[float, int, str, Callable[..., None], Any]] = []
        self._seq = 0
        self.trace: Optional[list[tuple[float, int, str]]] = [] if record_trace else None

    def schedule(self, time_s: float, kind: str, handler: Callable[[Any], None], payload: Any = None) -> int:
        if time_s < self.now:
            raise NetsimError(f"cannot schedule {kind} at {time_s} before now={self.now}")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (time_s, seq, kind, handler, payload))
        return seq

    def run(self, until: float) -> None:
        q = self._queue
        while q and q[0][0] <= until:
            time_s, seq, kind, handler, payload = heapq.heappop(q)
            self.now = time_s
            if self.trace is not None:
                self.trace.append((time_s, seq, kind))
            handler(payload)
        self.now = max(self.now, until)

    def __len__(self) -> int:
        return len(self._queue)


class Network:
    def __init__(self, topology: Topology, seed: int = 0, sim: Optional[Simulator] = None) -> None:
        self.topology = topology
        self.sim = sim
        self.seed = seed
        self.rng = random.Random(seed)
        # one jitter stream per flow, so extra packets on one flow never shift another's draws
        self._flow_rng: dict[str, random.Random] = {}
        # per link: parallel lists of change times and added latency from that time on
        self._added_times: dict[tuple[str, str], list[float]] = {}
        self._added_vals: dict[tuple[str, str], list[float]] = {}
        self._rules: dict[tuple[str, str], FlowRule] = {}
        self._flow_rules: dict[str, list[FlowRule]] = {}
        self._flow_ends: dict[str, tuple[str, str]] = {}
        self._route_cache: dict[str, PathRoute] = {}
        self._paths: dict[str, PathRoute] = {}
        self.sent = 0
        self.delivered = 0
        self.rejected = 0

    # paths ------------------------------------------------------------

    def enumerate_paths(self, src_host: str, dst_host: str) -> list[PathRoute]:
        paths = enumerate_paths(self.topology, src_host, dst_host)
        for p in paths:
            self._paths[p.path_id] = p
        return paths

    def route(self, path: PathRoute | str) -> PathRoute:
        if isinstance(path, PathRoute):
            if self._paths.get(path.path_id) is not path:
                self._check_path(path)
            return path
        try:
            return self._paths[path]
        except KeyError:
            raise UnknownPathError(f"unknown path {path!r}") from None

    def _check_path(self, path: PathRoute) -> None:
        if len(set(path.hops)) != len(path.hops) or not path.hops:
            raise UnknownPathError(f"path {path.path_id!r} is not a simple switch path")
        for h in path.hops:
            if h not in self.topology.switches:
                raise UnknownPathError(f"path {path.path_id!r}: {h!r} is not a switch")
        n = path.nodes
        for i in range(len(n) - 1):
            if not self.topology.has_link(n[i], n[i + 1]):
                raise UnknownPathError(f"path {path.path_id!r}: no link {n[i]}-{n[i + 1]}")

    # latency ------------------------------------------------------------

    def added_latency(self, key: tuple[str, str], at_time_s: float) -> float:
        times = self._added_times.get(key)
        if not times:
            return 0.0
        i = bisect.bisect_right(times, at_time_s)
        return self._added_vals[key][i - 1] if i else 0.0

    def link_latency(self, a: str, b: str, at_time_s: float) -> float:
        link = self.topology.link(a, b)
        return link.base_latency_ms + self.added_latency(link.key, at_time_s)

    def injection_link(self, path: PathRoute) -> tuple[str, str]:
        """First link of ``path`` not used by any other path between its hosts."""
        others = set()
        for p in enumerate_paths(self.topology, path.src, path.dst):
            if p.path_id != path.path_id:
                others.update(p.link_keys)
        for key in path.link_keys:
            if key not in others:
                return key
        return path.link_keys[0]

    def resolve_target(self, target: str) -> tuple[str, str]:
        kind, _, name = target.partition(":")
        if not name:
            kind, name = "path", target
        if kind == "link":
            a, sep, b = name.partition("-")
            if not sep or not self.topology.has_link(a, b):
                raise UnknownPathError(f"unknown link target {target!r}")
            return link_key(a, b)
        if kind == "path":
            return self.injection_link(self.route(name))
        raise UnknownPathError(f"bad injection target {target!r}")

    def apply_injection(self, inj: LatencyInjection) -> tuple[tuple[str, str], float]:
        """Record a latency change; returns (link key, added latency now in force)."""
        if inj.at_time_s < 0:
            raise NetsimError(f"injection time must be >= 0, got {inj.at_time_s}")
        key = self.resolve_target(inj.target)
        times = self._added_times.setdefault(key, [])
        vals = self._added_vals.setdefault(key, [])
        if times and inj.at_time_s < times[-1]:
            raise NetsimError(f"injection on {key} at {inj.at_time_s} precedes an earlier change at {times[-1]}")
        added = max(0.0, self.added_latency(key, inj.at_time_s) + inj.added_latency_ms)
        if times and times[-1] == inj.at_time_s:
            vals[-1] = added
        else:
            times.append(inj.at_time_s)
            vals.append(added)
        logger.debug("t=%.3f injection %s on %s -> added %.3f ms", inj.at_time_s, inj.target, key, added)
        return key, added

    def base_transit_delay(self, path: PathRoute | str, at_time_s: float) -> float:
        """One-way delay along ``path`` with no jitter."""
        path = self.route(path)
        return self._base_transit(path, at_time_s)

    def _base_transit(self, path: PathRoute, at_time_s: float) -> float:
        total = 0.0
        for key in path.link_keys:
            total += self.topology._links[key].base_latency_ms + self.added_latency(key, at_time_s)
        for s in path.hops:
            total += self.topology.switch_delay_ms.get(s, 0.0)
        return total

    def max_jitter(self, path: PathRoute | str) -> float:
        path = self.route(path)
        return sum(self.topology._links[k].jitter_ms for k in path.link_keys)

    def mean_transit_delay(self, path: PathRoute | str, at_time_s: float) -> float:
        """Expected one-way delay: jitter-free delay plus half the jitter span."""
        return self.base_transit_delay(path, at_time_s) + self.max_jitter(path) / 2.0

    def transit_delay(self, path: PathRoute | str, at_time_s: float, rng: Optional[random.Random] = None) -> float:
        """One-way delay including a uniform jitter draw per link traversal."""
        path = self.route(path)
        rng = rng or self.rng
        total = self._base_transit(path, at_time_s)
        links = self.topology._links
        for key in path.link_keys:
            j = links[key].jitter_ms
            if j > 0:
                total += rng.uniform(0.0, j)
        return total

    def flow_rng(self, flow_id: str) -> random.Random:
        rng = self._flow_rng.get(flow_id)
        if rng is None:
            rng = self._flow_rng[flow_id] = random.Random(f"{self.seed}:{flow_id}")
        return rng

    # flow rules -----------------------------------------------------------

    def install_rules(self, path: PathRoute | str, flow_id: str) -> list[FlowRule]:
        """Point ``flow_id`` along ``path``, replacing its rules elsewhere in one step."""
        path = self.route(path)
        nodes = path.nodes
        new_rules = [FlowRule(nodes[i], flow_id, nodes[i + 1]) for i in range(1, len(nodes) - 1)]
        for rule in self._flow_rules.get(flow_id, []):
            del self._rules[(rule.switch_id, flow_id)]
        for rule in new_rules:
            self._rules[(rule.switch_id, flow_id)] = rule
        self._flow_rules[flow_id] = new_rules
        self._flow_ends[flow_id] = (path.src, path.dst)
        self._route_cache.pop(flow_id, None)
        return list(new_rules)

    def remove_rules(self, flow_id: str) -> None:
        for rule in self._flow_rules.pop(flow_id, []):
            del self._rules[(rule.switch_id, flow_id)]
        self._route_cache.pop(flow_id, None)

    def rule(self, switch_id: str, flow_id: str) -> Optional[FlowRule]:
        return self._rules.get((switch_id, flow_id))

    def rules_for(self, flow_id: str) -> list[FlowRule]:
        return list(self._flow_rules.get(flow_id, []))

    def rule_table(self) -> dict[tuple[str, str], FlowRule]:
        return dict(self._rules)

    def flow_path(self, flow_id: str) -> PathRoute:
        """Follow installed rules from the flow's source host to its destination."""
        cached = self._route_cache.get(flow_id)
        if cached is not None:
            return cached
        if flow_id not in self._flow_ends:
            raise NoRouteError(f"flow {flow_id!r} has no rules")
        src, dst = self._flow_ends[flow_id]
        first = [n for n in self.topology.neighbors(src) if (n, flow_id) in self._rules]
        if not first:
            raise NoRouteError(f"flow {flow_id!r}: no rule at any switch adjacent to {src!r}")
        hops = [first[0]]
        while True:
            rule = self._rules.get((hops[-1], flow_id))
            if rule is None:
                raise NoRouteError(f"flow {flow_id!r}: no rule at switch {hops[-1]!r}")
            nxt = rule.next_hop
            if nxt == dst:
                break
            if nxt not in self.topology.switches or nxt in hops:
                raise NoRouteError(f"flow {flow_id!r}: bad next hop {nxt!r} at {hops[-1]!r}")
            hops.append(nxt)
        route = PathRoute(path_id_of(hops), tuple(hops), src, dst)
        known = self._paths.get(route.path_id)
        if known == route:
            route = known
        self._route_cache[flow_id] = route
        return route

    # packets ------------------------------------------------------------

    def send_packet(
        self,
        flow_id: str,
        payload: Any,
        at_time_s: float,
        on_delivery: Optional[Callable[[Delivery], None]] = None,
    ) -> Delivery:
        """Compute (and, with a simulator attached, schedule) a packet delivery.

        The delay is fixed at send time, so packets already in flight are not
        affected by later reroutes or injections.
        """
        try:
            path = self.flow_path(flow_id)
        except NoRouteError:
            self.rejected += 1
            raise
        self.sent += 1
        transit = self.transit_delay(path, at_time_s, self.flow_rng(flow_id))
        delivery = Delivery(flow_id, payload, at_time_s, at_time_s + transit / 1000.0, path.path_id, transit)
        if self.sim is not None and on_delivery is not None:
            self.sim.schedule(delivery.deliver_at_s, PACKET_DELIVERY, self._deliver, (delivery, on_delivery))
        return delivery

    def _deliver(self, item: tuple[Delivery, Callable[[Delivery], None]]) -> None:
        delivery, callback = item
        self.delivered += 1
        callback(delivery)

"""End-host delay probing.

The sender periodically pushes one probe down every path, the receiver echoes
it back over the same path, and the round-trip time becomes a one-way delay
estimate for the controller's monitor table. Switches take no part beyond
forwarding the probe flows along their pinned rules.
"""

from __future__ import annotations

import logging
import statistics
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional, Sequence

from .netsim import PROBE_TIMER, Delivery, Network, NoRouteError, PathRoute

logger = logging.getLogger(__name__)

OUTBOUND = "outbound"
ECHOED = "echoed"


class ProbeError(Exception):
    pass


class NoDataError(ProbeError, LookupError):
    pass


@dataclass(frozen=True)
class ProbePacket:
    path_id: str
    sequence_number: int
    sent_at_s: float
    direction: str = OUTBOUND
    # one-way transit of the outbound leg, carried so RTT is exact in virtual time
    outbound_ms: float = 0.0


@dataclass(frozen=True)
class RttSample:
    path_id: str
    rtt_ms: float
    measured_at_s: float


def probe_flow_id(path_id: str) -> str:
    return f"probe:{path_id}"


def echo(probe: ProbePacket) -> ProbePacket:
    """Receiver side: bounce an outbound probe back on its own path."""
    if probe.direction != OUTBOUND:
        raise ProbeError(f"probe {probe.path_id}#{probe.sequence_number} was already echoed")
    return replace(probe, direction=ECHOED)


def estimate_network_delay(samples: Sequence[RttSample] | Sequence[float], window: int = 3, rtt_divisor: int = 2) -> float:
    """Median of the last ``window`` RTTs, divided by ``rtt_divisor`` (ms)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if rtt_divisor not in (1, 2):
        raise ValueError("rtt_divisor must be 1 or 2")
    if not samples:
        raise NoDataError("no RTT samples for path")
    recent = samples[-window:]
    rtts = [s.rtt_ms if isinstance(s, RttSample) else float(s) for s in recent]
    return statistics.median(rtts) / rtt_divisor


class Prober:
    """Periodic per-path prober running on the network's simulator.

    ``on_estimate(path_id, estimate_ms, now_s)`` is called whenever an echoed
    probe completes and the path's estimate is recomputed.
    """

    def __init__(
        self,
        network: Network,
        paths: Iterable[PathRoute],
        window: int = 3,
        rtt_divisor: int = 2,
        history: int = 64,
        on_estimate: Optional[Callable[[str, float, float], None]] = None,
    ) -> None:
        self.network = network
        self.paths = list(paths)
        self.window = window
        self.rtt_divisor = rtt_divisor
        self.on_estimate = on_estimate
        self.samples: dict[str, deque[RttSample]] = {p.path_id: deque(maxlen=max(history, window)) for p in self.paths}
        self._next_seq: dict[str, int] = {p.path_id: 0 for p in self.paths}
        self.stale: list[tuple[float, str]] = []
        for p in self.paths:
            network.install_rules(p, probe_flow_id(p.path_id))

    def probe_round(self, paths: Optional[Sequence[PathRoute]] = None, at_time_s: Optional[float] = None) -> tuple[list[ProbePacket], list[str]]:
        """Send one outbound probe per path. Returns (probes sent, stale path ids)."""
        if paths is None:
            paths = self.paths
        if at_time_s is None:
            at_time_s = self.network.sim.now if self.network.sim else 0.0
        sent, stale = [], []
        for p in paths:
            flow = probe_flow_id(p.path_id)
            try:
                route = self.network.flow_path(flow)
            except NoRouteError:
                stale.append(p.path_id)
                self.stale.append((at_time_s, p.path_id))
                logger.warning("t=%.3f probe flow for %s unroutable; path marked stale", at_time_s, p.path_id)
                continue
            if route.path_id != p.path_id:
                raise ProbeError(f"probe flow {flow} is routed over {route.path_id}")
            seq = self._next_seq.get(p.path_id, 0)
            self._next_seq[p.path_id] = seq + 1
            probe = ProbePacket(p.path_id, seq, at_time_s)
            delivery = self.network.send_packet(flow, probe, at_time_s, self._at_receiver)
            sent.append(replace(probe, outbound_ms=delivery.transit_ms))
        return sent, stale

    def _at_receiver(self, delivery: Delivery) -> None:
        probe = replace(delivery.payload, outbound_ms=delivery.transit_ms)
        back = echo(probe)
        # links are symmetric, so the return leg reuses the probe flow's path
        self.network.send_packet(probe_flow_id(back.path_id), back, delivery.deliver_at_s, self._at_sender)

    def _at_sender(self, delivery: Delivery) -> None:
        probe: ProbePacket = delivery.payload
        sample = RttSample(probe.path_id, probe.outbound_ms + delivery.transit_ms, delivery.deliver_at_s)
        self.record(sample)

    def record(self, sample: RttSample) -> float:
        history = self.samples.setdefault(sample.path_id, deque(maxlen=max(64, self.window)))
        history.append(sample)
        estimate = self.estimate(sample.path_id)
        if self.on_estimate is not None:
            self.on_estimate(sample.path_id, estimate, sample.measured_at_s)
        return estimate

    def estimate(self, path_id: str) -> float:
        history = self.samples.get(path_id)
        if not history:
            raise NoDataError(f"no RTT samples for path {path_id!r}")
        return estimate_network_delay(list(history)[-self.window:], self.window, self.rtt_divisor)

    def start(self, start_s: float, period_s: float, until_s: float) -> None:
        """Schedule probe rounds every ``period_s`` from ``start_s`` up to ``until_s``."""
        if period_s <= 0:
            raise ValueError("probe period must be positive")
        sim = self.network.sim
        if sim is None:
            raise ProbeError("prober needs a network with a simulator attached")
        k = 0

        def tick(_: object) -> None:
            nonlocal k
            self.probe_round(self.paths, sim.now)
            k += 1
            nxt = start_s + k * period_s
            if nxt <= until_s:
                sim.schedule(nxt, PROBE_TIMER, tick)

        if start_s <= until_s:
            sim.schedule(start_s, PROBE_TIMER, tick)

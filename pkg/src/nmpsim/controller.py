"""SDN controller: profile registry, per-path monitor table, routing and
audio-configuration negotiation.

Decision order on every monitor update: assign a path if none is assigned,
otherwise consider rerouting; only then check whether the best path still
keeps mouth-to-ear delay under the EPT and, if not, ask both endpoints to
move to a lower-blocking-delay configuration.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

from .delay import SoundcardProfile
from .netsim import Network

logger = logging.getLogger(__name__)

PATH_ASSIGNMENT = "path-assignment"
REROUTING = "rerouting"
AUDIO_MODIFICATION = "audio-modification"

TRANSMITTER = "transmitter"
RECEIVER = "receiver"


class ControllerError(Exception):
    pass


class NoEstimateError(ControllerError, LookupError):
    pass


class UnknownPathError(ControllerError, KeyError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    ept_ms: float = 25.0
    reroute_threshold_ms: float = 2.0
    min_dwell_s: float = 5.0
    guard_margin_ms: float = 0.0
    rtt_divisor: int = 2

    def __post_init__(self) -> None:
        for name in ("ept_ms", "reroute_threshold_ms", "min_dwell_s"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value!r}")
        if not (math.isfinite(self.guard_margin_ms) and self.guard_margin_ms >= 0):
            raise ValueError(f"guard_margin_ms must be >= 0, got {self.guard_margin_ms!r}")
        if self.rtt_divisor not in (1, 2):
            raise ValueError(f"rtt_divisor must be 1 or 2, got {self.rtt_divisor!r}")

    @property
    def budget_ms(self) -> float:
        return self.ept_ms - self.guard_margin_ms


@dataclass(frozen=True)
class TransitionEvent:
    time_s: float
    current_path: Optional[str]
    next_path: str
    action: str
    # estimates the decision was based on; not exported
    current_estimate_ms: Optional[float] = field(default=None, compare=False)
    next_estimate_ms: Optional[float] = field(default=None, compare=False)


@dataclass(frozen=True)
class ModificationRequest:
    time_s: float
    config_index: int
    endpoints: tuple[str, ...]
    predicted_ms: float
    infeasible: bool = False


@dataclass(frozen=True)
class Ack:
    endpoint_id: str
    config_index: int
    ok: bool = True
    detail: str = ""


@dataclass
class MonitorEntry:
    estimate_ms: float
    updated_at_s: float
    history: deque


class MonitorTable:
    """Latest one-way delay estimate per path, with a bounded history."""

    def __init__(self, path_ids: Iterable[str], history: int = 32) -> None:
        self.path_ids = sorted(path_ids)
        self._history = history
        self._entries: dict[str, MonitorEntry] = {}

    def update(self, path_id: str, estimate_ms: float, now_s: float) -> None:
        if path_id not in self.path_ids:
            raise UnknownPathError(f"unknown path {path_id!r}")
        entry = self._entries.get(path_id)
        if entry is None:
            entry = self._entries[path_id] = MonitorEntry(estimate_ms, now_s, deque(maxlen=self._history))
        elif now_s < entry.updated_at_s:
            raise ControllerError(f"estimate for {path_id} at {now_s} is older than {entry.updated_at_s}")
        entry.estimate_ms = estimate_ms
        entry.updated_at_s = now_s
        entry.history.append((now_s, estimate_ms))

    def estimate(self, path_id: str) -> float:
        try:
            return self._entries[path_id].estimate_ms
        except KeyError:
            raise NoEstimateError(f"path {path_id!r} has not been probed") from None

    def get(self, path_id: str) -> Optional[float]:
        entry = self._entries.get(path_id)
        return entry.estimate_ms if entry else None

    def estimates(self) -> dict[str, float]:
        return {p: e.estimate_ms for p, e in sorted(self._entries.items())}

    def complete(self) -> bool:
        return all(p in self._entries for p in self.path_ids)

    def entry(self, path_id: str) -> MonitorEntry:
        return self._entries[path_id]

    @classmethod
    def from_estimates(cls, estimates: Mapping[str, float], now_s: float = 0.0, paths: Iterable[str] = ()) -> "MonitorTable":
        table = cls(set(paths) | set(estimates))
        for p, est in sorted(estimates.items()):
            table.update(p, est, now_s)
        return table


class AudioProfileRegistry:
    def __init__(self) -> None:
        self.profiles: dict[str, SoundcardProfile] = {}
        self.active_index: dict[str, int] = {}

    def register(self, endpoint_id: str, profile: SoundcardProfile) -> bool:
        """Store a profile; returns True when it replaced an earlier one."""
        rejoin = endpoint_id in self.profiles
        self.profiles[endpoint_id] = profile
        self.active_index[endpoint_id] = 0
        return rejoin

    def __contains__(self, endpoint_id: str) -> bool:
        return endpoint_id in self.profiles


# pure decision rules ----------------------------------------------------------


def _argmin(estimates: Mapping[str, float]) -> Optional[str]:
    if not estimates:
        return None
    return min(estimates, key=lambda p: (estimates[p], p))


def best_path(estimates: Mapping[str, float]) -> Optional[str]:
    """Lowest-estimate path; ties go to the smaller path id."""
    return _argmin(estimates)


def reroute_target(current: str, estimates: Mapping[str, float], threshold_ms: float) -> Optional[str]:
    """Best alternative if it beats the current path by strictly more than the threshold."""
    if current not in estimates:
        return None
    alt = _argmin({p: e for p, e in estimates.items() if p != current})
    if alt is None:
        return None
    if estimates[current] - estimates[alt] > threshold_ms:
        return alt
    return None


def choose_config(
    network_ms: float,
    blocking_sums: list[float],
    current_index: int,
    budget_ms: float,
) -> tuple[Optional[int], bool]:
    """Pick the audio configuration for a path with delay ``network_ms``.

    ``blocking_sums[i]`` is tx + rx blocking delay of config ``i``. Returns
    ``(index, infeasible)``; ``index`` is None when the current config already
    fits in ``budget_ms``. When nothing fits, the index minimising the total is
    returned with ``infeasible`` set.
    """
    if network_ms + blocking_sums[current_index] <= budget_ms:
        return None, False
    for i in range(current_index + 1, len(blocking_sums)):
        if network_ms + blocking_sums[i] <= budget_ms:
            return i, False
    best = min(range(len(blocking_sums)), key=lambda i: (network_ms + blocking_sums[i], i))
    return best, True


# controller -------------------------------------------------------------------


class Controller:
    """Deterministic controller state machine.

    ``network`` (optional) receives flow-rule installs for ``flow_id``.
    ``notify`` (optional) delivers modification requests to the endpoints;
    without it requests complete immediately, as if both endpoints had
    acknowledged.
    """

    def __init__(
        self,
        path_ids: Iterable[str],
        config: ControllerConfig = ControllerConfig(),
        network: Optional[Network] = None,
        flow_id: str = "audio",
        transmitter_id: str = "tx",
        receiver_id: str = "rx",
        negotiation_enabled: bool = True,
        notify: Optional[Callable[[ModificationRequest], None]] = None,
    ) -> None:
        self.config = config
        self.monitor = MonitorTable(path_ids)
        self.registry = AudioProfileRegistry()
        self.network = network
        self.flow_id = flow_id
        self.transmitter_id = transmitter_id
        self.receiver_id = receiver_id
        self.negotiation_enabled = negotiation_enabled
        self.notify = notify
        self.current_path: Optional[str] = None
        self.last_route_change_s: Optional[float] = None
        self.pending: Optional[ModificationRequest] = None
        self._acks: dict[str, Ack] = {}
        self._log: list[TransitionEvent] = []
        self.notices: list[tuple[float, str]] = []
        self._infeasible_flagged = False

    # SIP module ------------------------------------------------------------

    def register_profile(self, endpoint_id: str, profile: SoundcardProfile) -> Ack:
        if not isinstance(profile, SoundcardProfile):
            raise TypeError("profile must be a SoundcardProfile")
        if self.registry.register(endpoint_id, profile):
            logger.info("endpoint %s re-joined; audio config reset to default", endpoint_id)
        return Ack(endpoint_id, 0)

    def active_index(self) -> int:
        return self.registry.active_index.get(self.transmitter_id, 0)

    def _profiles(self) -> tuple[SoundcardProfile, SoundcardProfile]:
        missing = [e for e in (self.transmitter_id, self.receiver_id) if e not in self.registry]
        if missing:
            raise ControllerError(f"no audio profile registered for {', '.join(missing)}")
        return self.registry.profiles[self.transmitter_id], self.registry.profiles[self.receiver_id]

    def blocking_sums(self) -> list[float]:
        tx, rx = self._profiles()
        n = min(len(tx.configs), len(rx.configs))
        return [tx.blocking_ms(i) + rx.blocking_ms(i) for i in range(n)]

    def predicted_mouth_to_ear(self, path_id: str, config_index: int) -> float:
        tx, rx = self._profiles()
        return tx.blocking_ms(config_index) + self.monitor.estimate(path_id) + rx.blocking_ms(config_index)

    # SDN module ------------------------------------------------------------

    def select_initial_path(self, now_s: float) -> Optional[TransitionEvent]:
        if not self.monitor.complete():
            return None
        estimates = self.monitor.estimates()
        chosen = best_path(estimates)
        return TransitionEvent(now_s, None, chosen, PATH_ASSIGNMENT, None, estimates[chosen])

    def maybe_reroute(self, now_s: float) -> Optional[TransitionEvent]:
        if self.current_path is None:
            return None
        if self.last_route_change_s is not None and now_s - self.last_route_change_s < self.config.min_dwell_s:
            return None
        estimates = self.monitor.estimates()
        target = reroute_target(self.current_path, estimates, self.config.reroute_threshold_ms)
        if target is None:
            return None
        return TransitionEvent(now_s, self.current_path, target, REROUTING, estimates[self.current_path], estimates[target])

    def _apply_route(self, event: TransitionEvent) -> None:
        if self.network is not None:
            self.network.install_rules(event.next_path, self.flow_id)
        self.current_path = event.next_path
        self.last_route_change_s = event.time_s
        self._log.append(event)
        logger.info("t=%.3f %s %s -> %s", event.time_s, event.action, event.current_path or "-", event.next_path)

    # negotiation -------------------------------------------------------------

    def check_ept_and_negotiate(self, now_s: float) -> Optional[ModificationRequest]:
        try:
            sums = self.blocking_sums()
        except ControllerError as exc:
            logger.error("negotiation impossible: %s", exc)
            return None
        estimates = self.monitor.estimates()
        path = best_path(estimates)
        if path is None:
            return None
        current = self.active_index()
        index, infeasible = choose_config(estimates[path], sums, current, self.config.budget_ms)
        if index is None:
            self._infeasible_flagged = False
            return None
        predicted = estimates[path] + sums[index]
        if infeasible:
            if not self._infeasible_flagged:
                msg = f"no path/config keeps mouth-to-ear under {self.config.budget_ms:.3f} ms; best is {predicted:.3f} ms"
                self.notices.append((now_s, msg))
                logger.warning("t=%.3f %s", now_s, msg)
                self._infeasible_flagged = True
            if index == current:
                return None
        return ModificationRequest(now_s, index, (self.transmitter_id, self.receiver_id), predicted, infeasible)

    def _start_modification(self, request: ModificationRequest) -> None:
        path = self.current_path
        self._log.append(TransitionEvent(request.time_s, path, path, AUDIO_MODIFICATION))
        logger.info("t=%.3f audio modification -> config index %d", request.time_s, request.config_index)
        self.pending = request
        self._acks = {}
        if self.notify is None:
            for endpoint in request.endpoints:
                self.on_ack(Ack(endpoint, request.config_index))
        else:
            self.notify(request)

    def on_ack(self, ack: Ack) -> None:
        request = self.pending
        if request is None or ack.config_index != request.config_index:
            return
        if not ack.ok:
            logger.warning("endpoint %s refused config %d: %s", ack.endpoint_id, ack.config_index, ack.detail)
            self.pending = None
            self._acks = {}
            return
        self._acks[ack.endpoint_id] = ack
        if all(e in self._acks for e in request.endpoints):
            for e in request.endpoints:
                self.registry.active_index[e] = request.config_index
            self.pending = None
            self._acks = {}

    # main entry --------------------------------------------------------------

    def on_monitor_update(self, path_id: str, estimate_ms: float, now_s: float) -> list[TransitionEvent]:
        self.monitor.update(path_id, estimate_ms, now_s)
        events = []
        if self.current_path is None:
            route_event = self.select_initial_path(now_s)
        else:
            route_event = self.maybe_reroute(now_s)
        if route_event is not None:
            self._apply_route(route_event)
            events.append(route_event)
        if self.current_path is not None and self.negotiation_enabled and self.pending is None:
            request = self.check_ept_and_negotiate(now_s)
            if request is not None:
                self._start_modification(request)
                events.append(self._log[-1])
        return events

    def transition_log(self) -> list[TransitionEvent]:
        return list(self._log)

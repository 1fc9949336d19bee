"""Transmitter and receiver endpoints.

Frames are synthetic: they carry a sample count and timestamps, never audio.
The transmitter stamps each frame with its capture time (one blocking delay
before the send) and the receiver adds its own blocking delay on arrival, so
the measured total follows the tx blocking + network + rx blocking split.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .controller import RECEIVER, TRANSMITTER, Ack, ModificationRequest
from .delay import AudioConfig, DelayBreakdown, DelayModelError, SoundcardProfile, blocking_delay, mouth_to_ear
from .netsim import Delivery, Network, NoRouteError, Simulator

logger = logging.getLogger(__name__)


class EndpointError(Exception):
    pass


@dataclass
class EndpointState:
    endpoint_id: str
    role: str
    profile: SoundcardProfile
    active_config_index: int = 0
    flow_id: str = "audio"
    frames_sent: int = 0
    frames_received: int = 0
    frames_dropped: int = 0
    last_frame_mouth_to_ear_ms: Optional[float] = None
    last_breakdown: Optional[DelayBreakdown] = None
    pending_index: Optional[int] = None

    def __post_init__(self) -> None:
        if self.role not in (TRANSMITTER, RECEIVER):
            raise EndpointError(f"unknown role {self.role!r}")
        if not 0 <= self.active_config_index < len(self.profile.configs):
            raise EndpointError(f"config index {self.active_config_index} out of range")

    @property
    def active_config(self) -> AudioConfig:
        return self.profile.configs[self.active_config_index]

    @property
    def blocking_ms(self) -> float:
        return self.profile.blocking_ms(self.active_config_index)


@dataclass(frozen=True)
class AudioFrame:
    flow_id: str
    frame_seq: int
    config_label: str
    captured_at_s: float
    samples: int
    # transmitter-side blocking delay of the stamped config
    blocking_tx_ms: float


def build_audio_profile(endpoint_id: str, d0_ms: float, candidate_configs: Iterable) -> SoundcardProfile:
    """Profile the sound-card over candidate (label, frame, rate) settings.

    Candidates may be AudioConfig objects or ``(label, frame_size,
    sampling_rate)`` tuples. Invalid ones are skipped with a warning; if none
    survive, the call fails.
    """
    configs = []
    for cand in candidate_configs:
        try:
            cfg = cand if isinstance(cand, AudioConfig) else AudioConfig(*cand)
            blocking_delay(cfg, d0_ms)
        except (DelayModelError, TypeError) as exc:
            logger.warning("%s: skipping audio config %r: %s", endpoint_id, cand, exc)
            continue
        configs.append(cfg)
    if not configs:
        raise DelayModelError(f"{endpoint_id}: no valid audio configuration to profile")
    return SoundcardProfile(endpoint_id, d0_ms, tuple(configs))


def stream_tick(
    state: EndpointState,
    now_s: float,
    network: Optional[Network] = None,
    on_delivery: Optional[Callable[[Delivery], None]] = None,
) -> Optional[AudioFrame]:
    """Capture and (if a network is given) send one frame.

    A pending configuration change takes effect here, at the frame boundary.
    """
    if state.role != TRANSMITTER:
        return None
    if state.pending_index is not None:
        state.active_config_index = state.pending_index
        state.pending_index = None
    cfg = state.active_config
    btx = state.blocking_ms
    frame = AudioFrame(state.flow_id, state.frames_sent + state.frames_dropped, cfg.label, now_s - btx / 1000.0, cfg.frame_size, btx)
    if network is not None:
        try:
            network.send_packet(state.flow_id, frame, now_s, on_delivery)
        except NoRouteError:
            state.frames_dropped += 1
            return None
    state.frames_sent += 1
    return frame


def on_frame_received(state: EndpointState, frame: AudioFrame, now_s: float) -> DelayBreakdown:
    """Measure the mouth-to-ear delay of an arriving frame."""
    if state.role != RECEIVER:
        raise EndpointError(f"{state.endpoint_id} is not a receiver")
    try:
        brx = state.profile.blocking_ms(state.profile.index_of(frame.config_label))
    except KeyError:
        brx = state.blocking_ms
    capture_to_arrival = (now_s - frame.captured_at_s) * 1000.0
    network = max(0.0, capture_to_arrival - frame.blocking_tx_ms)
    breakdown = mouth_to_ear(frame.blocking_tx_ms, brx, network)
    state.frames_received += 1
    state.last_frame_mouth_to_ear_ms = breakdown.total_ms
    state.last_breakdown = breakdown
    return breakdown


def apply_audio_modification(state: EndpointState, requested_index: int, now_s: float = 0.0) -> Ack:
    """Accept a configuration change from the controller.

    The transmitter switches at its next frame boundary; the receiver switches
    at once, since arriving frames are measured with their stamped config.
    """
    if not 0 <= requested_index < len(state.profile.configs):
        return Ack(state.endpoint_id, requested_index, ok=False, detail=f"index {requested_index} out of range")
    if requested_index == state.active_config_index and state.pending_index is None:
        return Ack(state.endpoint_id, requested_index, detail="no change")
    if state.role == TRANSMITTER:
        state.pending_index = requested_index
    else:
        state.active_config_index = requested_index
    logger.debug("t=%.3f %s config -> %s", now_s, state.endpoint_id, state.profile.configs[requested_index].label)
    return Ack(state.endpoint_id, requested_index)


class Transmitter:
    """Runs a transmitter's stream on the simulator clock."""

    def __init__(self, state: EndpointState, network: Network, on_delivery: Callable[[Delivery], None]) -> None:
        if state.role != TRANSMITTER:
            raise EndpointError("Transmitter needs a transmitter state")
        self.state = state
        self.network = network
        self.on_delivery = on_delivery
        self.tick_times: list[float] = []
        self._record_ticks = False

    def start(self, start_s: float, until_s: float, record_ticks: bool = False) -> None:
        sim: Simulator = self.network.sim
        self._record_ticks = record_ticks
        # ticks are placed at anchor + n * period; the anchor moves on each config change
        anchor = start_s
        n = 0
        label = None

        def tick(_: object) -> None:
            nonlocal anchor, n, label
            now = sim.now
            stream_tick(self.state, now, self.network, self.on_delivery)
            if self._record_ticks:
                self.tick_times.append(now)
            cfg = self.state.active_config
            if cfg.label != label:
                anchor, n, label = now, 0, cfg.label
            n += 1
            nxt = anchor + n * cfg.frame_ms / 1000.0
            if nxt <= until_s:
                sim.schedule(nxt, "frame-timer", tick)

        if start_s <= until_s:
            sim.schedule(start_s, "frame-timer", tick)


def deliver_request(
    request: ModificationRequest,
    states: dict[str, EndpointState],
    now_s: float,
) -> list[Ack]:
    """Hand a controller request to each addressed endpoint; collect acks."""
    acks = []
    for endpoint_id in request.endpoints:
        state = states.get(endpoint_id)
        if state is None:
            acks.append(Ack(endpoint_id, request.config_index, ok=False, detail="unknown endpoint"))
            continue
        acks.append(apply_audio_modification(state, request.config_index, now_s))
    return acks

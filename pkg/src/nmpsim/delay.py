"""Mouth-to-ear delay arithmetic: blocking delay, delay composition, gain.

All delays are milliseconds. Sound-card timing (frame size over sampling
rate) is computed in seconds and converted here, at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class DelayModelError(ValueError):
    pass


@dataclass(frozen=True)
class AudioConfig:
    label: str
    frame_size: int
    sampling_rate: int

    def __post_init__(self) -> None:
        if int(self.frame_size) != self.frame_size or self.frame_size < 1:
            raise DelayModelError(f"{self.label}: frame_size must be a positive integer, got {self.frame_size!r}")
        if int(self.sampling_rate) != self.sampling_rate or self.sampling_rate < 1:
            raise DelayModelError(
                f"{self.label}: sampling_rate must be a positive integer, got {self.sampling_rate!r}"
            )

    @property
    def frame_ms(self) -> float:
        """Duration of one frame in milliseconds."""
        return self.frame_size / self.sampling_rate * 1000.0

    def __str__(self) -> str:
        return f"{self.frame_size}@{self.sampling_rate}"


@dataclass(frozen=True)
class SoundcardProfile:
    """Audio profile of one endpoint.

    ``configs`` is ordered by preference: index 0 is the default,
    highest-quality set; later entries trade quality for lower blocking delay.
    """

    endpoint_id: str
    d0_ms: float
    configs: tuple[AudioConfig, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "configs", tuple(self.configs))
        if not self.configs:
            raise DelayModelError(f"{self.endpoint_id}: profile needs at least one config")
        labels = [c.label for c in self.configs]
        if len(set(labels)) != len(labels):
            raise DelayModelError(f"{self.endpoint_id}: duplicate config labels {labels}")
        if not math.isfinite(self.d0_ms) or self.d0_ms < 0:
            raise DelayModelError(f"{self.endpoint_id}: d0_ms must be >= 0, got {self.d0_ms!r}")
        object.__setattr__(self, "_blocking", tuple(blocking_delay(c, self.d0_ms) for c in self.configs))
        object.__setattr__(self, "_index", {c.label: i for i, c in enumerate(self.configs)})

    def blocking_ms(self, index: int) -> float:
        if index < 0:
            raise IndexError(index)
        return self._blocking[index]

    def index_of(self, label: str) -> int:
        return self._index[label]

    def table(self) -> dict[str, float]:
        """Config label -> blocking delay (ms), in preference order."""
        return {c.label: self.blocking_ms(i) for i, c in enumerate(self.configs)}


@dataclass(frozen=True)
class DelayBreakdown:
    blocking_tx_ms: float
    blocking_rx_ms: float
    network_ms: float
    total_ms: float
    # uncompressed audio: no coding latency on either side
    processing_tx_ms: float = 0.0
    processing_rx_ms: float = 0.0


def _check_non_negative(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value) or value < 0:
            raise DelayModelError(f"{name} must be a finite non-negative number, got {value!r}")


def blocking_delay(config: AudioConfig, d0_ms: float = 0.0) -> float:
    """Sound-card blocking delay in ms: frame_size / sampling_rate + d0."""
    if config.frame_size < 1 or config.sampling_rate < 1:
        raise DelayModelError(f"invalid audio config {config!r}")
    _check_non_negative(d0_ms=d0_ms)
    return config.frame_ms + d0_ms


def mouth_to_ear(blocking_tx_ms: float, blocking_rx_ms: float, network_ms: float) -> DelayBreakdown:
    _check_non_negative(blocking_tx_ms=blocking_tx_ms, blocking_rx_ms=blocking_rx_ms, network_ms=network_ms)
    processing_tx = processing_rx = 0.0
    # blocking terms first: equal sides then give exactly 2 * b + n
    total = (blocking_tx_ms + blocking_rx_ms) + (processing_tx + processing_rx) + network_ms
    return DelayBreakdown(
        blocking_tx_ms=blocking_tx_ms,
        blocking_rx_ms=blocking_rx_ms,
        network_ms=network_ms,
        total_ms=total,
        processing_tx_ms=processing_tx,
        processing_rx_ms=processing_rx,
    )


def gain(d_mode1_ms: float, d_mode2_ms: float) -> float:
    """Percent reduction of ``d_mode2_ms`` relative to ``d_mode1_ms``.

    ``d_mode1_ms`` is the delay without audio modification, ``d_mode2_ms``
    the delay with it.
    """
    if not d_mode1_ms > 0:
        raise DelayModelError(f"gain undefined for d_mode1_ms={d_mode1_ms!r}")
    return (d_mode1_ms - d_mode2_ms) / d_mode1_ms * 100.0


def blocking_delta_both_sides(cfg_a: AudioConfig, cfg_b: AudioConfig, d0_ms: float = 0.0) -> float:
    """Mouth-to-ear saving from switching both endpoints from cfg_a to cfg_b."""
    blocking_delay(cfg_a, d0_ms)
    blocking_delay(cfg_b, d0_ms)
    # d0 cancels; subtract frame times directly so the result is bit-identical for any d0
    return 2.0 * (cfg_a.frame_ms - cfg_b.frame_ms)

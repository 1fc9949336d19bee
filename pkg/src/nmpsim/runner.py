"""Scenario replay, reporting and the with/without-interaction comparison."""

from __future__ import annotations

import csv
import io
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .controller import (
    AUDIO_MODIFICATION,
    RECEIVER,
    REROUTING,
    TRANSMITTER,
    Controller,
    ModificationRequest,
    TransitionEvent,
)
from .delay import gain
from .endpoints import EndpointState, Transmitter, deliver_request, on_frame_received
from .netsim import CONTROL_MESSAGE, INJECTION, Delivery, Network, Simulator
from .probing import Prober
from .scenario import Scenario

logger = logging.getLogger(__name__)

AUDIO_FLOW = "audio"
SAMPLE = "sample"

TRANSITION_COLUMNS = ["time_s", "current_path", "next_path", "action"]
TIMESERIES_COLUMNS = [
    "time_s",
    "active_path",
    "network_est_ms",
    "network_truth_ms",
    "blocking_tx_ms",
    "blocking_rx_ms",
    "mouth_to_ear_ms",
    "event",
]
SUMMARY_KEYS = ["avg_gain_pct", "max_gain_pct", "ept_violations", "reroutes"]

# values are kept at CSV precision so summaries recompute exactly from the files
MS_DIGITS = 6


@dataclass(frozen=True)
class TimeSeriesRow:
    time_s: float
    active_path: str
    network_est_ms: float
    network_truth_ms: float
    blocking_tx_ms: float
    blocking_rx_ms: float
    mouth_to_ear_ms: float
    event: str = ""


@dataclass
class RunReport:
    scenario: str
    interaction_enabled: bool
    transitions: list[TransitionEvent]
    rows: list[TimeSeriesRow]
    summary: dict
    notices: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)


@dataclass
class CompareReport:
    enabled: RunReport
    disabled: RunReport
    avg_gain_pct: float
    max_gain_pct: float
    window_start_s: Optional[float]
    window_rows: int
    d1_mean_ms: float
    d2_mean_ms: float
    notice: str = ""

    @property
    def summary(self) -> dict:
        return {
            "avg_gain_pct": self.avg_gain_pct,
            "max_gain_pct": self.max_gain_pct,
            "ept_violations": self.enabled.summary["ept_violations"],
            "reroutes": self.enabled.summary["reroutes"],
            "window_start_s": self.window_start_s,
            "window_rows": self.window_rows,
            "d1_mean_ms": self.d1_mean_ms,
            "d2_mean_ms": self.d2_mean_ms,
        }


def summarize(rows: list[TimeSeriesRow], ept_ms: float) -> dict:
    """Summary statistics computed from time-series rows alone.

    Gain compares each post-modification row against the same row under the
    first row's blocking delays, which is what the run would have measured
    without the audio modification.
    """
    violations = sum(1 for r in rows if r.active_path and r.mouth_to_ear_ms > ept_ms)
    reroutes = sum(r.event.split(";").count(REROUTING) for r in rows if r.event)
    avg = peak = 0.0
    if rows:
        base = rows[0].blocking_tx_ms + rows[0].blocking_rx_ms
        d1s, d2s = [], []
        for r in rows:
            blocking = r.blocking_tx_ms + r.blocking_rx_ms
            if blocking != base:
                d1s.append(r.mouth_to_ear_ms - blocking + base)
                d2s.append(r.mouth_to_ear_ms)
        if d1s:
            avg = gain(statistics.fmean(d1s), statistics.fmean(d2s))
            peak = max(gain(a, b) for a, b in zip(d1s, d2s))
    return {"avg_gain_pct": avg, "max_gain_pct": peak, "ept_violations": violations, "reroutes": reroutes}


class Simulation:
    """One scenario wired onto a simulator: network, prober, controller, endpoints."""

    def __init__(self, scenario: Scenario, record_trace: bool = False) -> None:
        self.scenario = scenario
        self.sim = Simulator(record_trace=record_trace)
        self.network = Network(scenario.topology, scenario.seed, self.sim)
        self.paths = self.network.enumerate_paths(scenario.source, scenario.destination)
        tx_profile = scenario.transmitter.profile()
        rx_profile = scenario.receiver.profile()
        self.tx = EndpointState(scenario.transmitter.endpoint_id, TRANSMITTER, tx_profile, flow_id=AUDIO_FLOW)
        self.rx = EndpointState(scenario.receiver.endpoint_id, RECEIVER, rx_profile, flow_id=AUDIO_FLOW)
        self.controller = Controller(
            [p.path_id for p in self.paths],
            scenario.controller,
            network=self.network,
            flow_id=AUDIO_FLOW,
            transmitter_id=self.tx.endpoint_id,
            receiver_id=self.rx.endpoint_id,
            negotiation_enabled=scenario.interaction_enabled,
            notify=self._notify,
        )
        self.controller.register_profile(self.tx.endpoint_id, tx_profile)
        self.controller.register_profile(self.rx.endpoint_id, rx_profile)
        self.prober = Prober(
            self.network,
            self.paths,
            window=scenario.probe_window,
            rtt_divisor=scenario.controller.rtt_divisor,
            on_estimate=self.controller.on_monitor_update,
        )
        self.transmitter = Transmitter(self.tx, self.network, self._on_frame)
        self.rows: list[TimeSeriesRow] = []
        self._logged = 0

    # control plane -----------------------------------------------------------

    def _notify(self, request: ModificationRequest) -> None:
        self.sim.schedule(self.sim.now, CONTROL_MESSAGE, self._deliver_request, request)

    def _deliver_request(self, request: ModificationRequest) -> None:
        states = {self.tx.endpoint_id: self.tx, self.rx.endpoint_id: self.rx}
        for ack in deliver_request(request, states, self.sim.now):
            self.sim.schedule(self.sim.now, CONTROL_MESSAGE, self.controller.on_ack, ack)

    # data plane --------------------------------------------------------------

    def _on_frame(self, delivery: Delivery) -> None:
        on_frame_received(self.rx, delivery.payload, delivery.deliver_at_s)

    def _sample(self, _: object) -> None:
        now = self.sim.now
        log = self.controller.transition_log()
        new = log[self._logged :]
        self._logged = len(log)
        events = ";".join(e.action for e in new)
        breakdown = self.rx.last_breakdown
        path = self.controller.current_path
        if breakdown is None or path is None:
            # nothing measured yet: carry the events over to the first real row
            self._logged -= len(new)
            return
        est = self.controller.monitor.get(path)
        self.rows.append(
            TimeSeriesRow(
                time_s=round(now, 3),
                active_path=path,
                network_est_ms=round(est if est is not None else 0.0, MS_DIGITS),
                network_truth_ms=round(self.network.mean_transit_delay(path, now), MS_DIGITS),
                blocking_tx_ms=round(breakdown.blocking_tx_ms, MS_DIGITS),
                blocking_rx_ms=round(breakdown.blocking_rx_ms, MS_DIGITS),
                mouth_to_ear_ms=round(breakdown.total_ms, MS_DIGITS),
                event=events,
            )
        )

    # run -----------------------------------------------------------------

    def run(self) -> RunReport:
        sc = self.scenario
        for inj in sc.injections:
            self.sim.schedule(inj.at_time_s, INJECTION, self.network.apply_injection, inj)
        self.prober.start(sc.probe_start_s, sc.probe_period_s, sc.duration_s)
        self.transmitter.start(sc.stream_start_s, sc.duration_s)
        k = 0
        while True:
            t = sc.stream_start_s + k * sc.sample_period_s
            if t > sc.duration_s + 1e-9:
                break
            self.sim.schedule(min(t, sc.duration_s), SAMPLE, self._sample)
            k += 1
        self.sim.run(sc.duration_s)
        notices = [msg for _, msg in self.controller.notices]
        stats = {
            "frames_sent": self.tx.frames_sent,
            "frames_dropped": self.tx.frames_dropped,
            "frames_received": self.rx.frames_received,
            "packets_sent": self.network.sent,
            "packets_delivered": self.network.delivered,
            "stale_probes": len(self.prober.stale),
        }
        return RunReport(
            scenario=sc.name,
            interaction_enabled=sc.interaction_enabled,
            transitions=self.controller.transition_log(),
            rows=list(self.rows),
            summary=summarize(self.rows, sc.controller.ept_ms),
            notices=notices,
            stats=stats,
        )


def run_scenario(scenario: Scenario, out_dir: Optional[str | Path] = None) -> RunReport:
    report = Simulation(scenario).run()
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def compare_modes(scenario: Scenario, out_dir: Optional[str | Path] = None) -> CompareReport:
    """Run with and without application-network interaction and compute the gain.

    Rows are aligned on their timestamps. The comparison window starts at the
    first audio modification of the interaction-enabled run.
    """
    enabled = Simulation(scenario.with_overrides(interaction_enabled=True)).run()
    disabled = Simulation(scenario.with_overrides(interaction_enabled=False)).run()
    mods = [e.time_s for e in enabled.transitions if e.action == AUDIO_MODIFICATION]
    notice = ""
    avg = peak = d1_mean = d2_mean = 0.0
    window_start = mods[0] if mods else None
    pairs = []
    if window_start is None:
        notice = "no audio modification occurred; gain reported as 0"
    else:
        by_time = {r.time_s: r for r in disabled.rows}
        for r in enabled.rows:
            if r.time_s >= window_start and r.time_s in by_time:
                pairs.append((by_time[r.time_s].mouth_to_ear_ms, r.mouth_to_ear_ms))
        if not pairs:
            notice = "audio modification left no aligned rows to compare; gain reported as 0"
        else:
            d1_mean = statistics.fmean(p[0] for p in pairs)
            d2_mean = statistics.fmean(p[1] for p in pairs)
            avg = gain(d1_mean, d2_mean)
            peak = max(gain(a, b) for a, b in pairs)
    report = CompareReport(enabled, disabled, avg, peak, window_start, len(pairs), d1_mean, d2_mean, notice)
    if notice:
        logger.warning(notice)
    if out_dir is not None:
        out = Path(out_dir)
        write_report(enabled, out / "enabled")
        write_report(disabled, out / "disabled")
        (out / "summary.txt").write_text(format_summary(report.summary, notice), encoding="utf-8")
    return report


# output ---------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.{MS_DIGITS}f}"
    return str(value)


def transitions_csv(events: list[TransitionEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRANSITION_COLUMNS)
    for e in events:
        w.writerow([f"{e.time_s:.3f}", e.current_path or "-", e.next_path, e.action])
    return buf.getvalue()


def timeseries_csv(rows: list[TimeSeriesRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIMESERIES_COLUMNS)
    for r in rows:
        w.writerow(
            [
                f"{r.time_s:.3f}",
                r.active_path,
                _fmt(r.network_est_ms),
                _fmt(r.network_truth_ms),
                _fmt(r.blocking_tx_ms),
                _fmt(r.blocking_rx_ms),
                _fmt(r.mouth_to_ear_ms),
                r.event,
            ]
        )
    return buf.getvalue()


def format_summary(summary: dict, notice: str = "") -> str:
    lines = [f"{k}={_fmt(v)}" for k, v in summary.items()]
    if notice:
        lines.append(f"notice={notice}")
    return "\n".join(lines) + "\n"


def write_report(report: RunReport, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "transitions.csv").write_text(transitions_csv(report.transitions), encoding="utf-8")
    (out / "timeseries.csv").write_text(timeseries_csv(report.rows), encoding="utf-8")
    (out / "summary.txt").write_text(format_summary(report.summary), encoding="utf-8")
    return out


def read_timeseries(path: str | Path) -> list[TimeSeriesRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            TimeSeriesRow(
                time_s=float(r["time_s"]),
                active_path=r["active_path"],
                network_est_ms=float(r["network_est_ms"]),
                network_truth_ms=float(r["network_truth_ms"]),
                blocking_tx_ms=float(r["blocking_tx_ms"]),
                blocking_rx_ms=float(r["blocking_rx_ms"]),
                mouth_to_ear_ms=float(r["mouth_to_ear_ms"]),
                event=r["event"],
            )
            for r in csv.DictReader(fh)
        ]


def read_summary(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        key, _, value = line.partition("=")
        out[key] = value
    return out

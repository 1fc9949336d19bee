import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import PAPER_CONFIGS, paper_topology, random_topology
from nmpsim.controller import RECEIVER, TRANSMITTER, ModificationRequest
from nmpsim.delay import AudioConfig, DelayModelError, SoundcardProfile, blocking_delta_both_sides
from nmpsim.endpoints import (
    AudioFrame,
    EndpointError,
    EndpointState,
    Transmitter,
    apply_audio_modification,
    build_audio_profile,
    deliver_request,
    on_frame_received,
    stream_tick,
)
from nmpsim.netsim import LatencyInjection, Network, Simulator


B0 = 128 / 22050 * 1000 + 0.5


def paper_profile(eid, d0=0.5):
    return SoundcardProfile(eid, d0, tuple(PAPER_CONFIGS))


def tx_state(d0=0.5, **kw):
    return EndpointState("tx", TRANSMITTER, paper_profile("tx", d0), **kw)


def rx_state(d0=0.5, **kw):
    return EndpointState("rx", RECEIVER, paper_profile("rx", d0), **kw)


def test_build_audio_profile_examples():
    p = build_audio_profile("tx", 0.5, PAPER_CONFIGS)
    assert [round(v, 3) for v in p.table().values()] == [6.305, 1.951]
    p = build_audio_profile("rx", 0.0, [("x", 64, 44100)])
    assert round(p.blocking_ms(0), 3) == 1.451
    with pytest.raises(DelayModelError):
        build_audio_profile("tx", 0.0, [])


def test_build_audio_profile_skips_invalid_configs():
    p = build_audio_profile("tx", 0.0, [("bad", 0, 44100), ("ok", 64, 44100), ("short",)])
    assert list(p.table()) == ["ok"]
    with pytest.raises(DelayModelError):
        build_audio_profile("tx", 0.0, [("bad", 64, -1)])


def test_state_validation():
    with pytest.raises(EndpointError):
        EndpointState("x", "mixer", paper_profile("x"))
    with pytest.raises(EndpointError):
        tx_state(active_config_index=2)


@pytest.mark.parametrize("index, gap_ms", [(0, 5.805), (1, 1.451)])
def test_frame_cadence(index, gap_ms):
    net = Network(paper_topology(), sim=Simulator())
    net.enumerate_paths("tx", "rx")
    net.install_rules("1-3-5", "audio")
    state = tx_state(active_config_index=index)
    tx = Transmitter(state, net, lambda d: None)
    tx.start(1.0, 1.2, record_ticks=True)
    net.sim.run(2.0)
    gaps = [(b - a) * 1000 for a, b in zip(tx.tick_times, tx.tick_times[1:])]
    assert all(round(g, 3) == gap_ms for g in gaps)
    # ticks are scheduled on a grid, so there is no drift
    frame_s = PAPER_CONFIGS[index].frame_size / PAPER_CONFIGS[index].sampling_rate
    assert tx.tick_times[-1] == pytest.approx(1.0 + (len(tx.tick_times) - 1) * frame_s, abs=1e-12)


def test_receiver_does_not_emit():
    assert stream_tick(rx_state(), 1.0) is None


def test_stream_tick_stamps_capture_before_send():
    state = tx_state()
    frame = stream_tick(state, 10.0)
    assert frame.config_label == "default"
    assert frame.captured_at_s == pytest.approx(10.0 - 0.006305, abs=1e-6)
    assert frame.samples == 128
    assert state.frames_sent == 1


def test_stream_tick_without_route_counts_drop():
    net = Network(paper_topology(), sim=Simulator())
    net.enumerate_paths("tx", "rx")
    state = tx_state()
    assert stream_tick(state, 0.0, net) is None
    assert (state.frames_sent, state.frames_dropped) == (0, 1)


def test_on_frame_received_examples():
    rx = rx_state()
    btx = paper_profile("tx").blocking_ms(0)
    # capture-to-arrival 15.805 ms
    frame = AudioFrame("audio", 0, "default", 1.0, 128, btx)
    d = on_frame_received(rx, frame, 1.0 + 0.015805)
    assert d.total_ms == pytest.approx(22.11, abs=0.001)
    assert rx.last_frame_mouth_to_ear_ms == d.total_ms
    # zero network delay
    d = on_frame_received(rx, frame, 1.0 + btx / 1000)
    assert d.total_ms == pytest.approx(2 * B0, abs=1e-9)
    assert round(d.total_ms, 2) == 12.61
    assert d.network_ms == pytest.approx(0.0, abs=1e-9)
    assert rx.frames_received == 2


def test_frame_measured_with_stamped_config():
    rx = rx_state()
    apply_audio_modification(rx, 1)
    old = AudioFrame("audio", 0, "default", 1.0, 128, paper_profile("tx").blocking_ms(0))
    d = on_frame_received(rx, old, 1.0 + B0 / 1000 + 0.005)
    assert d.blocking_rx_ms == pytest.approx(B0, abs=1e-12)
    assert d.total_ms == pytest.approx(2 * B0 + 5, abs=1e-9)


def test_transmitter_cannot_receive():
    with pytest.raises(EndpointError):
        on_frame_received(tx_state(), AudioFrame("audio", 0, "default", 0.0, 128, 6.305), 1.0)


def test_apply_audio_modification():
    tx, rx = tx_state(), rx_state()
    assert apply_audio_modification(rx, 1).ok
    assert rx.blocking_ms == pytest.approx(1.951, abs=0.0005)
    assert apply_audio_modification(tx, 1).ok
    # the transmitter switches at its next frame
    assert tx.active_config_index == 0 and tx.pending_index == 1
    frame = stream_tick(tx, 5.0)
    assert frame.config_label == "alternative" and tx.blocking_ms == pytest.approx(1.951, abs=0.0005)

    noop = apply_audio_modification(rx, 1)
    assert noop.ok and noop.detail == "no change"
    nack = apply_audio_modification(rx, 7)
    assert not nack.ok and rx.active_config_index == 1


def test_deliver_request_collects_acks():
    states = {"tx": tx_state(), "rx": rx_state()}
    acks = deliver_request(ModificationRequest(1.0, 1, ("tx", "rx", "ghost"), 16.9), states, 1.0)
    assert [(a.endpoint_id, a.ok) for a in acks] == [("tx", True), ("rx", True), ("ghost", False)]


def stream(topology, path_index=0, until=0.3, injections=(), d0=(0.5, 0.5), switch_at=None):
    """Stream over a real network; returns (network, path, [(delivery, breakdown)])."""
    sim = Simulator()
    net = Network(topology, seed=7, sim=sim)
    paths = net.enumerate_paths("tx", "rx")
    path = paths[path_index]
    net.install_rules(path, "audio")
    tx, rx = tx_state(d0[0]), rx_state(d0[1])
    out = []
    for inj in injections:
        sim.schedule(inj.at_time_s, "injection", net.apply_injection, inj)
    if switch_at is not None:
        sim.schedule(switch_at, "control-message", lambda _: (apply_audio_modification(tx, 1), apply_audio_modification(rx, 1)))
    Transmitter(tx, net, lambda d: out.append((d, on_frame_received(rx, d.payload, sim.now)))).start(0.0, until)
    sim.run(until + 1)
    return net, path, out


@pytest.mark.parametrize("seed", range(15))
def test_measured_total_matches_composition(seed):
    topo = random_topology(random.Random(seed))
    net, path, out = stream(topo, injections=[LatencyInjection(0.1, "link:tx-1", 3.0)])
    assert out
    for delivery, d in out:
        truth = net.transit_delay(path, delivery.sent_at_s)
        assert d.network_ms == pytest.approx(truth, abs=1e-9)
        assert d.total_ms == pytest.approx(2 * B0 + truth, abs=1e-9)


def test_modification_drops_total_by_blocking_delta():
    _, _, out = stream(paper_topology(), until=0.5, switch_at=0.25)
    totals = [d.total_ms for _, d in out]
    before, after = totals[0], totals[-1]
    assert {round(t, 9) for t in totals} == {round(before, 9), round(after, 9)}
    assert before - after == pytest.approx(blocking_delta_both_sides(PAPER_CONFIGS[0], PAPER_CONFIGS[1], 0.5), abs=1e-9)
    assert round(before - after, 2) == 8.71


@settings(max_examples=60, deadline=None)
@given(
    st.integers(16, 512),
    st.sampled_from([16000, 22050, 44100, 48000]),
    st.floats(0, 3),
    st.floats(0, 3),
)
def test_zero_jitter_totals_exact(frame, rate, d0_tx, d0_rx):
    cfgs = (AudioConfig("c", frame, rate),)
    sim = Simulator()
    net = Network(paper_topology(), sim=sim)
    net.enumerate_paths("tx", "rx")
    net.install_rules("1-4-5", "audio")
    tx = EndpointState("tx", TRANSMITTER, SoundcardProfile("tx", d0_tx, cfgs))
    rx = EndpointState("rx", RECEIVER, SoundcardProfile("rx", d0_rx, cfgs))
    got = []
    Transmitter(tx, net, lambda d: got.append(on_frame_received(rx, d.payload, sim.now))).start(0.0, 0.1)
    sim.run(1.0)
    expected = tx.blocking_ms + 7.0 + rx.blocking_ms
    assert got and all(g.total_ms == pytest.approx(expected, abs=1e-9) for g in got)
    assert rx.frames_received == tx.frames_sent

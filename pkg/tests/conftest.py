import random

import pytest

from nmpsim.controller import ControllerConfig
from nmpsim.delay import AudioConfig
from nmpsim.netsim import LatencyInjection, Link, Network, Simulator, Topology, enumerate_paths
from nmpsim.scenario import EndpointSpec, Scenario, load_paper_scenario

PAPER_CONFIGS = [AudioConfig("default", 128, 22050), AudioConfig("alternative", 64, 44100)]


def paper_topology() -> Topology:
    return load_paper_scenario().topology


def random_topology(rng: random.Random, max_switches: int = 6, jitter_ms: float = 0.0) -> Topology:
    """Connected random topology with hosts tx (on switch 1) and rx (on switch n)."""
    n = rng.randint(2, max_switches)
    switches = [str(i) for i in range(1, n + 1)]
    links = [Link("tx", "1", round(rng.uniform(0, 3), 3), jitter_ms), Link(str(n), "rx", round(rng.uniform(0, 3), 3), jitter_ms)]
    pairs = set()
    # spanning chain keeps tx and rx connected
    order = switches[1:-1]
    rng.shuffle(order)
    chain = ["1", *order, str(n)]
    for a, b in zip(chain, chain[1:]):
        pairs.add(tuple(sorted((a, b))))
    for a in switches:
        for b in switches:
            if a < b and rng.random() < 0.35:
                pairs.add((a, b))
    for a, b in sorted(pairs):
        links.append(Link(a, b, round(rng.uniform(0.1, 10), 3), jitter_ms))
    return Topology(set(switches), {"tx", "rx"}, links)


def random_scenario(seed: int, jitter_ms: float = 0.0) -> Scenario:
    rng = random.Random(seed)
    topo = random_topology(rng, 5, jitter_ms)
    paths = enumerate_paths(topo, "tx", "rx")
    duration = 120.0
    injections = []
    t = 0.0
    for _ in range(rng.randint(0, 6)):
        t = round(t + rng.uniform(3, 15), 3)
        if t > duration:
            break
        p = rng.choice(paths)
        injections.append(LatencyInjection(t, f"path:{p.path_id}", round(rng.uniform(-4, 10), 3)))
    configs = [AudioConfig("q0", 256, 44100), AudioConfig("q1", 128, 44100), AudioConfig("q2", 64, 48000)]
    return Scenario(
        topology=topo,
        source="tx",
        destination="rx",
        transmitter=EndpointSpec("tx", round(rng.uniform(0, 2), 3), configs),
        receiver=EndpointSpec("rx", round(rng.uniform(0, 2), 3), configs),
        seed=seed,
        duration_s=duration,
        stream_start_s=10.0,
        injections=injections,
        probe_start_s=1.0,
        probe_period_s=1.0,
        sample_period_s=1.0,
        controller=ControllerConfig(ept_ms=25.0, guard_margin_ms=rng.choice([0.0, 1.0])),
        name=f"random-{seed}",
    )


@pytest.fixture
def paper_scenario() -> Scenario:
    return load_paper_scenario()


@pytest.fixture
def net() -> Network:
    return Network(paper_topology(), seed=1, sim=Simulator())


# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary
ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def criterion(request):
    """Record and assert one acceptance criterion: criterion(key, ok, detail)."""

    def check(key: str, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES[key] = f"{'PASS' if ok else 'FAIL'}  {key}: {detail}"
        assert ok, detail

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])

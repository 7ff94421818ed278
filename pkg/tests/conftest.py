import numpy as np
import pytest

from dtnrl.config import SimConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cfg():
    """25-node RWP desk scenario with testing buffer and TTL."""
    return SimConfig(tx_range=50.0, duration=1500, cooldown=500, buffer_cap=2000,
                     initial_ttl=3000, rng_seed=3, scenario_id="small",
                     flow_arrival_rate=0.01)


def line_cfg(n=3, duration=50, **kw):
    """Static line scenario: nodes 40 m apart, tx range 50 m."""
    base = dict(node_count=n, tx_range=50.0, duration=duration, cooldown=0,
                flow_arrival_rate=0.0, scenario_id="line", model="static")
    base.update(kw)
    return SimConfig().replace(**{k: v for k, v in base.items() if k != "model"},
                               model=base["model"], speed_mix=(("slow", n),))


def line_points(n, gap=40.0):
    return [(10.0 + gap * i, 250.0) for i in range(n)]


ACCEPTANCE = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    n = mark.args[0]
    detail = dict(item.user_properties).get("detail", "")
    ok = call.excinfo is None
    ACCEPTANCE[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {item.name}  {detail}".rstrip()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])

import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from botmesh.core import Observation
from botmesh.simnet import AsPool, FamilyParams, SimConfig

settings.register_profile("default", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=1000, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parent.parent
TESTDATA = ROOT / "testdata"
CONFIGS = ROOT / "scripts" / "configs"

DAY_MS = 86_400_000
T0 = 1_656_633_600_000  # 2022-07-01T00:00:00Z in ms


def static_families():
    return {"HJ": FamilyParams(mean_uptime_s=0.0, persistent=False),
            "MZ": FamilyParams(mean_uptime_s=0.0, persistent=True)}


def make_cfg(pools, **kw):
    kw.setdefault("families", static_families())
    return SimConfig(as_pools=pools, **kw).validate()


def one_pool(n, asn=4134, country="CN", prefix="10.0.0.0/16", **kw):
    return AsPool(asn, country, prefix, n, **kw)


def obs(ts, fam="MZ", ip="10.0.0.1", bot="a" * 40, event="REPLY_NODES", port=6881):
    return Observation(ts, fam, ip, port, bot, event)


@pytest.fixture
def tmp_out(tmp_path):
    return tmp_path


_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the line is echoed and repeated in the session summary."""

    def record(n: int, title: str, ok: bool, detail: str, elapsed: float, budget: float) -> None:
        within = elapsed <= budget
        line = (f"{'PASS' if ok and within else 'FAIL'} criterion {n:2d}: {title} | {detail} | "
                f"{elapsed:.1f}s of {budget:g}s")
        _ACCEPTANCE.append((n, line))
        print(line)
        assert ok, line
        assert within, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from lpnmf_traffic.domain import (NetworkTopology, Scenario, SequenceInfo, SequenceManifest,
                                  TrafficStateMatrix)
from lpnmf_traffic.generator import GeneratorConfig


def chain_topology(n):
    """Links 0 -> 1 -> ... -> n-1."""
    up = tuple(((i - 1,) if i > 0 else ()) for i in range(n))
    down = tuple(((i + 1,) if i < n - 1 else ()) for i in range(n))
    return NetworkTopology(up, down)


def make_dataset(n_links=4, n_seq=2, steps=3, seed=0):
    rng = np.random.default_rng(seed)
    topo = chain_topology(n_links)
    scen = [Scenario.ITD, Scenario.ATD, Scenario.ETD]
    infos = tuple(SequenceInfo(f"S{k}", scen[k % 3], steps, f"S{k}.csv") for k in range(n_seq))
    index = tuple((f"S{k}", t) for k in range(n_seq) for t in range(steps))
    matrix = TrafficStateMatrix(rng.random((n_links, n_seq * steps)), index)
    return matrix, SequenceManifest(infos, 15.0), topo


@pytest.fixture
def tiny_dataset():
    return make_dataset()


# Small generator setup: every scenario present, runs in well under a second.
SMALL_GEN = GeneratorConfig(grid_rows=5, grid_cols=5, n_steps=12, peak_step=6, etd_peak_step=5,
                            relax_steps=6, n_itd=4, n_atd=5, n_etd=3, seed=1)


# ---------------------------------------------------------------- acceptance report

_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if item.module.__name__ != "test_acceptance" or not item.name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        title = (item.function.__doc__ or item.name).strip().splitlines()[0]
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        status = "PASS" if report.passed else "FAIL"
        line = f"{status} {title}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE.append(line)
        print("\n" + line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)

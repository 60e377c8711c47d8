"""Shared fixtures: built sample guests and a small recorded trace.

Guest builds and the reference recording are session-scoped; recording
runs the guest live against the host clock, so each one costs seconds.
"""

import sys

import pytest

from ervm.counter import CounterConfig
from ervm.engine import record
from ervm.guest import sample_guest


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo acceptance verdicts after the run so capture cannot hide them."""
    mod = (sys.modules.get("test_acceptance")
           or sys.modules.get("tests.test_acceptance"))
    for line in getattr(mod, "ACCEPTANCE_RESULTS", []):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def echo_guest():
    return sample_guest("echo")


@pytest.fixture(scope="session")
def racey_guest():
    return sample_guest("racey")


@pytest.fixture(scope="session")
def ticker_guest():
    return sample_guest("ticker")


ECHO_STIMULUS = [(5, b"the quick brown fox jumps over the lazy dog\x04")]


@pytest.fixture(scope="session")
def echo_record(echo_guest, tmp_path_factory):
    """One echo recording reused by engine/debug/server tests."""
    path = str(tmp_path_factory.mktemp("trace") / "echo.log")
    summary = record(echo_guest.kernel_image, b"", ECHO_STIMULUS,
                     CounterConfig(), path, checkpoint_interval=100_000)
    assert summary.exit_reason == "halted"
    return path, summary

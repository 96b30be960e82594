import asyncio
import logging

import pytest

from canary_identity.identity import AgentState
from canary_identity.pipeline import JobStore, Pipeline, sequential_ids


@pytest.fixture(autouse=True)
def _no_strawman_env(monkeypatch):
    monkeypatch.delenv("IDENTITY_INCLUDES_VERSIONS", raising=False)


@pytest.fixture(autouse=True)
def _quiet_pipeline_log():
    logging.getLogger("canary_identity.pipeline").setLevel(logging.ERROR)
    yield
    logging.getLogger("canary_identity.pipeline").setLevel(logging.NOTSET)


def run(coro):
    return asyncio.run(coro)


def make_pipeline(names=("grasp", "place"), **kwargs):
    state = AgentState.create(list(names), "v1.0.0", strawman_flag=kwargs.pop("strawman", False))
    store = JobStore(id_factory=sequential_ids())
    return state, store, Pipeline(state, store, **kwargs)


@pytest.fixture
def pipe():
    return make_pipeline()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

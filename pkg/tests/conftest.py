import random
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from steinerstab.graph import load_graph, random_graph

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


def fixture_graph(name: str):
    return load_graph((FIXTURES / name).read_text())


@pytest.fixture
def g1():
    return fixture_graph("g1.graph")


@st.composite
def graphs(draw, min_nodes=2, max_nodes=8, max_weight=10):
    """Random connected graph; the draw is a seed so shrinking stays cheap."""
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(min_nodes, max_nodes))
    return random_graph(random.Random(seed), n, max_weight=max_weight)

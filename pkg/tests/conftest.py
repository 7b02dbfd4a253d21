import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from pgos.graphs import Graph

torch.set_num_threads(1)

settings.register_profile("pgos", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pgos")


def path_graph(n: int = 3, d: int = 2) -> Graph:
    adj = np.zeros((n, n), dtype=np.uint8)
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = 1
    feats = np.arange(n * d, dtype=np.float64).reshape(n, d) / (n * d)
    return Graph(adj, feats)


def random_graph(rng: np.random.Generator, n: int, d: int = 2, p: float = 0.3) -> Graph:
    upper = np.triu((rng.random((n, n)) < p).astype(np.uint8), 1)
    return Graph(upper + upper.T, rng.standard_normal((n, d)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])

"""Shared random-instance builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from spillover.design import bernoulli, sample
from spillover.errors import DegenerateArm, SingularDesign
from spillover.estimands import build_weights
from spillover.network import build_network
from spillover.oracle import PotentialOutcomeModel


def random_er_network(rng: np.random.Generator, max_clusters: int, max_size: int, min_size: int = 3):
    K = int(rng.integers(1, max_clusters + 1))
    sizes = rng.integers(min_size, max_size + 1, size=K)
    edges = []
    for n in sizes:
        mask = rng.random((n, n)) < rng.uniform(0.3, 0.8)
        np.fill_diagonal(mask, False)
        edges.append([(int(a), int(b)) for a, b in zip(*np.nonzero(mask))])
    return build_network(sizes.tolist(), edges)


def random_instance(rng, max_clusters=5, max_size=10, kinds=("outward", "inward", "pairwise"), p=None):
    """Network, weights, design, Z, Y, binary X with both arms present."""
    while True:
        net = random_er_network(rng, max_clusters, max_size)
        kind = kinds[int(rng.integers(len(kinds)))]
        weights = build_weights(net, kind)
        prob = float(rng.choice([0.3, 0.5, 0.22])) if p is None else p
        design = bernoulli(prob)
        z = sample(design, net, rng)
        zs = z[weights.sender]
        if zs.min() == zs.max():
            continue
        y = rng.normal(1.0, 2.0, net.n_units)
        X = (rng.random(net.n_units) < 0.5).astype(float)
        return net, weights, design, z, y, X


def random_model(rng, net, heterogeneous=True):
    N = net.n_units
    X = (rng.random(N) < 0.5).astype(float)
    base = np.array([0.8, 2.0, 0.5, 0.7, 0.5, 0.4])
    coef = base + (rng.normal(0, 0.3, (N, 6)) if heterogeneous else 0.0)
    coef = np.broadcast_to(coef, (N, 6)).copy()
    return PotentialOutcomeModel(net, "model3", coef, rng.normal(0, 0.2, N), X)


def redraw(fn, rng, tries=200):
    """Call ``fn(rng)`` until it does not hit an empty arm or a singular system."""
    for _ in range(tries):
        try:
            return fn(rng)
        except (SingularDesign, DegenerateArm):
            continue
    raise AssertionError("no admissible instance found")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

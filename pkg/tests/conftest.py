"""Shared fixtures: small Laakso graphs, their contracted metrics and seeded generators."""

from fractions import Fraction
from functools import lru_cache

import pytest

from laakso_lab.core.config import settings
from laakso_lab.core.rng import make_rng
from laakso_lab.services.laakso import LaaksoGraph, LaaksoParams, build_graph
from laakso_lab.services.shortcuts import EtaGraph


@lru_cache(maxsize=None)
def laakso(M: int = 2, N: int = 4, n: int = 1) -> LaaksoGraph:
    """Cached constant-N graphs, shared with hypothesis tests (no function-scoped fixtures there)."""
    return build_graph(LaaksoParams.constant(M, N, n))


@pytest.fixture(scope="session")
def g1() -> LaaksoGraph:
    return laakso(2, 4, 1)


@pytest.fixture(scope="session")
def g2() -> LaaksoGraph:
    return laakso(2, 4, 2)


@pytest.fixture(scope="session")
def eg1(g1) -> EtaGraph:
    return EtaGraph(g1, (Fraction(1, 2),))


@pytest.fixture(scope="session")
def eg2(g2) -> EtaGraph:
    return EtaGraph(g2, (Fraction(1, 2), Fraction(1, 4)))


@pytest.fixture
def rng():
    return make_rng(7)


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    root = tmp_path / "runs"
    monkeypatch.setattr(settings, "OUTPUT_ROOT", str(root))
    return root

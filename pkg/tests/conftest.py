from pathlib import Path

import hypothesis
import numpy as np
import pytest

from lowertail.core.config import get_settings
from lowertail.schemas.distributions import JointBinaryDistribution
from lowertail.schemas.hypergraphs import PatternHypergraph
from lowertail.services.builders import copy_hypergraph

hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.load_profile("ci")

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

TRIANGLE = PatternHypergraph(s=2, v=3, edges=[[0, 1], [1, 2], [0, 2]])


def random_joint(rng: np.random.Generator, width: int) -> JointBinaryDistribution:
    """A joint law of (X, Z) with full support on {0,1} x [width]."""
    table = rng.dirichlet(np.ones(2 * width)).reshape(2, width)
    return JointBinaryDistribution(mass=table.tolist())


@pytest.fixture(autouse=True)
def fresh_settings():
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def triangle() -> PatternHypergraph:
    return TRIANGLE


@pytest.fixture
def k4_triangles():
    """Triangles of K_4 over its six edges: 4 hyperedges, 3-uniform."""
    return copy_hypergraph(TRIANGLE, 4)

import random
from pathlib import Path

import pytest

from treesynth.envs import load_environment
from treesynth.grammar import constrained_sample

REPO = Path(__file__).resolve().parent.parent
GRAMMAR_DIR = REPO / "grammars"


@pytest.fixture(scope="session")
def csg2d():
    return load_environment("csg2d")


@pytest.fixture(scope="session")
def tinysvg():
    return load_environment("tinysvg")


@pytest.fixture(scope="session")
def rainbow():
    return load_environment("rainbow")


@pytest.fixture(scope="session")
def sketch_env():
    return load_environment("csg2d-sketch")


def sample_programs(env, n, sigma_max=8, seed=0):
    rng = random.Random(seed)
    g = env.grammar
    return [constrained_sample(g, g.start_symbol, 0, sigma_max, rng) for _ in range(n)]

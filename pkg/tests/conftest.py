import numpy as np
import pytest

from teamform.model import (
    CoordinationGraph,
    ExpertPool,
    GraphCost,
    LinearCost,
    MaxKCover,
    ProblemInstance,
    SkillUniverse,
    Task,
)


def random_instance(rng, m, n, variant, lam=50.0, k=None, cost_scale=60.0, min_skills=0):
    """Random instance; every expert holds each skill with probability 0.4."""
    membership = (rng.random((n, m)) < 0.4).astype(np.int8)
    if min_skills:
        for i in range(n):
            if membership[i].sum() < min_skills:
                membership[i, rng.choice(m, min_skills, replace=False)] = 1
    pool = ExpertPool.from_membership(membership)
    size = int(rng.integers(1, m + 1))
    task = Task(frozenset(rng.choice(m, size, replace=False).tolist()), "t")
    if variant == "maxk":
        v = MaxKCover(int(rng.integers(1, n + 1)) if k is None else k)
    elif variant == "linear":
        v = LinearCost(np.round(rng.uniform(0, cost_scale, n), 2))
    else:
        d = np.triu(rng.uniform(0, cost_scale, (n, n)), 1)
        v = GraphCost(CoordinationGraph(d + d.T))
    return ProblemInstance(pool, SkillUniverse.of_size(m), task, v, lam)


def all_assignments(n):
    """Every binary vector of length n, lexicographic order."""
    ints = np.arange(1 << n)
    return ((ints[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.int8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_pool():
    # skills a=0, b=1, c=2; three experts
    return ExpertPool((frozenset({0}), frozenset({1}), frozenset({1, 2})), 3)

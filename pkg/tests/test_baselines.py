import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from teamform import baselines, model, solvers
from teamform.errors import VariantError
from teamform.model import ExpertPool, LinearCost, MaxKCover, ProblemInstance, SkillUniverse, Task

from conftest import random_instance


def test_greedy_max_k_cover_picks_largest_gain_first():
    pool = ExpertPool((frozenset({0}), frozenset({0, 1, 2}), frozenset({3})), 4)
    inst = ProblemInstance(pool, SkillUniverse.of_size(4), Task(frozenset({0, 1, 2, 3})), MaxKCover(1))
    assert baselines.greedy_max_k_cover(inst).x.selected == (1,)


def test_greedy_stops_when_nothing_left_to_cover():
    pool = ExpertPool((frozenset({0}), frozenset({0}), frozenset({1})), 2)
    inst = ProblemInstance(pool, SkillUniverse.of_size(2), Task(frozenset({0})), MaxKCover(3))
    res = baselines.greedy_max_k_cover(inst)
    assert res.x.size == 1 and res.objective == 50


def test_greedy_variant_checks(rng):
    with pytest.raises(VariantError):
        baselines.greedy_max_k_cover(random_instance(rng, 3, 3, "linear"))
    with pytest.raises(VariantError):
        baselines.greedy_cost_scaled(random_instance(rng, 3, 3, "graph"))
    with pytest.raises(VariantError):
        baselines.greedy_ratio_graph(random_instance(rng, 3, 3, "maxk"))


def test_cost_scaled_greedy_skips_expensive_experts():
    pool = ExpertPool((frozenset({0}), frozenset({1})), 2)
    inst = ProblemInstance(pool, SkillUniverse.of_size(2), Task(frozenset({0, 1})), LinearCost([10.0, 30.0]), 50.0)
    # 50 - 2*30 < 0 so expert 1 is rejected
    assert baselines.greedy_cost_scaled(inst).x.selected == (0,)


def test_greedy_dispatch(rng):
    for variant in ("maxk", "linear", "graph"):
        inst = random_instance(rng, 4, 5, variant)
        res = baselines.greedy(inst)
        assert res.name == "greedy"
        assert res.objective == model.objective(inst, res.x)


def test_jaccard_ranking_ties_to_lower_index():
    pool = ExpertPool((frozenset({1}), frozenset({0}), frozenset({0}), frozenset({0, 1})), 2)
    inst = ProblemInstance(pool, SkillUniverse.of_size(2), Task(frozenset({0})), MaxKCover(2))
    assert baselines.jaccard_ranking(inst) == [1, 2, 3, 0]


def test_topk_sizes(rng):
    inst = random_instance(rng, 4, 5, "linear")
    assert baselines.topk_jaccard(inst, 0).x.size == 0
    assert baselines.topk_jaccard(inst, 9).x.size == 5
    assert baselines.topk_jaccard(inst, 2).x.size == 2
    with pytest.raises(ValueError):
        baselines.topk_jaccard(inst, -1)


def test_topk_ignores_objective():
    # expert 0 matches the task exactly but is ruinously expensive; topk still picks it
    pool = ExpertPool((frozenset({0}), frozenset({0, 1})), 2)
    inst = ProblemInstance(pool, SkillUniverse.of_size(2), Task(frozenset({0})), LinearCost([500.0, 1.0]))
    assert baselines.topk_jaccard(inst, 1).x.selected == (0,)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_greedy_max_k_cover_approximation_bound(seed, k):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, 6, 7, "maxk", k=k)
    opt = solvers.solve_exact_objective(inst).objective
    assert baselines.greedy_max_k_cover(inst).objective >= (1 - 1 / math.e) * opt - 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["maxk", "linear", "graph"]))
def test_baselines_never_beat_exact(seed, variant):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, 5, 6, variant)
    opt = solvers.solve_exact_objective(inst).objective
    assert baselines.greedy(inst).objective <= opt + 1e-9
    assert baselines.topk_jaccard(inst, 2).objective <= opt + 1e-9

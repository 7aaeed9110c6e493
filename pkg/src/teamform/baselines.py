"""Combinatorial baselines: the three greedy heuristics and objective-agnostic top-k."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import model
from .errors import VariantError
from .model import Assignment, GraphCost, LinearCost, MaxKCover, ProblemInstance


@dataclass(frozen=True)
class BaselineResult:
    x: Assignment
    objective: float
    name: str


def _result(instance: ProblemInstance, chosen: list[int], name: str) -> BaselineResult:
    x = Assignment.from_indices(instance.n, chosen)
    return BaselineResult(x, model.objective(instance, x), name)


def _require(instance: ProblemInstance, kind: type) -> None:
    if not isinstance(instance.variant, kind):
        raise VariantError(f"{kind.__name__} baseline called on a {type(instance.variant).__name__} instance")


def _required_sets(instance: ProblemInstance) -> list[set[int]]:
    req = instance.task.required
    return [set(skills & req) for skills in instance.pool.experts]


def greedy_max_k_cover(instance: ProblemInstance) -> BaselineResult:
    """Pick the expert with the largest marginal coverage, up to ``k`` times."""
    _require(instance, MaxKCover)
    useful = _required_sets(instance)
    covered: set[int] = set()
    chosen: list[int] = []
    for _ in range(instance.variant.k):
        gains = [len(s - covered) if i not in chosen else -1 for i, s in enumerate(useful)]
        best = int(np.argmax(gains)) if gains else 0
        if not gains or gains[best] <= 0:
            break
        chosen.append(best)
        covered |= useful[best]
    return _result(instance, sorted(chosen), "greedy")


def greedy_cost_scaled(instance: ProblemInstance, scale: float = 2.0) -> BaselineResult:
    """Cost-scaled greedy: add the expert maximising ``lam*gain - scale*cost`` while it is positive."""
    _require(instance, LinearCost)
    useful = _required_sets(instance)
    kappa = instance.variant.kappa
    covered: set[int] = set()
    chosen: list[int] = []
    while True:
        best, best_score = -1, 0.0
        for i, s in enumerate(useful):
            if i in chosen:
                continue
            score = instance.lam * len(s - covered) - scale * kappa[i]
            if score > best_score:
                best, best_score = i, score
        if best < 0:
            break
        chosen.append(best)
        covered |= useful[best]
    return _result(instance, sorted(chosen), "greedy")


def greedy_ratio_graph(instance: ProblemInstance) -> BaselineResult:
    """Add the expert with the best coverage-to-coordination-cost ratio while it improves the objective.

    A candidate whose marginal coordination cost is zero has an infinite ratio;
    several such candidates are ranked by their marginal coverage.
    """
    _require(instance, GraphCost)
    useful = _required_sets(instance)
    dist = instance.variant.graph.distance
    covered: set[int] = set()
    chosen: list[int] = []
    while True:
        best, best_key = -1, None
        for i, s in enumerate(useful):
            if i in chosen:
                continue
            gain = len(s - covered)
            extra = float(dist[i, chosen].sum()) if chosen else 0.0
            if instance.lam * gain - extra <= 0:
                continue
            key = (math.inf, gain) if extra == 0 else (gain / extra, gain)
            if best_key is None or key > best_key:
                best, best_key = i, key
        if best < 0:
            break
        chosen.append(best)
        covered |= useful[best]
    return _result(instance, sorted(chosen), "greedy")


def greedy(instance: ProblemInstance) -> BaselineResult:
    """Greedy baseline matching the instance's cost model."""
    v = instance.variant
    if isinstance(v, MaxKCover):
        return greedy_max_k_cover(instance)
    if isinstance(v, LinearCost):
        return greedy_cost_scaled(instance)
    return greedy_ratio_graph(instance)


def jaccard_ranking(instance: ProblemInstance) -> list[int]:
    """Experts ordered by Jaccard similarity with the task, ties to the lower index."""
    sims = [model.jaccard(skills, instance.task.required) for skills in instance.pool.experts]
    return sorted(range(instance.n), key=lambda i: (-sims[i], i))


def topk_jaccard(instance: ProblemInstance, k_ref: int) -> BaselineResult:
    if k_ref < 0:
        raise ValueError("k_ref must be nonnegative")
    chosen = jaccard_ranking(instance)[: min(k_ref, instance.n)]
    return _result(instance, sorted(chosen), "topk")

"""Domain types for team formation and the objective functions evaluated on them.

An instance couples a pool of experts (each a set of skill indices) with a task
(a set of required skill indices) and one of three cost models:

* ``MaxKCover``   -- cardinality constraint, cost is 0 or infeasible
* ``LinearCost``  -- each hired expert carries an individual cost
* ``GraphCost``   -- every hired pair pays its coordination distance

The objective of an assignment ``x`` is ``lam * coverage - cost``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import DimensionError, EmptyTaskError

#: Cost of an assignment that breaks the cardinality constraint.
INFEASIBLE_COST = math.inf
#: Objective of an assignment that breaks the cardinality constraint.
INFEASIBLE_OBJECTIVE = -math.inf


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SkillUniverse:
    skills: tuple[str, ...]
    index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        skills = tuple(self.skills)
        if len(set(skills)) != len(skills):
            raise ValueError("skill identifiers must be unique")
        object.__setattr__(self, "skills", skills)
        object.__setattr__(self, "index", {s: i for i, s in enumerate(skills)})

    @classmethod
    def of_size(cls, m: int) -> "SkillUniverse":
        return cls(tuple(f"s{j}" for j in range(m)))

    def __len__(self) -> int:
        return len(self.skills)


@dataclass(frozen=True, eq=False)
class ExpertPool:
    """Experts as skill-index sets plus the dense ``n x m`` membership matrix."""

    experts: tuple[frozenset[int], ...]
    n_skills: int
    membership: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        experts = tuple(frozenset(int(j) for j in e) for e in self.experts)
        e_mat = np.zeros((len(experts), self.n_skills), dtype=np.int8)
        for i, skills in enumerate(experts):
            for j in skills:
                if not 0 <= j < self.n_skills:
                    raise ValueError(f"expert {i} has skill index {j} outside 0..{self.n_skills - 1}")
                e_mat[i, j] = 1
        object.__setattr__(self, "experts", experts)
        object.__setattr__(self, "membership", _frozen(e_mat))

    @classmethod
    def from_membership(cls, membership) -> "ExpertPool":
        e_mat = np.asarray(membership)
        return cls(tuple(frozenset(np.flatnonzero(row).tolist()) for row in e_mat), e_mat.shape[1])

    @property
    def n(self) -> int:
        return len(self.experts)

    @property
    def m(self) -> int:
        return self.n_skills

    def __eq__(self, other):
        if not isinstance(other, ExpertPool):
            return NotImplemented
        return self.n_skills == other.n_skills and self.experts == other.experts

    def __hash__(self):
        return hash((self.n_skills, self.experts))


@dataclass(frozen=True)
class Task:
    required: frozenset[int]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "required", frozenset(int(j) for j in self.required))

    def __len__(self) -> int:
        return len(self.required)

    def check(self, m: int) -> None:
        bad = [j for j in self.required if not 0 <= j < m]
        if bad:
            raise ValueError(f"task {self.name!r} requires skills outside 0..{m - 1}: {sorted(bad)}")


@dataclass(frozen=True, eq=False)
class Assignment:
    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x)
        if x.ndim != 1:
            raise DimensionError("assignment", "1-d vector", x.shape)
        if not np.all((x == 0) | (x == 1)):
            raise ValueError("assignment entries must be 0 or 1")
        object.__setattr__(self, "x", _frozen(x.astype(np.int8)))

    @classmethod
    def from_indices(cls, n: int, selected: Iterable[int]) -> "Assignment":
        x = np.zeros(n, dtype=np.int8)
        x[list(selected)] = 1
        return cls(x)

    @property
    def size(self) -> int:
        return int(self.x.sum())

    @property
    def selected(self) -> tuple[int, ...]:
        return tuple(np.flatnonzero(self.x).tolist())

    def __len__(self) -> int:
        return len(self.x)

    def __eq__(self, other):
        if not isinstance(other, Assignment):
            return NotImplemented
        return np.array_equal(self.x, other.x)

    def __hash__(self):
        return hash(self.x.tobytes())


@dataclass(frozen=True, eq=False)
class CoordinationGraph:
    """Pairwise coordination distances between experts."""

    distance: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.distance, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise DimensionError("distance matrix", "square", d.shape)
        if not np.allclose(d, d.T, rtol=0, atol=1e-12):
            raise ValueError("distance matrix must be symmetric")
        if np.any(d < 0):
            raise ValueError("distances must be nonnegative")
        if np.any(np.diag(d) != 0):
            raise ValueError("distance matrix must have a zero diagonal")
        object.__setattr__(self, "distance", _frozen(d))

    @property
    def n(self) -> int:
        return self.distance.shape[0]

    def __eq__(self, other):
        if not isinstance(other, CoordinationGraph):
            return NotImplemented
        return np.array_equal(self.distance, other.distance)


@dataclass(frozen=True)
class MaxKCover:
    k: int
    name = "maxk"

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be nonnegative")


@dataclass(frozen=True, eq=False)
class LinearCost:
    kappa: np.ndarray
    name = "linear"

    def __post_init__(self):
        kappa = np.asarray(self.kappa, dtype=float)
        if kappa.ndim != 1:
            raise DimensionError("kappa", "1-d vector", kappa.shape)
        if np.any(kappa < 0):
            raise ValueError("expert costs must be nonnegative")
        object.__setattr__(self, "kappa", _frozen(kappa))

    def __eq__(self, other):
        return isinstance(other, LinearCost) and np.array_equal(self.kappa, other.kappa)


@dataclass(frozen=True)
class GraphCost:
    graph: CoordinationGraph
    name = "graph"


Variant = Union[MaxKCover, LinearCost, GraphCost]
VARIANT_NAMES = ("maxk", "linear", "graph")


@dataclass(frozen=True)
class ProblemInstance:
    pool: ExpertPool
    universe: SkillUniverse
    task: Task
    variant: Variant
    lam: float = 50.0

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if len(self.universe) != self.pool.m:
            raise DimensionError("skill universe", self.pool.m, len(self.universe))
        self.task.check(self.pool.m)
        v = self.variant
        if isinstance(v, MaxKCover) and v.k > self.pool.n:
            raise ValueError(f"k={v.k} exceeds the number of experts {self.pool.n}")
        if isinstance(v, LinearCost) and len(v.kappa) != self.pool.n:
            raise DimensionError("kappa", self.pool.n, len(v.kappa))
        if isinstance(v, GraphCost) and v.graph.n != self.pool.n:
            raise DimensionError("coordination graph", self.pool.n, v.graph.n)

    @property
    def m(self) -> int:
        return self.pool.m

    @property
    def n(self) -> int:
        return self.pool.n

    def with_task(self, task: Task) -> "ProblemInstance":
        return ProblemInstance(self.pool, self.universe, task, self.variant, self.lam)

    def required_mask(self) -> np.ndarray:
        mask = np.zeros(self.m, dtype=bool)
        mask[list(self.task.required)] = True
        return mask


def _as_x(x, n: int) -> np.ndarray:
    arr = x.x if isinstance(x, Assignment) else np.asarray(x)
    if arr.shape != (n,):
        raise DimensionError("assignment", n, arr.shape)
    return arr


def covered_skills(pool: ExpertPool, x) -> np.ndarray:
    """Boolean mask over all m skills held by at least one selected expert."""
    arr = _as_x(x, pool.n)
    return (arr.astype(np.int64) @ pool.membership) > 0


def coverage(task: Task, x, pool: ExpertPool) -> int:
    """Number of required skills held by the selected experts."""
    covered = covered_skills(pool, x)
    return int(sum(1 for j in task.required if covered[j]))


def fractional_coverage(task: Task, x, pool: ExpertPool) -> float:
    if len(task) == 0:
        raise EmptyTaskError("fractional coverage is undefined for a task with no required skills")
    return coverage(task, x, pool) / len(task)


def pair_cost(distance: np.ndarray, x) -> float:
    """Sum of distances over unordered pairs of selected experts."""
    idx = np.flatnonzero(x)
    if len(idx) < 2:
        return 0.0
    sub = distance[np.ix_(idx, idx)]
    return float(np.triu(sub, 1).sum())


def cost(instance: ProblemInstance, x) -> float:
    arr = _as_x(x, instance.n)
    v = instance.variant
    if isinstance(v, MaxKCover):
        return 0.0 if int(arr.sum()) <= v.k else INFEASIBLE_COST
    if isinstance(v, LinearCost):
        return float(v.kappa @ arr)
    return pair_cost(v.graph.distance, arr)


def objective(instance: ProblemInstance, x) -> float:
    c = cost(instance, x)
    if c == INFEASIBLE_COST:
        return INFEASIBLE_OBJECTIVE
    return instance.lam * coverage(instance.task, x, instance.pool) - c


def induced_skill_vector(instance: ProblemInstance, x) -> np.ndarray:
    """Best skill indicator for a fixed expert selection.

    Only required skills carry objective weight, so ``s_j`` is 1 exactly for the
    required skills that the selection covers.
    """
    covered = covered_skills(instance.pool, x)
    return (covered & instance.required_mask()).astype(np.int8)


def jaccard(a: Sequence[int] | frozenset, b: Sequence[int] | frozenset) -> float:
    """Jaccard similarity of two index sets; two empty sets count as identical."""
    a, b = set(a), set(b)
    union = len(a | b)
    if union == 0:
        return 1.0
    return len(a & b) / union

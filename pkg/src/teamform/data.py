"""Dataset files, coordination-graph builders and synthetic dataset generators.

Instance files are line-oriented text::

    # comment
    skills: python sql design
    expert alice: python sql
    expert bob: design
    expert_cost alice 12.5
    task t1: python design
    edge alice bob 0.75

Expert and task order in the file define their indices.  Edges are undirected;
pairs without an edge line have distance 0.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetParseError, InfeasibleSpecError
from .model import CoordinationGraph, ExpertPool, GraphCost, LinearCost, MaxKCover, ProblemInstance, SkillUniverse, Task

DATA_DIR_ENV = "TEAMFORM_DATA_DIR"


@dataclass(eq=False)
class Dataset:
    universe: SkillUniverse
    pool: ExpertPool
    tasks: list[Task]
    graph: CoordinationGraph | None = None
    costs: np.ndarray | None = None
    expert_ids: tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self):
        if not self.expert_ids:
            self.expert_ids = tuple(f"e{i}" for i in range(self.pool.n))

    def __iter__(self):
        # unpacks as (pool, universe, tasks, graph)
        return iter((self.pool, self.universe, self.tasks, self.graph))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        same_costs = (self.costs is None and other.costs is None) or (
            self.costs is not None and other.costs is not None and np.array_equal(self.costs, other.costs)
        )
        return (
            self.universe == other.universe
            and self.pool == other.pool
            and self.tasks == other.tasks
            and self.graph == other.graph
            and same_costs
            and self.expert_ids == other.expert_ids
        )

    def instance(self, task: Task | int, variant: str, k: int = 3, lam: float = 50.0) -> ProblemInstance:
        """Build a problem instance for one task under the named cost model."""
        if isinstance(task, int):
            task = self.tasks[task]
        if variant == "maxk":
            v = MaxKCover(min(k, self.pool.n))
        elif variant == "linear":
            if self.costs is None:
                raise ValueError(f"dataset {self.name!r} has no expert costs")
            v = LinearCost(self.costs)
        elif variant == "graph":
            graph = self.graph if self.graph is not None else build_jaccard_graph(self.pool)
            v = GraphCost(graph)
        else:
            raise ValueError(f"unknown variant {variant!r}; expected maxk, linear or graph")
        return ProblemInstance(self.pool, self.universe, task, v, lam)


def resolve_path(path) -> Path:
    """Relative paths that do not exist locally are looked up under ``$TEAMFORM_DATA_DIR``."""
    p = Path(path)
    root = os.environ.get(DATA_DIR_ENV)
    if not p.is_absolute() and not p.exists() and root:
        return Path(root) / p
    return p


def _split_colon(line: str, lineno: int, path) -> tuple[list[str], list[str]]:
    if ":" not in line:
        raise DatasetParseError(f"missing ':' in {line!r}", lineno, path)
    head, tail = line.split(":", 1)
    return head.split(), tail.split()


def load_dataset(path) -> Dataset:
    path = resolve_path(path)
    universe = None
    experts: list[tuple[str, list[str], int]] = []
    tasks: list[tuple[str, list[str], int]] = []
    costs: dict[str, float] = {}
    edges: dict[tuple[str, str], tuple[float, int]] = {}

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            keyword = line.split()[0].rstrip(":")
            if keyword == "skills":
                if universe is not None:
                    raise DatasetParseError("duplicate skills line", lineno, path)
                _, names = _split_colon(line, lineno, path)
                try:
                    universe = SkillUniverse(tuple(names))
                except ValueError as exc:
                    raise DatasetParseError(str(exc), lineno, path) from None
            elif keyword in ("expert", "task"):
                head, names = _split_colon(line, lineno, path)
                if len(head) != 2:
                    raise DatasetParseError(f"expected '{keyword} <id>: <skills>'", lineno, path)
                (experts if keyword == "expert" else tasks).append((head[1], names, lineno))
            elif keyword == "expert_cost":
                parts = line.split()
                if len(parts) != 3:
                    raise DatasetParseError("expected 'expert_cost <id> <real>'", lineno, path)
                try:
                    costs[parts[1]] = float(parts[2])
                except ValueError:
                    raise DatasetParseError(f"bad cost {parts[2]!r}", lineno, path) from None
            elif keyword == "edge":
                parts = line.split()
                if len(parts) != 4:
                    raise DatasetParseError("expected 'edge <id_a> <id_b> <real>'", lineno, path)
                try:
                    w = float(parts[3])
                except ValueError:
                    raise DatasetParseError(f"bad edge weight {parts[3]!r}", lineno, path) from None
                a, b = parts[1], parts[2]
                if a == b:
                    raise DatasetParseError(f"self-loop on expert {a!r}", lineno, path)
                prev = edges.get((b, a)) or edges.get((a, b))
                if prev is not None and prev[0] != w:
                    raise DatasetParseError(
                        f"asymmetric graph: edge {a}-{b} has weights {prev[0]} (line {prev[1]}) and {w}",
                        lineno,
                        path,
                    )
                edges[(a, b)] = (w, lineno)
            else:
                raise DatasetParseError(f"unknown directive {keyword!r}", lineno, path)

    if universe is None:
        raise DatasetParseError("no skills line", None, path)

    def resolve(names, lineno, owner):
        out = set()
        for s in names:
            if s not in universe.index:
                raise DatasetParseError(f"{owner} references undefined skill {s!r}", lineno, path)
            out.add(universe.index[s])
        return frozenset(out)

    expert_ids = tuple(e[0] for e in experts)
    if len(set(expert_ids)) != len(expert_ids):
        raise DatasetParseError("duplicate expert ids", None, path)
    pool = ExpertPool(tuple(resolve(names, ln, f"expert {eid}") for eid, names, ln in experts), len(universe))
    task_list = [Task(resolve(names, ln, f"task {tid}"), tid) for tid, names, ln in tasks]
    index = {eid: i for i, eid in enumerate(expert_ids)}

    cost_vec = None
    if costs:
        unknown = set(costs) - set(index)
        if unknown:
            raise DatasetParseError(f"expert_cost for unknown expert(s) {sorted(unknown)}", None, path)
        missing = [eid for eid in expert_ids if eid not in costs]
        if missing:
            raise DatasetParseError(f"experts without expert_cost: {missing}", None, path)
        cost_vec = np.array([costs[eid] for eid in expert_ids])

    graph = None
    if edges:
        d = np.zeros((len(expert_ids), len(expert_ids)))
        for (a, b), (w, lineno) in edges.items():
            for e in (a, b):
                if e not in index:
                    raise DatasetParseError(f"edge references unknown expert {e!r}", lineno, path)
            d[index[a], index[b]] = d[index[b], index[a]] = w
        try:
            graph = CoordinationGraph(d)
        except ValueError as exc:
            raise DatasetParseError(str(exc), None, path) from None

    return Dataset(universe, pool, task_list, graph, cost_vec, expert_ids, Path(path).stem)


def save_dataset(dataset: Dataset, path) -> None:
    skills = dataset.universe.skills
    ids = dataset.expert_ids
    lines = [f"# {dataset.name}" if dataset.name else "# team formation dataset"]
    lines.append("skills: " + " ".join(skills))
    for eid, expert in zip(ids, dataset.pool.experts):
        lines.append(f"expert {eid}: " + " ".join(skills[j] for j in sorted(expert)))
    if dataset.costs is not None:
        for eid, c in zip(ids, dataset.costs):
            lines.append(f"expert_cost {eid} {c:.17g}")
    for i, task in enumerate(dataset.tasks):
        tid = task.name or f"t{i}"
        lines.append(f"task {tid}: " + " ".join(skills[j] for j in sorted(task.required)))
    if dataset.graph is not None:
        d = dataset.graph.distance
        for i, j in zip(*np.nonzero(np.triu(d, 1))):
            lines.append(f"edge {ids[i]} {ids[j]} {d[i, j]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- coordination graphs ---------------------------------------------------


def build_jaccard_graph(pool: ExpertPool) -> CoordinationGraph:
    """Complete graph weighted by Jaccard distance between skill sets (two empty sets: 0)."""
    if pool.n == 0:
        raise ValueError("empty expert pool")
    e = pool.membership.astype(np.int64)
    inter = e @ e.T
    sizes = e.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(union > 0, 1.0 - inter / np.maximum(union, 1), 0.0)
    np.fill_diagonal(d, 0.0)
    return CoordinationGraph(d)


def build_collab_graph(collab_counts, f: float = 0.1, min_common: int = 2, non_edge: float = 1.0) -> CoordinationGraph:
    """Social graph: an edge costs ``exp(-f * count)`` when two experts share ``>= min_common`` collaborations.

    Pairs below the threshold cannot coordinate cheaply and get distance ``non_edge``.
    """
    counts = np.asarray(collab_counts)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
        raise ValueError("collaboration counts must be a square matrix")
    if not np.array_equal(counts, counts.T):
        raise ValueError("collaboration counts must be symmetric")
    if f <= 0:
        raise ValueError("decay rate f must be positive")
    d = np.where(counts >= min_common, np.exp(-f * counts), non_edge)
    np.fill_diagonal(d, 0.0)
    return CoordinationGraph(d)


# -- synthetic datasets ----------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    n_experts: int
    n_tasks: int
    n_skills: int
    mean_skills_per_expert: float
    mean_skills_per_task: float
    graph_kind: str = "jaccard_complete"
    f: float = 0.1
    min_common: int = 2
    mean_degree: float = 4.5
    cost_range: tuple[float, float] = (5.0, 50.0)
    non_edge: float = 1.0
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self):
        if min(self.n_experts, self.n_skills) < 1 or self.n_tasks < 0:
            raise InfeasibleSpecError("need at least one expert and one skill")
        for label, mean in (("expert", self.mean_skills_per_expert), ("task", self.mean_skills_per_task)):
            if not 1 <= mean <= self.n_skills:
                raise InfeasibleSpecError(f"mean skills per {label} {mean} outside [1, {self.n_skills}]")
        if self.graph_kind not in ("jaccard_complete", "collab_exp_decay"):
            raise InfeasibleSpecError(f"unknown graph kind {self.graph_kind!r}")
        if self.f <= 0 or self.min_common < 1:
            raise InfeasibleSpecError("need f > 0 and min_common >= 1")


PRESETS = {
    "freelancer-1": DatasetSpec(50, 250, 50, 2.2, 4.3, "jaccard_complete", name="freelancer-1"),
    "freelancer-2": DatasetSpec(150, 250, 50, 2.2, 4.4, "jaccard_complete", name="freelancer-2"),
    "imdb-1": DatasetSpec(200, 300, 23, 3.3, 5.0, "collab_exp_decay", min_common=2, mean_degree=0.4, name="imdb-1"),
    "imdb-2": DatasetSpec(400, 300, 23, 3.8, 5.3, "collab_exp_decay", min_common=2, mean_degree=0.9, name="imdb-2"),
    "imdb-3": DatasetSpec(1000, 300, 25, 4.5, 5.2, "collab_exp_decay", min_common=2, mean_degree=2.3, name="imdb-3"),
    "bibsonomy-1": DatasetSpec(250, 300, 75, 12.5, 5.5, "collab_exp_decay", min_common=1, mean_degree=1.9, name="bibsonomy-1"),
    "bibsonomy-2": DatasetSpec(500, 300, 75, 13.0, 5.5, "collab_exp_decay", min_common=1, mean_degree=9.4, name="bibsonomy-2"),
    "bibsonomy-3": DatasetSpec(1000, 300, 75, 13.1, 5.5, "collab_exp_decay", min_common=1, mean_degree=13.3, name="bibsonomy-3"),
}


def _skill_counts(rng: np.random.Generator, size: int, mean: float, upper: int) -> np.ndarray:
    """Counts from ``1 + Poisson(mean - 1)``, clipped to ``upper``, then nudged so the total matches ``mean``."""
    counts = np.clip(1 + rng.poisson(mean - 1, size), 1, upper)
    target = int(round(mean * size))
    while counts.sum() != target:
        if counts.sum() < target:
            pick = rng.choice(np.flatnonzero(counts < upper))
            counts[pick] += 1
        else:
            pick = rng.choice(np.flatnonzero(counts > 1))
            counts[pick] -= 1
    return counts


def _draw_sets(rng, counts, m, weights) -> list[frozenset[int]]:
    return [frozenset(rng.choice(m, size=int(c), replace=False, p=weights).tolist()) for c in counts]


def synthetic_collab_counts(rng: np.random.Generator, n: int, mean_degree: float, min_common: int) -> np.ndarray:
    """Symmetric co-working counts with about ``mean_degree`` qualifying neighbours per expert."""
    p = min(1.0, mean_degree / max(n - 1, 1))
    linked = np.triu(rng.random((n, n)) < p, 1)
    counts = np.where(linked, min_common + rng.poisson(2.0, (n, n)), 0)
    counts = np.triu(counts, 1)
    return counts + counts.T


def generate_synthetic(spec: DatasetSpec) -> Dataset:
    """Seeded dataset whose size and skill statistics follow ``spec``."""
    rng = np.random.default_rng(spec.seed)
    m, n = spec.n_skills, spec.n_experts
    # mild popularity skew shared by experts and tasks
    weights = rng.gamma(2.0, 1.0, m)
    weights /= weights.sum()
    expert_sets = _draw_sets(rng, _skill_counts(rng, n, spec.mean_skills_per_expert, m), m, weights)
    pool = ExpertPool(tuple(expert_sets), m)
    tasks = []
    if spec.n_tasks:
        task_sets = _draw_sets(rng, _skill_counts(rng, spec.n_tasks, spec.mean_skills_per_task, m), m, weights)
        tasks = [Task(s, f"t{i}") for i, s in enumerate(task_sets)]
    lo, hi = spec.cost_range
    costs = np.round(rng.uniform(lo, hi, n), 2)
    if spec.graph_kind == "jaccard_complete":
        graph = build_jaccard_graph(pool)
    else:
        counts = synthetic_collab_counts(rng, n, spec.mean_degree, spec.min_common)
        graph = build_collab_graph(counts, spec.f, spec.min_common, spec.non_edge)
    universe = SkillUniverse(tuple(f"s{j}" for j in range(m)))
    return Dataset(universe, pool, tasks, graph, costs, tuple(f"e{i}" for i in range(n)), spec.name)


def heldout_tasks(dataset: Dataset, count: int, mean_skills: float, seed: int) -> list[Task]:
    """Fresh tasks over the same skill universe, named ``h0, h1, ...``."""
    rng = np.random.default_rng([seed, 7])
    m = dataset.pool.m
    counts = _skill_counts(rng, count, min(mean_skills, m), m)
    # reuse skill popularity from the experts so held-out tasks look like training tasks
    freq = dataset.pool.membership.sum(axis=0).astype(float) + 1.0
    sets = _draw_sets(rng, counts, m, freq / freq.sum())
    return [Task(s, f"h{i}") for i, s in enumerate(sets)]

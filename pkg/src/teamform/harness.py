"""Experiment orchestration: per-task solves, normalised metrics, transfer runs and reports.

Every command writes plain CSV (header row, comma separated, LF line endings).
Wall-clock times go to a separate ``timings.csv`` so that ``metrics.csv`` is
byte-identical across runs with the same seed.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import baselines, gnn, model, solvers
from .data import Dataset, PRESETS, generate_synthetic, heldout_tasks, load_dataset
from .errors import TeamFormError
from .model import Assignment, ProblemInstance, Task
from .qubo import PenaltyParams, build_q, write_qubo

SOLVER_NAMES = ("exact", "anneal", "relaxed", "gnn", "greedy", "topk")
REFERENCE_ORDER = ("exact", "anneal")
METRIC_FIELDS = ("dataset", "task_id", "solver", "F", "F_hat", "coverage", "coverage_frac", "size", "feasible",
                 "p1", "p2", "status")
TRANSFER_SOLVERS = ("exact", "gnn-sim", "gnn-rand", "qsolver-sim")
NORMALISATION_NOTE = (
    "# F_hat = F / F_ref per task; reference = exact if it ran, else anneal, else best solver in the roster; "
    "0/0 -> 1; F_ref == 0 -> F_hat = 1 if F >= 0 else 0; infeasible F -> F_hat = 0; "
    "rows with task_id 'mean' average the per-task rows"
)

# per-variant default (p1, p2) grids: 2x2 subgrids of logspace(-1, 2, 7) where the GNN does well
DEFAULT_GRIDS = {
    "maxk": ((1.0, 10.0), (3.162, 10.0)),
    "linear": ((10.0, 31.62), (10.0, 31.62)),
    "graph": ((3.162, 10.0), (10.0, 31.62)),
}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str | None = None  # instance file; None means a synthetic preset
    preset: str = "freelancer-1"
    variant: str = "maxk"
    k: int = 3
    lam: float = 50.0
    solvers: tuple[str, ...] = ("exact", "greedy", "topk")
    p1_grid: tuple[float, ...] | None = None  # None: DEFAULT_GRIDS[variant]
    p2_grid: tuple[float, ...] | None = None
    gnn: gnn.GnnConfig | None = None  # None: per-variant defaults
    tasks: int = 100
    seed: int = 0
    out: Path = Path("results")
    jobs: int = 1
    required_only: bool = True
    anneal_sweeps: int = 1000
    relaxed_iters: int = 3000
    heldout: int = 100
    figures: bool = False

    def __post_init__(self):
        if self.tasks < 1:
            raise ValueError("need at least one task")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        unknown = set(self.solvers) - set(SOLVER_NAMES)
        if unknown:
            raise ValueError(f"unknown solvers {sorted(unknown)}; choose from {', '.join(SOLVER_NAMES)}")
        if self.variant not in model.VARIANT_NAMES:
            raise ValueError(f"unknown variant {self.variant!r}")
        p1_default, p2_default = DEFAULT_GRIDS[self.variant]
        for name, default in (("p1_grid", p1_default), ("p2_grid", p2_default)):
            grid = getattr(self, name)
            object.__setattr__(self, name, tuple(float(v) for v in (default if grid is None else grid)))
        for grid in (self.p1_grid, self.p2_grid):
            if not grid or min(grid) < 0.1 - 1e-12 or max(grid) > 100 + 1e-9:
                raise ValueError("penalty grids must be nonempty and lie within [0.1, 100]")
        object.__setattr__(self, "out", Path(self.out))

    def gnn_config(self, seed: int) -> gnn.GnnConfig:
        base = self.gnn or gnn.GnnConfig.for_variant(self.variant)
        return replace(base, seed=seed)

    @property
    def model_dir(self) -> Path:
        return self.out / "models" / self.variant


@dataclass(frozen=True)
class MetricsRow:
    dataset: str
    task_id: str
    solver: str
    F: float
    F_hat: float = float("nan")
    coverage: float = 0.0
    coverage_frac: float = 0.0
    size: float = 0.0
    feasible: float = 1.0
    p1: float | None = None
    p2: float | None = None
    status: str = "ok"
    wall_time: float = 0.0
    x: tuple[int, ...] = field(default=(), compare=False)

    def as_csv(self) -> list[str]:
        return [
            self.dataset, self.task_id, self.solver, _fmt(self.F), _fmt(self.F_hat), _fmt(self.coverage),
            _fmt(self.coverage_frac), _fmt(self.size), _fmt(self.feasible),
            "" if self.p1 is None else _fmt(self.p1), "" if self.p2 is None else _fmt(self.p2), self.status,
        ]


def _fmt(v: float) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.10g}"


def normalise(f: float, ref: float) -> float:
    """Normalised objective with the degenerate-reference conventions of the metrics header."""
    if not math.isfinite(f):
        return 0.0
    if ref == 0 or not math.isfinite(ref):
        return 1.0 if f >= 0 else 0.0
    return f / ref


def load_experiment_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset:
        return load_dataset(config.dataset)
    if config.preset not in PRESETS:
        raise ValueError(f"unknown preset {config.preset!r}; choose from {', '.join(PRESETS)}")
    return generate_synthetic(replace(PRESETS[config.preset], seed=config.seed))


# -- one task ----------------------------------------------------------------


def _row(dataset_name, task, instance, solver, x: Assignment, params=None, wall=0.0) -> MetricsRow:
    f = model.objective(instance, x)
    try:
        frac = model.fractional_coverage(task, x, instance.pool)
    except TeamFormError:
        frac = 1.0
    return MetricsRow(
        dataset=dataset_name,
        task_id=task.name,
        solver=solver,
        F=f,
        coverage=float(model.coverage(task, x, instance.pool)),
        coverage_frac=frac,
        size=float(x.size),
        feasible=1.0 if math.isfinite(f) else 0.0,
        p1=None if params is None else params.p1,
        p2=None if params is None else params.p2,
        wall_time=wall,
        x=x.selected,
    )


def _grid(config: ExperimentConfig):
    for p1 in sorted(config.p1_grid):
        for p2 in sorted(config.p2_grid):
            yield PenaltyParams(float(p1), float(p2))


def _best_over_grid(config, instance, run):
    """``run(qubo)`` for each grid point; best objective wins, ties to the first point."""
    best = None
    for params in _grid(config):
        res = run(build_q(instance, params, config.required_only))
        if best is None or res.objective > best[1].objective:
            best = (params, res)
    return best


def solve_task(config: ExperimentConfig, dataset: Dataset, index: int):
    """Run the roster on one task; returns ``(rows, trained_model_or_None)``."""
    task = dataset.tasks[index]
    instance = dataset.instance(index, config.variant, config.k, config.lam)
    seed = config.seed + index
    name = dataset.name or "dataset"
    rows: list[MetricsRow] = []
    trained = None
    greedy_size = None
    for solver in config.solvers:
        started = time.perf_counter()
        try:
            if solver == "exact":
                rows.append(_row(name, task, instance, solver, solvers.solve_exact_over_x(instance)))
            elif solver == "anneal":
                sched = solvers.AnnealSchedule(sweeps=config.anneal_sweeps, seed=seed)
                params, res = _best_over_grid(config, instance, lambda q: solvers.solve_anneal(q, instance, sched))
                rows.append(_row(name, task, instance, solver, res.x, params))
            elif solver == "relaxed":
                alpha = (config.gnn or gnn.GnnConfig.for_variant(config.variant)).alpha
                params, res = _best_over_grid(
                    config, instance,
                    lambda q: solvers.solve_relaxed(q, instance, alpha=alpha, max_iters=config.relaxed_iters, seed=seed),
                )
                rows.append(_row(name, task, instance, solver, res.x, params))
            elif solver == "gnn":
                params, trained, res = gnn.grid_search_result(
                    instance, config.gnn_config(seed), config.p1_grid, config.p2_grid, config.required_only
                )
                rows.append(_row(name, task, instance, solver, res.x, params))
            elif solver == "greedy":
                res = baselines.greedy(instance)
                greedy_size = res.x.size
                rows.append(_row(name, task, instance, solver, res.x))
            elif solver == "topk":
                k_ref = _topk_size(config, instance, greedy_size)
                rows.append(_row(name, task, instance, solver, baselines.topk_jaccard(instance, k_ref).x))
        except (TeamFormError, FloatingPointError, ValueError) as exc:
            rows.append(MetricsRow(name, task.name, solver, model.INFEASIBLE_OBJECTIVE, feasible=0.0,
                                   status=f"error: {type(exc).__name__}: {exc}".replace(",", ";")))
        rows[-1] = replace(rows[-1], wall_time=time.perf_counter() - started)
    return _normalise_rows(rows), trained


def _topk_size(config, instance, greedy_size):
    """Team size for top-k: k itself under the cardinality model, otherwise greedy's team size."""
    if config.variant == "maxk":
        return instance.variant.k
    if greedy_size is None:
        greedy_size = baselines.greedy(instance).x.size
    return greedy_size


def reference_value(rows: list[MetricsRow]) -> float:
    ok = [r for r in rows if r.status == "ok"]
    for name in REFERENCE_ORDER:
        for r in ok:
            if r.solver == name:
                return r.F
    finite = [r.F for r in ok if math.isfinite(r.F)]
    return max(finite) if finite else 0.0


def _normalise_rows(rows: list[MetricsRow]) -> list[MetricsRow]:
    ref = reference_value(rows)
    return [replace(r, F_hat=normalise(r.F, ref)) for r in rows]


def _solve_task_job(args):
    config, dataset, index = args
    return solve_task(config, dataset, index)


def run_tasks(config: ExperimentConfig, dataset: Dataset, fn=_solve_task_job):
    """Ordered results over the first ``config.tasks`` tasks, optionally across processes."""
    count = min(config.tasks, len(dataset.tasks))
    jobs = [(config, dataset, i) for i in range(count)]
    if config.jobs > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


# -- aggregation and CSV -----------------------------------------------------


def aggregate(rows: list[MetricsRow]) -> list[MetricsRow]:
    """One row per (dataset, solver) holding arithmetic means of the per-task rows."""
    order: list[tuple[str, str]] = []
    groups: dict[tuple[str, str], list[MetricsRow]] = {}
    for r in rows:
        key = (r.dataset, r.solver)
        if key not in groups:
            order.append(key)
            groups[key] = []
        groups[key].append(r)
    out = []
    for key in order:
        g = groups[key]
        mean = lambda attr: float(np.mean([getattr(r, attr) for r in g]))  # noqa: E731
        out.append(MetricsRow(key[0], "mean", key[1], mean("F"), mean("F_hat"), mean("coverage"),
                              mean("coverage_frac"), mean("size"), mean("feasible"),
                              status=f"n={len(g)}", wall_time=mean("wall_time")))
    return out


def _csv_text(header, rows, preamble=()) -> str:
    buf = io.StringIO()
    for line in preamble:
        buf.write(line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_metrics(path, rows: list[MetricsRow], with_aggregate: bool = True) -> None:
    body = [r.as_csv() for r in rows]
    if with_aggregate:
        body += [r.as_csv() for r in aggregate(rows)]
    Path(path).write_text(_csv_text(METRIC_FIELDS, body, [NORMALISATION_NOTE]), encoding="utf-8")


def write_timings(path, rows: list[MetricsRow]) -> None:
    body = [[r.dataset, r.task_id, r.solver, f"{r.wall_time:.6f}"] for r in rows]
    Path(path).write_text(_csv_text(("dataset", "task_id", "solver", "wall_time_s"), body), encoding="utf-8")


def write_summary(path, rows: list[MetricsRow]) -> None:
    body = [[r.dataset, r.solver, _fmt(r.F), _fmt(r.F_hat), _fmt(r.coverage), _fmt(r.coverage_frac),
             _fmt(r.size), r.status[2:]] for r in aggregate(rows)]
    header = ("dataset", "solver", "mean_F", "mean_F_hat", "mean_coverage", "mean_coverage_frac", "mean_size", "tasks")
    Path(path).write_text(_csv_text(header, body), encoding="utf-8")


def read_metrics(path) -> list[MetricsRow]:
    """Per-task rows of a metrics CSV (aggregate rows are skipped)."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    missing = set(METRIC_FIELDS[:5]) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"{path}: not a metrics file, missing columns {sorted(missing)}")
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if rec["task_id"] == "mean":
            continue
        try:
            rows.append(MetricsRow(
                dataset=rec["dataset"], task_id=rec["task_id"], solver=rec["solver"], F=float(rec["F"]),
                F_hat=float(rec["F_hat"]), coverage=float(rec.get("coverage") or 0),
                coverage_frac=float(rec.get("coverage_frac") or 0), size=float(rec.get("size") or 0),
                feasible=float(rec.get("feasible") or 1), status=rec.get("status") or "ok",
            ))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}: malformed row {lineno}: {exc}") from exc
    return rows


# -- commands ----------------------------------------------------------------


def cmd_build_qubo(config: ExperimentConfig, params: PenaltyParams | None = None) -> list[Path]:
    """One QUBO file per task under ``out/qubo``."""
    dataset = load_experiment_dataset(config)
    params = params or PenaltyParams()
    target = config.out / "qubo"
    target.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, task in enumerate(dataset.tasks[: config.tasks]):
        instance = dataset.instance(i, config.variant, config.k, config.lam)
        path = target / f"{task.name}_{config.variant}.qubo"
        write_qubo(build_q(instance, params, config.required_only), path)
        paths.append(path)
    return paths


def cmd_solve(config: ExperimentConfig) -> Path:
    """Solve the first ``tasks`` tasks with every roster solver and write metrics."""
    dataset = load_experiment_dataset(config)
    config.out.mkdir(parents=True, exist_ok=True)
    results = run_tasks(config, dataset)
    rows = [r for task_rows, _ in results for r in task_rows]
    stem = f"metrics_{config.variant}"
    metrics = config.out / f"{stem}.csv"
    write_metrics(metrics, rows)
    write_summary(config.out / f"summary_{config.variant}.csv", rows)
    write_timings(config.out / f"timings_{config.variant}.csv", rows)
    if "gnn" in config.solvers:
        _save_model_store(config, dataset, results)
    return metrics


def _save_model_store(config, dataset, results) -> None:
    """Trained models plus the exact solution of each training task, indexed by ``index.json``."""
    store = config.model_dir
    store.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (rows, trained) in enumerate(results):
        if trained is None:
            continue
        task = dataset.tasks[i]
        fname = f"{task.name}.npz"
        gnn.save_model(trained, store / fname)
        exact = [r for r in rows if r.solver == "exact" and r.status == "ok"]
        entries.append({
            "task": task.name,
            "required": sorted(task.required),
            "model": fname,
            "exact_x": list(exact[0].x) if exact else None,
        })
    index = {"variant": config.variant, "k": config.k, "lam": config.lam, "models": entries}
    (store / "index.json").write_text(json.dumps(index, indent=1) + "\n", encoding="utf-8")


def load_model_store(config: ExperimentConfig):
    index_path = config.model_dir / "index.json"
    if not index_path.exists():
        raise FileNotFoundError(
            f"no model store at {config.model_dir}; run 'solve' with gnn in --solvers first"
        )
    index = json.loads(index_path.read_text(encoding="utf-8"))
    models = [gnn.load_model(config.model_dir / e["model"]) for e in index["models"]]
    if not models:
        raise FileNotFoundError(f"model store at {config.model_dir} is empty")
    return models, index["models"]


def qsolver_sim(entries, models, instance: ProblemInstance) -> Assignment:
    """Stored exact team of the most similar training task, applied unchanged to ``instance``."""
    usable = [(e, m) for e, m in zip(entries, models) if e["exact_x"] is not None]
    if not usable:
        raise ValueError("model store holds no exact solutions")
    pick = gnn.most_similar([m for _, m in usable], instance.task)
    return Assignment.from_indices(instance.n, usable[pick][0]["exact_x"])


def transfer_task(config, dataset, models, entries, index, task):
    instance = dataset.instance(task, config.variant, config.k, config.lam)
    name = dataset.name or "dataset"
    rows = []
    for solver in TRANSFER_SOLVERS:
        started = time.perf_counter()
        try:
            if solver == "exact":
                rows.append(_row(name, task, instance, solver, solvers.solve_exact_over_x(instance)))
            elif solver == "gnn-sim":
                res = gnn.transfer_sim(models, task, instance)
                rows.append(_row(name, task, instance, solver, res.x, models[gnn.most_similar(models, task)].penalty))
            elif solver == "gnn-rand":
                res = gnn.transfer_rand(models, task, instance, seed=config.seed + index)
                rows.append(_row(name, task, instance, solver, res.x))
            else:
                rows.append(_row(name, task, instance, solver, qsolver_sim(entries, models, instance)))
        except (TeamFormError, ValueError) as exc:
            rows.append(MetricsRow(name, task.name, solver, model.INFEASIBLE_OBJECTIVE, feasible=0.0,
                                   status=f"error: {type(exc).__name__}: {exc}".replace(",", ";")))
        rows[-1] = replace(rows[-1], wall_time=time.perf_counter() - started)
    return _normalise_rows(rows)


def cmd_transfer(config: ExperimentConfig) -> Path:
    """Evaluate model reuse on held-out tasks drawn over the same experts and skills."""
    dataset = load_experiment_dataset(config)
    models, entries = load_model_store(config)
    mean_skills = float(np.mean([len(t) for t in dataset.tasks])) if dataset.tasks else 1.0
    tasks = heldout_tasks(dataset, config.heldout, max(mean_skills, 1.0), config.seed)
    rows = []
    for i, task in enumerate(tasks):
        rows.extend(transfer_task(config, dataset, models, entries, i, task))
    config.out.mkdir(parents=True, exist_ok=True)
    path = config.out / f"transfer_{config.variant}.csv"
    write_metrics(path, rows)
    write_timings(config.out / f"transfer_timings_{config.variant}.csv", rows)
    return path


def sorted_series(rows: list[MetricsRow]) -> dict[tuple[str, str], list[float]]:
    """Per (dataset, solver): objectives sorted in non-increasing order."""
    series: dict[tuple[str, str], list[float]] = {}
    for r in rows:
        series.setdefault((r.dataset, r.solver), []).append(r.F)
    return {k: sorted(v, reverse=True) for k, v in series.items()}


def cmd_report(paths, out) -> list[Path]:
    """Sorted-objective series and mean-F_hat bar data for a set of metrics files."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[MetricsRow] = []
    for p in paths:
        rows.extend(read_metrics(p))
    written = []
    series = sorted_series(rows)
    series_dir = out / "series"
    series_dir.mkdir(exist_ok=True)
    for (dataset, solver), values in series.items():
        path = series_dir / f"{dataset}__{solver}.csv"
        path.write_text(_csv_text(("rank", "F"), [[i + 1, _fmt(v)] for i, v in enumerate(values)]), encoding="utf-8")
        written.append(path)
    bars = [[r.dataset, r.solver, _fmt(r.F_hat)] for r in aggregate(rows)]
    bar_path = out / "bars.csv"
    bar_path.write_text(_csv_text(("dataset", "solver", "mean_F_hat"), bars), encoding="utf-8")
    written.append(bar_path)
    text_path = out / "summary.txt"
    text_path.write_text(render_table(aggregate(rows)), encoding="utf-8")
    written.append(text_path)
    return written


def render_table(agg: list[MetricsRow]) -> str:
    header = f"{'dataset':<16}{'solver':<14}{'mean F':>12}{'mean F_hat':>12}{'Cov':>8}{'z':>8}"
    lines = [header, "-" * len(header)]
    for r in agg:
        lines.append(f"{r.dataset:<16}{r.solver:<14}{r.F:>12.3f}{r.F_hat:>12.4f}{r.coverage_frac:>8.3f}{r.size:>8.2f}")
    return "\n".join(lines) + "\n"

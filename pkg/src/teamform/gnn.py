"""QUBO-GNN: a two-layer heterogeneous graph convolution trained on the relaxed QUBO loss.

Nodes are the ``m`` skills followed by the ``n`` experts.  Skill-expert edges come
from the membership matrix; under the graph cost model expert-expert edges carry
the coordination distance as weight.  Each relation ``r`` propagates over
``A_r = adjacency_r + I`` (by default degree-normalised, see
``ProblemGraph.aggregations``) and applies its own weights; relation outputs are
summed:

    Z1 = sum_r A_r H0 W0_r
    H1 = dropout(relu(batchnorm(Z1)))
    pi = sigmoid(sum_r A_r H1 w1_r + b1)

Training is full-batch Adam (or plain gradient descent) on the relaxed loss
``pi^T Q pi + alpha * sum pi (1 - pi)`` with respect to every parameter,
including the input embeddings ``H0``.  By default the diagonal of ``Q`` enters
linearly (``Q_ii pi_i`` rather than ``Q_ii pi_i**2``, equal on binary points), so
the loss is the multilinear extension of the QUBO energy plus the regulariser;
see ``qubo_loss``.  Gradients
are derived by hand; ``loss_and_grads`` is the single backward pass used both by
training and by the finite-difference checks in the test suite.
"""

from __future__ import annotations

import io
import json
import time
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np

from . import model as tf
from .errors import DimensionError, DivergenceError
from .model import GraphCost, LinearCost, MaxKCover, ProblemInstance, Task
from .qubo import PenaltyParams, QuboMatrix, build_q, penalty_grid
from .solvers import SolveResult, make_result

BN_EPS = 1e-5
RELAXATIONS = ("multilinear", "quadratic")

# per-variant defaults: dropout, binary regulariser weight, learning rate
VARIANT_DEFAULTS = {
    "maxk": dict(dropout=0.25, alpha=2.0, lr=1e-3),
    "linear": dict(dropout=0.2, alpha=1.5, lr=5e-3),
    "graph": dict(dropout=0.25, alpha=2.5, lr=1e-2),
}


@dataclass(frozen=True)
class ProblemGraph:
    """Typed edges over ``m + n`` nodes (skills first, then experts)."""

    m: int
    n: int
    skill_expert: np.ndarray  # (E, 2) node pairs: skill node, expert node
    expert_expert: np.ndarray | None = None  # (F, 3): node i, node j, weight; i < j

    @property
    def size(self) -> int:
        return self.m + self.n

    @property
    def relations(self) -> tuple[str, ...]:
        return ("skill_expert",) if self.expert_expert is None else ("skill_expert", "expert_expert")

    def aggregation(self, relation: str) -> np.ndarray:
        """Dense ``adjacency + I`` for one relation (sum aggregation with the node itself)."""
        a = np.eye(self.size)
        if relation == "skill_expert":
            s, e = self.skill_expert[:, 0], self.skill_expert[:, 1]
            a[s, e] += 1.0
            a[e, s] += 1.0
        else:
            i = self.expert_expert[:, 0].astype(int)
            j = self.expert_expert[:, 1].astype(int)
            w = self.expert_expert[:, 2]
            a[i, j] += w
            a[j, i] += w
        return a

    def aggregations(self, mode: str = "gcn") -> list[np.ndarray]:
        """Per-relation propagation matrices.

        ``"sum"`` is plain ``adjacency + I``; ``"gcn"`` rescales it symmetrically by
        weighted degree, ``D^-1/2 (A + I) D^-1/2``, which keeps activations bounded on
        the dense expert-expert relation.
        """
        mats = [self.aggregation(r) for r in self.relations]
        if mode == "sum":
            return mats
        if mode != "gcn":
            raise ValueError(f"unknown aggregation {mode!r}")
        out = []
        for a in mats:
            d = 1.0 / np.sqrt(a.sum(axis=1))
            out.append(a * d[:, None] * d[None, :])
        return out


def build_graph(instance: ProblemInstance) -> ProblemGraph:
    m = instance.m
    experts, skills = np.nonzero(instance.pool.membership)
    se = np.stack([skills, experts + m], axis=1).astype(np.int64)
    ee = None
    if isinstance(instance.variant, GraphCost):
        d = instance.variant.graph.distance
        i, j = np.nonzero(np.triu(d, 1))
        ee = np.stack([i + m, j + m, d[i, j]], axis=1).astype(float)
    return ProblemGraph(m, instance.n, se, ee)


@dataclass(frozen=True)
class GnnConfig:
    d0: int | None = None  # None: (m+n)/2
    dh: int | None = None  # None: (m+n)/4
    dropout: float = 0.2
    alpha: float = 1.5
    lr: float = 5e-3
    max_epochs: int = 3000
    early_stop_tol: float = 1e-3
    early_stop_patience: int = 300
    seed: int = 0
    bn_momentum: float = 0.1
    optimizer: str = "adam"  # "adam" or "gd"
    aggregation: str = "gcn"  # "gcn" or "sum"
    relaxation: str = "multilinear"  # "multilinear" or "quadratic"

    def __post_init__(self):
        if (self.d0 is not None and self.d0 < 1) or (self.dh is not None and self.dh < 1):
            raise ValueError("embedding and hidden sizes must be at least 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if not (self.alpha > 0 and self.lr > 0):
            raise ValueError("alpha and learning rate must be positive")
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.aggregation not in ("gcn", "sum"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.relaxation not in RELAXATIONS:
            raise ValueError(f"unknown relaxation {self.relaxation!r}")

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> "GnnConfig":
        return cls(**{**VARIANT_DEFAULTS[variant], **overrides})

    def sizes(self, nodes: int) -> tuple[int, int]:
        d0 = self.d0 if self.d0 is not None else max(1, nodes // 2)
        dh = self.dh if self.dh is not None else max(1, nodes // 4)
        return d0, dh


@dataclass(eq=False)
class TrainedRelaxation:
    """Learned embeddings and weights of one QUBO-GNN, plus what it was trained on."""

    params: dict[str, np.ndarray]
    running_mean: np.ndarray
    running_var: np.ndarray
    relations: tuple[str, ...]
    source_task: Task
    final_pi: np.ndarray
    penalty: PenaltyParams | None = None
    config: GnnConfig = field(default_factory=GnnConfig)
    epochs: int = 0
    final_loss: float = float("nan")
    m: int = 0
    n: int = 0

    @property
    def h0(self) -> np.ndarray:
        return self.params["h0"]

    def same_as(self, other: "TrainedRelaxation") -> bool:
        """Bitwise equality of every array and the scalar metadata."""
        if self.params.keys() != other.params.keys():
            return False
        arrays_equal = all(np.array_equal(self.params[k], other.params[k]) for k in self.params)
        return (
            arrays_equal
            and np.array_equal(self.running_mean, other.running_mean)
            and np.array_equal(self.running_var, other.running_var)
            and np.array_equal(self.final_pi, other.final_pi)
            and self.relations == other.relations
            and self.source_task == other.source_task
            and self.penalty == other.penalty
            and self.config == other.config
            and self.epochs == other.epochs
            and (self.final_loss == other.final_loss or (np.isnan(self.final_loss) and np.isnan(other.final_loss)))
        )


def init_params(nodes: int, d0: int, dh: int, relations, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {"h0": rng.standard_normal((nodes, d0))}
    for r in relations:
        lim0 = np.sqrt(6.0 / (d0 + dh))
        params[f"w0_{r}"] = rng.uniform(-lim0, lim0, (d0, dh))
    params["gamma"] = np.ones(dh)
    params["beta"] = np.zeros(dh)
    for r in relations:
        lim1 = np.sqrt(6.0 / (dh + 1))
        params[f"w1_{r}"] = rng.uniform(-lim1, lim1, dh)
    params["b1"] = np.zeros(1)
    return params


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward_pass(params, aggs, relations, *, bn_mode, stats=None, keep=None, dropout=0.0):
    """Forward pass returning ``(pi, cache)``.

    ``bn_mode`` is ``"batch"`` (statistics over the nodes of this graph) or
    ``"running"`` (stored ``stats = (mean, var)``).  ``keep`` is a 0/1 dropout mask
    or None for no dropout.
    """
    h0 = params["h0"]
    ah0 = [a @ h0 for a in aggs]
    z1 = sum(ah @ params[f"w0_{r}"] for ah, r in zip(ah0, relations))
    if bn_mode == "batch":
        mean = z1.mean(axis=0)
        var = z1.var(axis=0)
    else:
        mean, var = stats
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (z1 - mean) * inv_std
    bn = params["gamma"] * xhat + params["beta"]
    relu = np.maximum(bn, 0.0)
    if keep is not None:
        scale = 1.0 / (1.0 - dropout)
        h1 = relu * keep * scale
    else:
        scale = 1.0
        h1 = relu
    ah1 = [a @ h1 for a in aggs]
    z2 = sum(ah @ params[f"w1_{r}"] for ah, r in zip(ah1, relations)) + params["b1"][0]
    pi = _sigmoid(z2)
    cache = dict(ah0=ah0, z1=z1, mean=mean, var=var, inv_std=inv_std, xhat=xhat, bn=bn, keep=keep,
                 scale=scale, h1=h1, ah1=ah1, pi=pi)
    return pi, cache


def qubo_loss(pi: np.ndarray, q: np.ndarray, alpha: float, relaxation: str = "multilinear") -> float:
    """Relaxed QUBO loss; the matrix constant is not included.

    ``"quadratic"`` is ``pi^T Q pi + alpha * sum pi (1 - pi)``.  Its diagonal terms
    have zero slope at ``pi = 0``, which traps training at the empty team once the
    penalties are large.  ``"multilinear"`` adds ``sum Q_ii pi_i (1 - pi_i)``, which
    turns each ``Q_ii pi_i**2`` into ``Q_ii pi_i``.  Both agree with the QUBO energy
    on binary vectors.
    """
    value = pi @ q @ pi + alpha * np.sum(pi * (1.0 - pi))
    if relaxation == "multilinear":
        value += np.diag(q) @ (pi * (1.0 - pi))
    return float(value)


def qubo_loss_grad(pi: np.ndarray, q: np.ndarray, alpha: float, relaxation: str = "multilinear") -> np.ndarray:
    grad = (q + q.T) @ pi + alpha * (1.0 - 2.0 * pi)
    if relaxation == "multilinear":
        grad += np.diag(q) * (1.0 - 2.0 * pi)
    return grad


def loss(pi, qubo: QuboMatrix, alpha: float, relaxation: str = "multilinear") -> float:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (qubo.size,):
        raise DimensionError("relaxation", qubo.size, pi.shape)
    return qubo_loss(pi, qubo.q, alpha, relaxation)


def backward_pass(params, aggs, relations, cache, dpi, bn_mode):
    """Gradients of the loss with respect to every parameter, given ``dL/dpi``."""
    pi = cache["pi"]
    dz2 = dpi * pi * (1.0 - pi)
    grads = {"b1": np.array([dz2.sum()])}
    dh1 = np.zeros_like(cache["h1"])
    for a, ah1, r in zip(aggs, cache["ah1"], relations):
        w1 = params[f"w1_{r}"]
        grads[f"w1_{r}"] = ah1.T @ dz2
        dh1 += a.T @ np.outer(dz2, w1)
    drelu = dh1 * cache["scale"]
    if cache["keep"] is not None:
        drelu = drelu * cache["keep"]
    dbn = drelu * (cache["bn"] > 0)
    xhat = cache["xhat"]
    grads["gamma"] = (dbn * xhat).sum(axis=0)
    grads["beta"] = dbn.sum(axis=0)
    dxhat = dbn * params["gamma"]
    if bn_mode == "batch":
        count = xhat.shape[0]
        dz1 = cache["inv_std"] / count * (count * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    else:
        dz1 = dxhat * cache["inv_std"]
    dh0 = np.zeros_like(params["h0"])
    for a, ah0, r in zip(aggs, cache["ah0"], relations):
        w0 = params[f"w0_{r}"]
        grads[f"w0_{r}"] = ah0.T @ dz1
        dh0 += a.T @ (dz1 @ w0.T)
    grads["h0"] = dh0
    return grads


def loss_and_grads(params, aggs, relations, q, alpha, *, bn_mode="batch", stats=None, keep=None, dropout=0.0,
                   relaxation="multilinear"):
    pi, cache = forward_pass(params, aggs, relations, bn_mode=bn_mode, stats=stats, keep=keep, dropout=dropout)
    value = qubo_loss(pi, q, alpha, relaxation)
    dpi = qubo_loss_grad(pi, q, alpha, relaxation)
    return value, backward_pass(params, aggs, relations, cache, dpi, bn_mode), cache


def forward(model: TrainedRelaxation, graph: ProblemGraph, config: GnnConfig | None = None,
            training: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    """Node probabilities ``pi``.

    Inference (``training=False``) is deterministic: no dropout and batch
    normalisation uses the stored running statistics.  Training mode uses batch
    statistics and, when ``rng`` is given, dropout; it never mutates ``model``.
    """
    config = config or model.config
    if graph.size != model.params["h0"].shape[0] or graph.relations != model.relations:
        raise DimensionError("graph", (model.params["h0"].shape[0], model.relations), (graph.size, graph.relations))
    aggs = graph.aggregations(config.aggregation)
    if training:
        keep = None
        if rng is not None and config.dropout > 0:
            keep = rng.random((graph.size, model.running_mean.shape[0])) >= config.dropout
        pi, _ = forward_pass(model.params, aggs, model.relations, bn_mode="batch", keep=keep, dropout=config.dropout)
    else:
        pi, _ = forward_pass(model.params, aggs, model.relations, bn_mode="running",
                             stats=(model.running_mean, model.running_var))
    if not np.all(np.isfinite(pi)):
        raise DivergenceError("non-finite activations in forward pass")
    return pi


class _GradientDescent:
    def __init__(self, lr):
        self.lr = lr

    def __call__(self, params, grads):
        for key, g in grads.items():
            params[key] = params[key] - self.lr * g


class _Adam:
    """Bias-corrected Adam; the step size ``lr`` is insensitive to the scale of Q."""

    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def __call__(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for key, g in grads.items():
            self.m[key] = self.b1 * self.m[key] + (1 - self.b1) * g
            self.v[key] = self.b2 * self.v[key] + (1 - self.b2) * g * g
            params[key] = params[key] - self.lr * (self.m[key] / c1) / (np.sqrt(self.v[key] / c2) + self.eps)


def train(instance: ProblemInstance, qubo: QuboMatrix, config: GnnConfig | None = None) -> TrainedRelaxation:
    """Unsupervised full-batch training on the relaxed QUBO loss with early stopping."""
    config = config or GnnConfig.for_variant(instance.variant.name)
    graph = build_graph(instance)
    if qubo.size != graph.size:
        raise DimensionError("Q matrix", graph.size, qubo.size)
    rng = np.random.default_rng(config.seed)
    d0, dh = config.sizes(graph.size)
    relations = graph.relations
    params = init_params(graph.size, d0, dh, relations, rng)
    aggs = graph.aggregations(config.aggregation)
    step = _Adam(params, config.lr) if config.optimizer == "adam" else _GradientDescent(config.lr)
    q = qubo.q
    running_mean = np.zeros(dh)
    running_var = np.ones(dh)
    momentum = config.bn_momentum
    nodes = graph.size
    unbias = nodes / max(nodes - 1, 1)

    best = np.inf
    stale = 0
    value = np.nan
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        keep = (rng.random((nodes, dh)) >= config.dropout) if config.dropout > 0 else None
        value, grads, cache = loss_and_grads(params, aggs, relations, q, config.alpha, bn_mode="batch",
                                             keep=keep, dropout=config.dropout, relaxation=config.relaxation)
        if not np.isfinite(value):
            raise DivergenceError(f"loss became non-finite at epoch {epoch} (last finite best {best:.6g})")
        step(params, grads)
        running_mean = (1 - momentum) * running_mean + momentum * cache["mean"]
        running_var = (1 - momentum) * running_var + momentum * cache["var"] * unbias
        if best - value > config.early_stop_tol:
            best = value
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break

    trained = TrainedRelaxation(
        params=params,
        running_mean=running_mean,
        running_var=running_var,
        relations=relations,
        source_task=instance.task,
        final_pi=np.zeros(nodes),
        penalty=qubo.params,
        config=config,
        epochs=epoch,
        final_loss=float(value),
        m=instance.m,
        n=instance.n,
    )
    trained.final_pi = forward(trained, graph)
    return trained


def round_relaxation(pi: np.ndarray) -> np.ndarray:
    return (np.asarray(pi) >= 0.5).astype(np.int8)


def evaluate(model: TrainedRelaxation, instance: ProblemInstance, qubo: QuboMatrix | None = None,
             name: str = "gnn") -> SolveResult:
    """One inference pass of ``model`` on ``instance``, rounded and scored."""
    started = time.perf_counter()
    qubo = qubo or build_q(instance, model.penalty or PenaltyParams())
    pi = forward(model, build_graph(instance))
    return make_result(qubo, instance, round_relaxation(pi), name, started, relaxation=pi)


def grid_search(instance: ProblemInstance, config: GnnConfig | None = None, p1_grid=None, p2_grid=None,
                required_only: bool = False) -> tuple[PenaltyParams, TrainedRelaxation]:
    """Train one model per ``(p1, p2)`` and keep the one with the best rounded objective.

    Ties go to the lexicographically smallest ``(p1, p2)``.
    """
    params, trained, _ = grid_search_result(instance, config, p1_grid, p2_grid, required_only)
    return params, trained


def grid_search_result(instance, config=None, p1_grid=None, p2_grid=None, required_only=False):
    p1_grid = sorted(penalty_grid() if p1_grid is None else p1_grid)
    p2_grid = sorted(penalty_grid() if p2_grid is None else p2_grid)
    if not p1_grid or not p2_grid:
        raise ValueError("penalty grids must be nonempty")
    config = config or GnnConfig.for_variant(instance.variant.name)
    started = time.perf_counter()
    best = None
    for p1, p2 in product(p1_grid, p2_grid):
        pen = PenaltyParams(float(p1), float(p2))
        qubo = build_q(instance, pen, required_only)
        trained = train(instance, qubo, config)
        result = evaluate(trained, instance, qubo)
        if best is None or result.objective > best[2].objective:
            best = (pen, trained, result)
    pen, trained, result = best
    result = replace(result, wall_time=time.perf_counter() - started)
    return pen, trained, result


# -- transfer learning -----------------------------------------------------


def most_similar(models, task: Task) -> int:
    """Index of the model whose source task has the highest Jaccard similarity (first on ties)."""
    if not models:
        raise ValueError("no trained models to choose from")
    sims = [tf.jaccard(m.source_task.required, task.required) for m in models]
    return int(np.argmax(sims))


def transfer_sim(models, new_task: Task, instance: ProblemInstance) -> SolveResult:
    """Reuse the model trained on the most similar task for one forward pass on ``new_task``."""
    chosen = models[most_similar(models, new_task)]
    return evaluate(chosen, instance.with_task(new_task), name="gnn-sim")


def transfer_rand(models, new_task: Task, instance: ProblemInstance, seed: int = 0, sample: int = 3) -> SolveResult:
    """Best of one forward pass from each of ``sample`` randomly chosen models."""
    if not models:
        raise ValueError("no trained models to choose from")
    rng = np.random.default_rng(seed)
    picks = sorted(rng.choice(len(models), size=min(sample, len(models)), replace=False).tolist())
    inst = instance.with_task(new_task)
    best = None
    for i in picks:
        res = evaluate(models[i], inst, name="gnn-rand")
        if best is None or res.objective > best.objective:
            best = res
    return best


# -- persistence -------------------------------------------------------------


def save_model(model: TrainedRelaxation, path) -> None:
    """``.npz`` container: every array plus a JSON header with shapes, config and source task."""
    meta = {
        "relations": list(model.relations),
        "source_task": {"name": model.source_task.name, "required": sorted(model.source_task.required)},
        "penalty": None if model.penalty is None else [model.penalty.p1, model.penalty.p2],
        "config": {k: getattr(model.config, k) for k in model.config.__dataclass_fields__},
        "epochs": model.epochs,
        "final_loss": model.final_loss,
        "m": model.m,
        "n": model.n,
        "shapes": {k: list(v.shape) for k, v in model.params.items()},
    }
    arrays = {f"param_{k}": v for k, v in model.params.items()}
    arrays.update(running_mean=model.running_mean, running_var=model.running_var, final_pi=model.final_pi)
    buf = io.BytesIO()
    np.savez(buf, meta=np.array(json.dumps(meta)), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_model(path) -> TrainedRelaxation:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        params = {k[len("param_"):]: z[k] for k in z.files if k.startswith("param_")}
        running_mean, running_var, final_pi = z["running_mean"], z["running_var"], z["final_pi"]
    for k, shape in meta["shapes"].items():
        if list(params[k].shape) != shape:
            raise ValueError(f"{path}: parameter {k} has shape {params[k].shape}, header says {shape}")
    task = Task(frozenset(meta["source_task"]["required"]), meta["source_task"]["name"])
    penalty = None if meta["penalty"] is None else PenaltyParams(*meta["penalty"])
    return TrainedRelaxation(
        params=params,
        running_mean=running_mean,
        running_var=running_var,
        relations=tuple(meta["relations"]),
        source_task=task,
        final_pi=final_pi,
        penalty=penalty,
        config=GnnConfig(**meta["config"]),
        epochs=meta["epochs"],
        final_loss=meta["final_loss"],
        m=meta["m"],
        n=meta["n"],
    )


def export_embeddings(model: TrainedRelaxation, path, skill_names=None, expert_ids=None) -> None:
    """One row per node: ``node_id node_kind`` followed by the ``d0`` embedding values."""
    h0 = model.params["h0"]
    skill_names = skill_names or [f"s{j}" for j in range(model.m)]
    expert_ids = expert_ids or [f"e{i}" for i in range(model.n)]
    lines = []
    for idx, row in enumerate(h0):
        if idx < model.m:
            node, kind = skill_names[idx], "skill"
        else:
            node, kind = expert_ids[idx - model.m], "expert"
        lines.append(f"{node} {kind} " + " ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

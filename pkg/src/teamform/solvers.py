"""QUBO solvers: exhaustive enumeration, simulated annealing and relaxed gradient descent.

``solve_exact_over_x`` bypasses the QUBO entirely and maximises the team objective
directly; it is the ground truth the other solvers are measured against.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

from . import model
from .errors import DivergenceError, SolverCapError
from .model import Assignment, GraphCost, LinearCost, MaxKCover, ProblemInstance
from .qubo import QuboMatrix, decode_and_repair, encode, energy

EXACT_CAP = 26
EXACT_X_CAP = 22
EXACT_SEARCH_CAP = 40
_TIE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class SolveResult:
    y: np.ndarray
    energy: float
    objective: float
    wall_time: float
    solver_name: str
    assignment: Assignment | None = None
    relaxation: np.ndarray | None = None

    @property
    def x(self) -> Assignment:
        return self.assignment

    def same_solution(self, other: "SolveResult") -> bool:
        return (
            np.array_equal(self.y, other.y)
            and self.energy == other.energy
            and self.objective == other.objective
            and self.solver_name == other.solver_name
        )


def make_result(
    qubo: QuboMatrix, instance: ProblemInstance, y, name: str, started: float, relaxation=None
) -> SolveResult:
    y = np.asarray(y, dtype=np.int8)
    x = decode_and_repair(instance, y)
    return SolveResult(
        y=y,
        energy=energy(qubo, y),
        objective=model.objective(instance, x),
        wall_time=time.perf_counter() - started,
        solver_name=name,
        assignment=x,
        relaxation=relaxation,
    )


def _bit_table(bits: int) -> np.ndarray:
    """All binary vectors of length ``bits`` in lexicographic order (first column most significant)."""
    ints = np.arange(1 << bits, dtype=np.int64)
    shifts = np.arange(bits - 1, -1, -1, dtype=np.int64)
    return ((ints[:, None] >> shifts) & 1).astype(np.float64)


def _tie_tol(best: float) -> float:
    return _TIE_RTOL * max(1.0, abs(best))


def solve_exact(qubo: QuboMatrix, instance: ProblemInstance, cap: int = EXACT_CAP) -> SolveResult:
    """Global energy minimiser by enumeration; ties go to the lexicographically smallest ``y``.

    The leading variables are fixed per block and the trailing ``low`` variables are
    enumerated at once, so each block costs one matrix-vector product.
    """
    started = time.perf_counter()
    size = qubo.size
    if size > cap:
        raise SolverCapError(
            f"exact enumeration over {size} variables exceeds the cap of {cap}; use solve_anneal instead"
        )
    q = qubo.q
    low = min(size, 16)
    high = size - low
    lows = _bit_table(low)
    q_ll = q[high:, high:]
    low_energy = np.einsum("ij,jk,ik->i", lows, q_ll, lows)
    highs = _bit_table(high)
    q_hh = q[:high, :high]
    q_hl = q[:high, high:]

    def block(h):
        # cross term counted twice: y_h Q_hl y_l + y_l Q_lh y_h
        return low_energy + lows @ (2.0 * (h @ q_hl)) + h @ q_hh @ h

    block_min = np.array([block(h).min() for h in highs])
    best = block_min.min()
    tol = _tie_tol(best)
    first_block = int(np.flatnonzero(block_min <= best + tol)[0])
    e_block = block(highs[first_block])
    first_low = int(np.flatnonzero(e_block <= best + tol)[0])
    y = np.concatenate([highs[first_block], lows[first_low]]).astype(np.int8)
    return make_result(qubo, instance, y, "exact", started)


def relevant_experts(instance: ProblemInstance) -> np.ndarray:
    """Experts holding at least one required skill; only these can raise the objective."""
    req = instance.required_mask()
    return np.flatnonzero(instance.pool.membership[:, req].sum(axis=1) > 0)


def exact_objectives(instance: ProblemInstance, experts: np.ndarray, chunk: int = 1 << 16):
    """Objective of every subset of ``experts`` in lexicographic order, yielded in chunks."""
    r = len(experts)
    req = np.flatnonzero(instance.required_mask())
    e_rel = instance.pool.membership[np.ix_(experts, req)].astype(np.float64)
    v = instance.variant
    total = 1 << r
    shifts = np.arange(r - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, chunk):
        ints = np.arange(start, min(total, start + chunk), dtype=np.int64)
        xs = ((ints[:, None] >> shifts) & 1).astype(np.float64)
        cov = ((xs @ e_rel) > 0).sum(axis=1)
        f = instance.lam * cov
        if isinstance(v, MaxKCover):
            f = np.where(xs.sum(axis=1) <= v.k, f, model.INFEASIBLE_OBJECTIVE)
        elif isinstance(v, LinearCost):
            f = f - xs @ v.kappa[experts]
        elif isinstance(v, GraphCost):
            d = v.graph.distance[np.ix_(experts, experts)]
            f = f - 0.5 * np.einsum("ij,jk,ik->i", xs, d, xs)
        yield xs, f


def branch_and_bound(instance: ProblemInstance, experts: np.ndarray) -> np.ndarray:
    """Exact maximiser over subsets of ``experts`` by depth-first search.

    Branches visit ``x_i = 0`` before ``x_i = 1``, so subsets are reached in
    lexicographic order and only strict improvements replace the incumbent.  The
    bound ``lam * |covered | still coverable| - cost so far`` is valid because
    every cost model is nonnegative and monotone.  Returns the chosen 0/1 vector
    over ``experts``.
    """
    req = {s: b for b, s in enumerate(sorted(instance.task.required))}
    masks = [sum(1 << req[s] for s in instance.pool.experts[e] if s in req) for e in experts]
    r = len(experts)
    suffix = [0] * (r + 1)
    for i in range(r - 1, -1, -1):
        suffix[i] = suffix[i + 1] | masks[i]
    v = instance.variant
    lam = instance.lam
    kappa = v.kappa[experts].tolist() if isinstance(v, LinearCost) else None
    dist = v.graph.distance[np.ix_(experts, experts)].tolist() if isinstance(v, GraphCost) else None
    k = v.k if isinstance(v, MaxKCover) else r
    best = [0.0, []]  # the empty team scores 0
    tol = _tie_tol(lam * len(req))

    def visit(i, cov, cost, chosen):
        value = lam * bin(cov).count("1") - cost
        if value > best[0] + tol:
            best[0], best[1] = value, list(chosen)
        reach = cov | suffix[i] if len(chosen) < k else cov
        if i == r or lam * bin(reach).count("1") - cost <= best[0] + tol:
            return
        visit(i + 1, cov, cost, chosen)
        if len(chosen) < k and masks[i] & ~cov:
            if kappa is not None:
                extra = kappa[i]
            elif dist is not None:
                extra = sum(dist[i][j] for j in chosen)
            else:
                extra = 0.0
            chosen.append(i)
            visit(i + 1, cov | masks[i], cost + extra, chosen)
            chosen.pop()

    visit(0, 0, 0.0, [])
    sub = np.zeros(r)
    sub[best[1]] = 1
    return sub


def solve_exact_over_x(instance: ProblemInstance, cap: int = EXACT_X_CAP, search_cap: int = EXACT_SEARCH_CAP) -> Assignment:
    """Objective maximiser over experts that hold a required skill.

    Every cost model is monotone in the selection, so experts with no required
    skill never help and are left out.  Up to ``cap`` remaining experts are
    enumerated outright; up to ``search_cap`` are handled by ``branch_and_bound``.
    Ties go to the lexicographically smallest ``x``.
    """
    experts = relevant_experts(instance)
    if len(experts) > search_cap:
        raise SolverCapError(
            f"{len(experts)} task-relevant experts exceed the exact search cap of {search_cap}"
        )
    if len(experts) > cap:
        x = np.zeros(instance.n, dtype=np.int8)
        x[experts[branch_and_bound(instance, experts) > 0]] = 1
        return Assignment(x)
    chunks = list(exact_objectives(instance, experts))
    best = max(float(f.max()) for _, f in chunks)
    tol = _tie_tol(best)
    for xs, f in chunks:
        hits = np.flatnonzero(f >= best - tol)
        if len(hits):
            sub = xs[hits[0]]
            break
    x = np.zeros(instance.n, dtype=np.int8)
    x[experts[sub > 0]] = 1
    return Assignment(x)


def solve_exact_objective(instance: ProblemInstance, cap: int = EXACT_X_CAP) -> SolveResult:
    """``solve_exact_over_x`` wrapped as a SolveResult (energy is NaN: no QUBO involved)."""
    started = time.perf_counter()
    x = solve_exact_over_x(instance, cap)
    return SolveResult(
        y=encode(instance, x),
        energy=float("nan"),
        objective=model.objective(instance, x),
        wall_time=time.perf_counter() - started,
        solver_name="exact",
        assignment=x,
    )


# -- simulated annealing ---------------------------------------------------


@dataclass(frozen=True)
class AnnealSchedule:
    initial_temp: float = 100.0
    final_temp: float = 0.05
    sweeps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.initial_temp > self.final_temp > 0:
            raise ValueError("need initial_temp > final_temp > 0")
        if self.sweeps < 1:
            raise ValueError("sweeps must be positive")

    def temperatures(self) -> np.ndarray:
        if self.sweeps == 1:
            return np.array([self.initial_temp])
        return np.geomspace(self.initial_temp, self.final_temp, self.sweeps)


def accept_probability(delta: float, temperature: float) -> float:
    """Metropolis acceptance: downhill always, uphill with ``exp(-delta/T)``."""
    if delta <= 0:
        return 1.0
    return float(np.exp(-delta / temperature))


def flip_delta(q: np.ndarray, y: np.ndarray, i: int) -> float:
    """Energy change from flipping ``y[i]``, by explicit recomputation of the affected terms."""
    field = q[i] @ y + q[:, i] @ y - 2 * q[i, i] * y[i]
    return (1 - 2 * y[i]) * (q[i, i] + field)


@njit(cache=True)
def _anneal_kernel(q, y, temps, orders, uniforms):
    size = q.shape[0]
    # local field: sum_j (Q_ij + Q_ji) y_j, excluding the diagonal
    field = np.zeros(size)
    for i in range(size):
        acc = 0.0
        for j in range(size):
            if j != i:
                acc += (q[i, j] + q[j, i]) * y[j]
        field[i] = acc
    e = 0.0
    for i in range(size):
        for j in range(size):
            e += y[i] * q[i, j] * y[j]
    best_e = e
    best_y = y.copy()
    for s in range(temps.shape[0]):
        t = temps[s]
        for step in range(size):
            i = orders[s, step]
            delta = (1.0 - 2.0 * y[i]) * (q[i, i] + field[i])
            if delta <= 0.0 or uniforms[s, step] < np.exp(-delta / t):
                sign = 1.0 - 2.0 * y[i]
                y[i] = 1.0 - y[i]
                e += delta
                for j in range(size):
                    if j != i:
                        field[j] += sign * (q[i, j] + q[j, i])
                if e < best_e - 1e-12:
                    best_e = e
                    best_y[:] = y
    return best_y, best_e, y, e, field


def anneal_trace(q: np.ndarray, y0: np.ndarray, schedule: AnnealSchedule):
    """Run the annealing kernel; returns ``(best_y, best_energy, final_y, final_energy, field)``.

    Energies here exclude the QUBO constant.
    """
    rng = np.random.default_rng(schedule.seed)
    size = q.shape[0]
    orders = rng.permuted(np.tile(np.arange(size, dtype=np.int64), (schedule.sweeps, 1)), axis=1)
    uniforms = rng.random((schedule.sweeps, size))
    return _anneal_kernel(
        np.ascontiguousarray(q, dtype=np.float64),
        np.asarray(y0, dtype=np.float64).copy(),
        schedule.temperatures(),
        orders,
        uniforms,
    )


def solve_anneal(qubo: QuboMatrix, instance: ProblemInstance, schedule: AnnealSchedule | None = None) -> SolveResult:
    """Single-flip Metropolis annealing with geometric cooling; returns the best state seen."""
    started = time.perf_counter()
    schedule = schedule or AnnealSchedule()
    rng = np.random.default_rng([schedule.seed, 1])
    y0 = rng.integers(0, 2, qubo.size)
    best_y, _, _, _, _ = anneal_trace(qubo.q, y0, schedule)
    return make_result(qubo, instance, best_y.astype(np.int8), "anneal", started)


# -- relaxed gradient descent ---------------------------------------------


def relaxed_loss(q: np.ndarray, pi: np.ndarray, alpha: float) -> float:
    """``pi^T Q pi + alpha * sum pi (1 - pi)``; the QUBO constant is not included."""
    return float(pi @ q @ pi + alpha * np.sum(pi * (1.0 - pi)))


def relaxed_grad(q: np.ndarray, pi: np.ndarray, alpha: float) -> np.ndarray:
    return (q + q.T) @ pi + alpha * (1.0 - 2.0 * pi)


def solve_relaxed(
    qubo: QuboMatrix,
    instance: ProblemInstance,
    alpha: float = 2.0,
    beta: float = 1e-3,
    max_iters: int = 5000,
    seed: int = 0,
    tol: float = 1e-9,
) -> SolveResult:
    """Projected gradient descent on the relaxed loss over a free vector ``pi`` in [0, 1].

    There is no network here: this is the plain relaxation the GNN solver builds on.
    The result rounds ``pi`` at 0.5 and keeps the final ``pi`` as ``relaxation``.
    """
    if not (alpha > 0 and beta > 0):
        raise ValueError("alpha and beta must be positive")
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    pi = rng.random(qubo.size)
    q = qubo.q
    for it in range(max_iters):
        step = np.clip(pi - beta * relaxed_grad(q, pi, alpha), 0.0, 1.0)
        loss = relaxed_loss(q, step, alpha)
        if not np.isfinite(loss):
            raise DivergenceError(f"relaxed loss became non-finite at iteration {it}")
        moved = np.max(np.abs(step - pi))
        pi = step
        if moved < tol:
            break
    return make_result(qubo, instance, (pi >= 0.5).astype(np.int8), "relaxed", started, relaxation=pi)

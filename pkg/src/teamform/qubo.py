"""Compile team-formation instances into QUBO matrices with unbalanced penalization.

The solution vector is ``y = s || x``: the first ``m`` entries indicate which skills
count as covered, the last ``n`` select experts.  Each inequality ``h(y) >= 0`` is
encoded without slack variables by adding ``-p1*h(y) + p2*h(y)**2`` to the energy.

All matrices use the full double-sum convention ``E(y) = sum_ij y_i Q_ij y_j``, so a
squared linear form ``(a.y)**2`` is encoded by ``a a^T`` (not ``2 a a^T - diag``,
which is its upper-triangular counterpart).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model
from .errors import DimensionError, VariantError
from .model import Assignment, GraphCost, LinearCost, MaxKCover, ProblemInstance

PENALTY_RANGE = (0.1, 100.0)


@dataclass(frozen=True)
class PenaltyParams:
    p1: float = 1.0
    p2: float = 10.0

    def __post_init__(self):
        if not (self.p1 > 0 and self.p2 > 0):
            raise ValueError(f"penalties must be positive, got p1={self.p1}, p2={self.p2}")


def penalty_grid(size: int = 4, low: float = PENALTY_RANGE[0], high: float = PENALTY_RANGE[1]) -> np.ndarray:
    """Log-spaced penalty values spanning the heuristic range."""
    return np.logspace(np.log10(low), np.log10(high), size)


@dataclass(frozen=True, eq=False)
class QuboMatrix:
    """Symmetric ``(m+n) x (m+n)`` matrix plus the additive constant left out of it."""

    q: np.ndarray
    constant: float
    m: int
    n: int
    variant: str
    params: PenaltyParams | None = field(default=None, compare=False)

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        size = self.m + self.n
        if q.shape != (size, size):
            raise DimensionError("Q matrix", (size, size), q.shape)
        if not np.all(np.isfinite(q)):
            raise ValueError("Q matrix has non-finite entries")
        if not np.allclose(q, q.T, rtol=0, atol=1e-12):
            raise ValueError("Q matrix is not symmetric")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "constant", float(self.constant))

    @property
    def size(self) -> int:
        return self.m + self.n

    def __eq__(self, other):
        if not isinstance(other, QuboMatrix):
            return NotImplemented
        return (
            (self.m, self.n, self.variant, self.constant) == (other.m, other.n, other.variant, other.constant)
            and np.array_equal(self.q, other.q)
        )


def build_c_vector(instance: ProblemInstance) -> np.ndarray:
    """Linear objective weights over ``y``: lambda on required skills, minus cost on experts."""
    c = np.zeros(instance.m + instance.n)
    c[: instance.m][instance.required_mask()] = instance.lam
    if isinstance(instance.variant, LinearCost):
        c[instance.m :] = -instance.variant.kappa
    return c


def coverage_constraint_rows(instance: ProblemInstance, required_only: bool = False) -> np.ndarray:
    """Rows ``h_j`` with ``h_j . y = sum_i E(i,j) x_i - s_j`` (must stay >= 0)."""
    m, n = instance.m, instance.n
    rows = np.hstack([-np.eye(m), instance.pool.membership.T.astype(float)])
    if required_only:
        rows = rows[instance.required_mask()]
    assert rows.shape[1] == m + n
    return rows


def build_coverage_penalties(
    instance: ProblemInstance, params: PenaltyParams, required_only: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Linear and quadratic penalty matrices ``(P1, P2)`` for the coverage constraints.

    ``P1 = diag(p1 * sum_j h_j)`` and ``P2 = p2 * sum_j h_j h_j^T``; the energy
    contribution is ``y^T (-P1 + P2) y = sum_j (-p1 h_j(y) + p2 h_j(y)^2)``.
    """
    rows = coverage_constraint_rows(instance, required_only)
    p1 = np.diag(params.p1 * rows.sum(axis=0))
    p2 = params.p2 * (rows.T @ rows)
    return p1, p2


def build_cardinality_penalty(instance: ProblemInstance, params: PenaltyParams) -> tuple[np.ndarray, float]:
    """Penalty matrix and constant for ``h_k = k - sum_i x_i >= 0``.

    ``y^T P_k y + constant == -p1 h_k + p2 h_k**2`` for every binary ``y``.
    """
    v = instance.variant
    if not isinstance(v, MaxKCover):
        raise VariantError(f"cardinality penalty needs a MaxKCover instance, got {type(v).__name__}")
    m, n, k = instance.m, instance.n, v.k
    p1, p2 = params.p1, params.p2
    pk = np.zeros((m + n, m + n))
    pk[m:, m:] = p2 * np.ones((n, n))
    pk[m:, m:] += (p1 - 2 * k * p2) * np.eye(n)
    return pk, p2 * k * k - p1 * k


def build_objective_matrix(instance: ProblemInstance) -> np.ndarray:
    """Matrix ``D_hat`` with ``y^T D_hat y = lam*sum_J s_j - Cost(x)`` for the linear/graph models.

    For graph cost the coordination block is ``-D/2``: the double sum visits each
    unordered pair twice.
    """
    d_hat = np.diag(build_c_vector(instance))
    if isinstance(instance.variant, GraphCost):
        m = instance.m
        d_hat[m:, m:] -= 0.5 * instance.variant.graph.distance
    return d_hat


def build_q(instance: ProblemInstance, params: PenaltyParams | None = None, required_only: bool = False) -> QuboMatrix:
    """Assemble the QUBO whose minimum energy corresponds to the best assignment."""
    params = params or PenaltyParams()
    p1, p2 = build_coverage_penalties(instance, params, required_only)
    q = -build_objective_matrix(instance) - p1 + p2
    constant = 0.0
    if isinstance(instance.variant, MaxKCover):
        pk, constant = build_cardinality_penalty(instance, params)
        q = q + pk
    return QuboMatrix(q, constant, instance.m, instance.n, instance.variant.name, params)


def energy(qubo: QuboMatrix, y) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape != (qubo.size,):
        raise DimensionError("solution vector", qubo.size, y.shape)
    return float(y @ qubo.q @ y) + qubo.constant


def energies(qubo: QuboMatrix, ys: np.ndarray) -> np.ndarray:
    """Energies of a stack of solution vectors, one per row."""
    ys = np.asarray(ys, dtype=float)
    return np.einsum("ij,jk,ik->i", ys, qubo.q, ys) + qubo.constant


def decode_and_repair(instance: ProblemInstance, y) -> Assignment:
    """Take the expert block of ``y``; the skill block is recomputed, never trusted."""
    y = np.asarray(y)
    if y.shape != (instance.m + instance.n,):
        raise DimensionError("solution vector", instance.m + instance.n, y.shape)
    return Assignment(np.asarray(y[instance.m :] > 0.5, dtype=np.int8))


def encode(instance: ProblemInstance, x) -> np.ndarray:
    """Solution vector ``s || x`` with the best skill block for selection ``x``."""
    x_arr = x.x if isinstance(x, Assignment) else np.asarray(x)
    return np.concatenate([model.induced_skill_vector(instance, x_arr), x_arr]).astype(np.int8)


def penalty_value(instance: ProblemInstance, params: PenaltyParams, y, required_only: bool = False) -> float:
    """Unbalanced penalty summed over every encoded constraint, evaluated directly."""
    y = np.asarray(y, dtype=float)
    h = coverage_constraint_rows(instance, required_only) @ y
    total = float(np.sum(-params.p1 * h + params.p2 * h * h))
    if isinstance(instance.variant, MaxKCover):
        hk = instance.variant.k - y[instance.m :].sum()
        total += -params.p1 * hk + params.p2 * hk * hk
    return total


# -- text format -----------------------------------------------------------


def write_qubo(qubo: QuboMatrix, path) -> None:
    """Dense text format: ``m n variant`` header, one matrix row per line, ``constant`` trailer."""
    lines = [f"{qubo.m} {qubo.n} {qubo.variant}"]
    for row in qubo.q:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    lines.append(f"constant {qubo.constant:.17g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_qubo(path) -> QuboMatrix:
    text = Path(path).read_text(encoding="utf-8").split("\n")
    lines = [ln for ln in text if ln.strip()]
    try:
        m_str, n_str, variant = lines[0].split()
        m, n = int(m_str), int(n_str)
    except ValueError as exc:
        raise ValueError(f"{path}: bad QUBO header {lines[0]!r}") from exc
    size = m + n
    rows = [[float(v) for v in ln.split()] for ln in lines[1 : 1 + size]]
    tail = lines[1 + size].split()
    if len(rows) != size or tail[0] != "constant":
        raise ValueError(f"{path}: expected {size} matrix rows followed by a constant line")
    return QuboMatrix(np.array(rows, dtype=float), float(tail[1]), m, n, variant)

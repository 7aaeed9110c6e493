"""Team formation as QUBO: problem model, QUBO compiler, solvers, QUBO-GNN and an experiment harness."""

from .model import (
    Assignment,
    CoordinationGraph,
    ExpertPool,
    GraphCost,
    LinearCost,
    MaxKCover,
    ProblemInstance,
    SkillUniverse,
    Task,
    objective,
)
from .qubo import PenaltyParams, QuboMatrix, build_q, energy

__all__ = [
    "Assignment",
    "CoordinationGraph",
    "ExpertPool",
    "GraphCost",
    "LinearCost",
    "MaxKCover",
    "PenaltyParams",
    "ProblemInstance",
    "QuboMatrix",
    "SkillUniverse",
    "Task",
    "build_q",
    "energy",
    "objective",
]

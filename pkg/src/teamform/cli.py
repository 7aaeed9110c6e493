"""``teamform`` command line: build-qubo, solve, transfer, report, generate."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .data import PRESETS, generate_synthetic, save_dataset
from .gnn import GnnConfig
from .qubo import PenaltyParams


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _common(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--dataset", help="instance file (relative paths also searched under $TEAMFORM_DATA_DIR)")
    src.add_argument("--preset", default="freelancer-1", choices=sorted(PRESETS),
                     help="synthetic dataset preset used when no --dataset is given")
    p.add_argument("--variant", choices=("maxk", "linear", "graph"), default="maxk")
    p.add_argument("--k", type=int, default=3, help="team size bound for maxk")
    p.add_argument("--lambda", dest="lam", type=float, default=50.0, help="coverage weight")
    p.add_argument("--tasks", type=int, default=100, help="number of tasks to process")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--all-skill-rows", action="store_true",
                   help="encode coverage constraints for every skill, not only the required ones")


def _solver_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--p1-grid", type=_floats, default=None, help="comma-separated p1 values in [0.1, 100]")
    p.add_argument("--p2-grid", type=_floats, default=None, help="comma-separated p2 values in [0.1, 100]")
    p.add_argument("--epochs", type=int, default=None, help="GNN epoch cap")
    p.add_argument("--patience", type=int, default=None, help="GNN early-stopping patience")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (results are identical to serial)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="teamform", description="Team formation via QUBO and graph neural networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-qubo", help="write one QUBO matrix file per task")
    _common(p)
    p.add_argument("--p1", type=float, default=1.0)
    p.add_argument("--p2", type=float, default=10.0)

    p = sub.add_parser("solve", help="run a solver roster and write metrics CSVs")
    _common(p)
    _solver_opts(p)
    p.add_argument("--solvers", type=_names, default=("exact", "greedy", "topk"),
                   help=f"comma-separated subset of {','.join(harness.SOLVER_NAMES)}")

    p = sub.add_parser("transfer", help="evaluate stored GNN models on held-out tasks")
    _common(p)
    p.add_argument("--heldout", type=int, default=100, help="number of held-out tasks")

    p = sub.add_parser("report", help="sorted-objective series and bar data from metrics CSVs")
    p.add_argument("metrics", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=Path("report"))
    p.add_argument("--figures", action="store_true", help="also render PNG figures (needs matplotlib)")

    p = sub.add_parser("generate", help="write a synthetic dataset file")
    p.add_argument("--preset", default="freelancer-1", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tasks", type=int, default=None, help="override the preset's task count")
    p.add_argument("--out", type=Path, required=True, help="output instance file")
    return parser


def config_from_args(args) -> harness.ExperimentConfig:
    kwargs = dict(
        dataset=args.dataset,
        preset=args.preset,
        variant=args.variant,
        k=args.k,
        lam=args.lam,
        tasks=args.tasks,
        seed=args.seed,
        out=args.out,
        required_only=not args.all_skill_rows,
    )
    if getattr(args, "solvers", None):
        kwargs["solvers"] = args.solvers
    if getattr(args, "p1_grid", None):
        kwargs["p1_grid"] = args.p1_grid
    if getattr(args, "p2_grid", None):
        kwargs["p2_grid"] = args.p2_grid
    if getattr(args, "jobs", None):
        kwargs["jobs"] = args.jobs
    if getattr(args, "heldout", None):
        kwargs["heldout"] = args.heldout
    overrides = {}
    if getattr(args, "epochs", None):
        overrides["max_epochs"] = args.epochs
    if getattr(args, "patience", None):
        overrides["early_stop_patience"] = args.patience
    if overrides:
        kwargs["gnn"] = GnnConfig.for_variant(args.variant, **overrides)
    return harness.ExperimentConfig(**kwargs)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            spec = replace(PRESETS[args.preset], seed=args.seed)
            if args.tasks is not None:
                spec = replace(spec, n_tasks=args.tasks)
            args.out.parent.mkdir(parents=True, exist_ok=True)
            save_dataset(generate_synthetic(spec), args.out)
            print(args.out)
        elif args.command == "report":
            written = harness.cmd_report(args.metrics, args.out)
            if args.figures:
                from .plotting import render_report

                written += render_report(args.metrics, args.out)
            print((args.out / "summary.txt").read_text(encoding="utf-8"), end="")
            for path in written:
                print(path)
        else:
            config = config_from_args(args)
            if args.command == "build-qubo":
                for path in harness.cmd_build_qubo(config, PenaltyParams(args.p1, args.p2)):
                    print(path)
            elif args.command == "solve":
                path = harness.cmd_solve(config)
                print(harness.render_table(harness.aggregate(harness.read_metrics(path))), end="")
                print(path)
            elif args.command == "transfer":
                path = harness.cmd_transfer(config)
                print(harness.render_table(harness.aggregate(harness.read_metrics(path))), end="")
                print(path)
    except (ValueError, FileNotFoundError) as exc:
        print(f"teamform: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Optional PNG rendering of report data: sorted objectives per task and mean F_hat bars."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import aggregate, read_metrics, sorted_series  # noqa: E402


def render_report(paths, out) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [r for p in paths for r in read_metrics(p)]
    written = []

    series = sorted_series(rows)
    for dataset in sorted({d for d, _ in series}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for (d, solver), values in series.items():
            if d == dataset:
                ax.plot(range(1, len(values) + 1), values, marker=".", linestyle="", label=solver)
        ax.set_xlabel("task rank")
        ax.set_ylabel("objective F")
        ax.set_title(dataset)
        ax.legend()
        path = out / f"sorted_{dataset}.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    agg = aggregate(rows)
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [f"{r.dataset}\n{r.solver}" for r in agg]
    ax.bar(range(len(agg)), [r.F_hat for r in agg])
    ax.set_xticks(range(len(agg)), labels, rotation=60, fontsize=7)
    ax.set_ylabel("mean normalised objective")
    path = out / "bars.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)
    return written

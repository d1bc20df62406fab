"""Round tables and figures for finished runs.

Everything here is presentation: inputs are RoundReports or a
ComparisonTable, outputs are CSV/JSON/markdown tables and PNG figures
written next to each other in one output directory.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .evaluation import ComparisonTable, RoundReport

__all__ = [
    "write_round_table_csv",
    "write_round_table_markdown",
    "write_comparison_csv",
    "render_f1_curve",
    "render_strategy_comparison",
    "write_report_bundle",
    "write_comparison_bundle",
]


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.4f}"


def write_round_table_csv(reports: list[RoundReport], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "strategy", "precision", "recall", "f1",
                         "labeled", "unlabeled", "selected"])
        for r in reports:
            writer.writerow([r.round_index, r.strategy, _fmt(r.precision),
                             _fmt(r.recall), _fmt(r.f1), r.labeled_count,
                             r.unlabeled_count, len(r.selected)])
    return path


def write_round_table_markdown(reports: list[RoundReport], path) -> Path:
    path = Path(path)
    lines = [
        "| round | strategy | precision | recall | F1 | labeled | unlabeled |",
        "|---|---|---|---|---|---|---|",
    ]
    for r in reports:
        lines.append(
            f"| {r.round_index} | {r.strategy} | {_fmt(r.precision)} | "
            f"{_fmt(r.recall)} | {_fmt(r.f1)} | {r.labeled_count} | {r.unlabeled_count} |"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_comparison_csv(table: ComparisonTable, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "round", "mean_f1", "std_f1",
                         "mean_recall", "std_recall", "n_seeds"])
        for row in table.to_rows():
            writer.writerow([row["strategy"], row["round_index"],
                             f"{row['mean_f1']:.4f}", f"{row['std_f1']:.4f}",
                             f"{row['mean_recall']:.4f}", f"{row['std_recall']:.4f}",
                             row["n_seeds"]])
    return path


def render_f1_curve(reports: list[RoundReport], path, title: str = "F1 by round") -> Path:
    path = Path(path)
    rounds = [r.round_index for r in reports]
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, series in (("precision", [r.precision for r in reports]),
                         ("recall", [r.recall for r in reports]),
                         ("F1", [r.f1 for r in reports])):
        if any(v is not None for v in series):
            ax.plot(rounds, [float("nan") if v is None else v for v in series],
                    marker="o", label=name)
    ax.set_xlabel("round")
    ax.set_ylabel("score")
    ax.set_ylim(0.0, 1.05)
    ax.set_xticks(rounds)
    ax.grid(True, alpha=0.3)
    if ax.get_legend_handles_labels()[1]:
        ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_strategy_comparison(table: ComparisonTable, path,
                               title: str = "Selection strategies") -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    rounds = table.rounds()
    for strategy in table.strategies():
        means = [table.cell(strategy, r).mean_f1 for r in rounds]
        stds = [table.cell(strategy, r).std_f1 for r in rounds]
        ax.errorbar(rounds, means, yerr=stds, marker="o", capsize=3, label=strategy)
    ax.set_xlabel("round")
    ax.set_ylabel("mean F1 across seeds")
    ax.set_ylim(0.0, 1.05)
    ax.set_xticks(rounds)
    ax.grid(True, alpha=0.3)
    ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_report_bundle(reports: list[RoundReport], out_dir) -> dict[str, Path]:
    """Tables plus figures for a single run, all in ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {
        "csv": write_round_table_csv(reports, out_dir / "rounds.csv"),
        "markdown": write_round_table_markdown(reports, out_dir / "rounds.md"),
    }
    with open(out_dir / "rounds.json", "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)
    written["json"] = out_dir / "rounds.json"
    if reports:
        written["figure"] = render_f1_curve(reports, out_dir / "f1_by_round.png")
    return written


def write_comparison_bundle(table: ComparisonTable, out_dir) -> dict[str, Path]:
    """Tables plus figures for a strategy comparison, all in ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {"csv": write_comparison_csv(table, out_dir / "comparison.csv")}
    with open(out_dir / "comparison.json", "w", encoding="utf-8") as fh:
        json.dump(table.to_rows(), fh, indent=2)
    written["json"] = out_dir / "comparison.json"
    if table.cells:
        written["figure"] = render_strategy_comparison(table, out_dir / "strategy_f1.png")
    return written

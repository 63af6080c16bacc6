"""Human-readable rendering of experiment reports: a markdown method table
and matplotlib figures written next to the delimited output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _stars(method_stats: dict | None, alpha_levels: list[float]) -> str:
    if not method_stats or method_stats.get("p_adjusted") is None:
        return ""
    significant = method_stats.get("significant_at", [])
    if not significant:
        return ""
    # one star per alpha level passed, strictest level gives the most stars
    levels = sorted(alpha_levels)
    passed = [a for a in levels if a in significant]
    return "*" * (len(levels) - levels.index(min(passed)) if passed else 0)


def render_markdown(report: dict) -> str:
    """Method table with precision, recall, F1, improvement and significance."""
    lines = [
        "# Topic segmentation results",
        "",
        f"- seed: `{report['seed']}`",
        f"- config: `{report['config_hash']}`",
        f"- WinPR window k: {report['eval_k']}",
        "",
        "| Method | P | R | F1 | Impr. | Sig. |",
        "|---|---|---|---|---|---|",
    ]
    stats = report.get("stats") or {}
    stats_methods = stats.get("methods", {})
    alpha = stats.get("alpha_levels", [0.02, 0.01])
    for tag, s in report["methods"].items():
        impr = s.get("improvement_pct")
        impr_txt = f"{impr:+.1f}%" if impr is not None else "baseline" if tag == stats.get("baseline") else ""
        stars = _stars(stats_methods.get(tag), alpha)
        lines.append(
            f"| {tag} | {s['precision']:.3f} | {s['recall']:.3f} | {s['f1']:.3f} | {impr_txt} | {stars} |"
        )
    if stats:
        lines += [
            "",
            f"Omnibus ({stats['omnibus']['test']}): statistic "
            f"{stats['omnibus']['statistic']:.4f}, p = {stats['omnibus']['p_value']:.4g}.",
            f"Stars: adjusted p below {', then '.join(str(a) for a in sorted(alpha, reverse=True))} "
            f"(post-hoc vs {stats['baseline']}).",
        ]
    if report.get("stats_note"):
        lines += ["", f"Note: {report['stats_note']}"]
    return "\n".join(lines) + "\n"


def render_figures(report: dict, fig_dir: str | Path) -> list[Path]:
    """Bar charts of per-method scores and improvement over the baseline."""
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    methods = list(report["methods"].keys())
    p = [report["methods"][m]["precision"] for m in methods]
    r = [report["methods"][m]["recall"] for m in methods]
    f1 = [report["methods"][m]["f1"] for m in methods]

    x = np.arange(len(methods))
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(methods)), 3.6))
    ax.bar(x - width, p, width, label="precision")
    ax.bar(x, r, width, label="recall")
    ax.bar(x + width, f1, width, label="F1")
    ax.set_xticks(x, methods, rotation=20, ha="right")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel(f"WinPR@{report['eval_k']}")
    ax.legend(frameon=False, ncol=3)
    ax.set_title("Segmentation scores per feature configuration")
    fig.tight_layout()
    path = fig_dir / "winpr_by_method.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    impr = [(m, report["methods"][m].get("improvement_pct")) for m in methods]
    impr = [(m, v) for m, v in impr if v is not None]
    if impr:
        fig, ax = plt.subplots(figsize=(max(5.0, 1.1 * len(impr)), 3.2))
        names = [m for m, _ in impr]
        values = [v for _, v in impr]
        colors = ["#2a7" if v >= 0 else "#c44" for v in values]
        ax.bar(np.arange(len(impr)), values, color=colors)
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.set_xticks(np.arange(len(impr)), names, rotation=20, ha="right")
        ax.set_ylabel("F1 improvement over baseline (%)")
        ax.set_title("Relative improvement")
        fig.tight_layout()
        path = fig_dir / "improvement.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written

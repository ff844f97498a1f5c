"""Figure rendering for benchmark reports.

Writes static matplotlib figures next to the delimited report output:
an RMSE bar chart, a timing bar chart, and the fine-stage convergence
curves when the report rows carry iteration histories.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def report_figures(report, outdir) -> list:
    """Render the report's figures into outdir; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    ok_rows = [r for r in report.rows if not r.failed]

    if ok_rows:
        path = outdir / "rmse.png"
        _bar_pairs(path, ok_rows,
                   [("coarse", [r.coarse_rmse_mm for r in ok_rows]),
                    ("fine", [r.fine_rmse_mm for r in ok_rows])],
                   ylabel="RMSE (mm)", title="Registration RMSE by method")
        written.append(path)

        path = outdir / "timing.png"
        _bar_pairs(path, ok_rows,
                   [("coarse $T_c$", [r.t_coarse_s for r in ok_rows]),
                    ("fine $T_f$", [r.t_fine_s for r in ok_rows])],
                   ylabel="time (s)", title="Registration time by method")
        written.append(path)

    curves = [(r.method, r.fine_history) for r in ok_rows if r.fine_history]
    if curves:
        fig, ax = plt.subplots(figsize=(5.5, 3.5))
        for method, hist in curves:
            ax.semilogy(range(1, len(hist) + 1), hist, label=method)
        ax.set_xlabel("fine ICP iteration")
        ax.set_ylabel("correspondence RMSE (mm)")
        ax.set_title("Fine-stage convergence")
        ax.legend(frameon=False)
        fig.tight_layout()
        path = outdir / "convergence.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def _bar_pairs(path, rows, series, ylabel, title):
    methods = [r.method for r in rows]
    x = range(len(methods))
    width = 0.8 / len(series)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for i, (label, values) in enumerate(series):
        offs = [xi + (i - (len(series) - 1) / 2) * width for xi in x]
        vals = [0.0 if math.isnan(v) else v for v in values]
        ax.bar(offs, vals, width=width, label=label)
    ax.set_xticks(list(x))
    ax.set_xticklabels(methods)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

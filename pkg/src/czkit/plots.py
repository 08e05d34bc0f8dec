"""Figure rendering for report objects (matplotlib, file output only).

The CLI writes these alongside the delimited reports; the byte-stability
contract applies to the CSV/JSON-lines/plot-data files, figures are a
visual convenience.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = [
    "render_scaling_figure",
    "render_verification_figure",
    "render_grid_figure",
]


def render_scaling_figure(report, path) -> None:
    """Log-log scatter of norm lower bounds against the truncation index,
    with the fitted power law and the trivial bound for reference."""
    rows = [r for r in report.rows if r["converged"] and r["norm_lower_bound"] > 0]
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    if rows:
        xs = [r["n_index"] for r in rows]
        ys = [r["norm_lower_bound"] for r in rows]
        tb = [r["trivial_bound"] for r in rows]
        ax.loglog(xs, ys, "o", color="tab:blue", label="norm lower bound")
        ax.loglog(xs, tb, "s--", color="tab:gray", alpha=0.6, label="trivial bound")
        if not math.isnan(report.theta_hat):
            x0 = xs[0]
            y0 = ys[0]
            fit = [y0 * (x / x0) ** report.theta_hat for x in xs]
            ax.loglog(xs, fit, "-", color="tab:red",
                      label=f"fit slope {report.theta_hat:.3f}")
    ax.set_xlabel("truncation index n = 1 + log(R/r)")
    ax.set_ylabel("operator norm")
    ax.set_title(f"norm growth ({report.config_tag})")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_verification_figure(report, path) -> None:
    """Horizontal bars of achieved constants, green for pass, red for fail."""
    entries = report.entries
    fig, ax = plt.subplots(figsize=(7.0, 0.35 * max(len(entries), 4) + 1.2))
    labels = [f"{e.suite}:{e.name}" for e in entries]
    vals = []
    for e in entries:
        v = e.achieved
        if not math.isfinite(v):
            v = 0.0
        vals.append(v)
    colors = ["tab:green" if e.passed else "tab:red" for e in entries]
    ax.barh(range(len(entries)), vals, color=colors)
    ax.set_yticks(range(len(entries)))
    ax.set_yticklabels(labels, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("achieved value")
    ax.set_title("verification suite")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_grid_figure(report, path) -> None:
    """Boundary probability against eps with Wilson bars and the 2*eps line."""
    boundary = [r for r in report.rows if r["kind"] == "boundary"]
    ancestor = [r for r in report.rows if r["kind"] == "ancestor"]
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.8))
    if boundary:
        xs = [r["eps"] for r in boundary]
        axes[0].errorbar(
            xs, [r["mc"] for r in boundary],
            yerr=[[r["mc"] - r["wilson_lo"] for r in boundary],
                  [r["wilson_hi"] - r["mc"] for r in boundary]],
            fmt="o", label="Monte Carlo")
        axes[0].plot(xs, [r["exact"] for r in boundary], "x", color="tab:red",
                     label="exact")
        axes[0].plot(xs, [2 * x for x in xs], "--", color="tab:gray",
                     label="2 eps")
        axes[0].set_xlabel("eps")
        axes[0].set_ylabel("boundary probability")
        axes[0].legend(fontsize=8)
    if ancestor:
        xs = [r["m"] for r in ancestor]
        axes[1].errorbar(
            xs, [r["mc"] for r in ancestor],
            yerr=[[r["mc"] - r["wilson_lo"] for r in ancestor],
                  [r["wilson_hi"] - r["mc"] for r in ancestor]],
            fmt="o", label="Monte Carlo")
        axes[1].plot(xs, [r["exact"] for r in ancestor], "x", color="tab:red",
                     label="exact")
        axes[1].axhline(0.5, ls="--", color="tab:gray", label="1/2")
        axes[1].set_xlabel("level gap m")
        axes[1].set_ylabel("shared-ancestor probability")
        axes[1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

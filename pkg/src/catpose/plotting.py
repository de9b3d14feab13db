"""Figures for evaluation reports.

Uses the non-interactive Agg backend and strips PNG metadata so that the
same data always produces the same bytes.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .symmetry import CATEGORIES  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.4,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 120,
}

COLORS = {
    "bottle": "tab:blue",
    "bowl": "tab:orange",
    "camera": "tab:green",
    "can": "tab:red",
    "laptop": "tab:purple",
    "mug": "tab:brown",
    "mean": "black",
}

PANELS = (
    ("iou", "3D IoU threshold", "3D IoU"),
    ("deg", "rotation error threshold (degrees)", "Rotation"),
    ("cm", "translation error threshold (cm)", "Translation"),
)


def plot_ap_curves(curves: dict, path, title=None):
    """One panel per swept threshold, one line per category plus the mean."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(PANELS), figsize=(10, 3.2), sharey=True)
        for ax, (kind, xlabel, panel_title) in zip(axes, PANELS):
            rows = curves.get(kind, [])
            for cat in (*CATEGORIES, "mean"):
                pts = [(t, ap) for c, t, ap in rows if c == cat]
                if not pts:
                    continue
                xs, ys = zip(*pts)
                ax.plot(xs, ys, color=COLORS[cat], label=cat,
                        linestyle="--" if cat == "mean" else "-")
            ax.set_xlabel(xlabel)
            ax.set_title(panel_title)
            ax.set_ylim(-2, 102)
        axes[0].set_ylabel("AP (%)")
        axes[-1].legend(loc="lower right")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path, format="png", metadata={"Software": None})
        plt.close(fig)

"""Figure output for training runs."""

from pathlib import Path
from typing import Dict, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (5.0, 3.2),
    "savefig.dpi": 150,
}


def plot_loss_curve(history: Sequence[Dict[str, float]], path: Union[str, Path]) -> Path:
    """Total and per-level training loss against optimizer step, log-scaled."""
    path = Path(path)
    steps = [h["step"] for h in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(steps, [h["total"] for h in history], color="k", lw=1.4, label="total")
        for level in range(1, 6):
            ax.plot(steps, [h[f"level{level}"] for h in history], lw=0.8, alpha=0.7, label=f"p{level}")
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(ncol=3, frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path

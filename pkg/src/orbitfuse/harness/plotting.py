"""Deterministic SVG trajectory plots."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..dynamics import Mode  # noqa: E402
from ..nnkit import value as nv  # noqa: E402


def _stack(predicted) -> np.ndarray | None:
    if predicted is None or len(predicted) == 0:
        return None
    if isinstance(predicted, np.ndarray):
        return predicted
    return np.stack([np.asarray(nv.data_of(getattr(s, "position", s))) for s in predicted])


def plot_trajectories(episode, predicted, output, burn_in: int = 6, title: str | None = None) -> None:
    """Ground truth (solid) and predicted (dashed) paths; the first predicted ``burn_in`` frames are burn-in.

    ``predicted`` is a list of states or a ``(T, N, 3)`` array covering frames
    ``0 .. T-1``; an empty list plots ground truth only. 3D episodes get an
    extra x-z panel.
    """
    truth = episode.trajectory.positions
    pred = _stack(predicted)
    if pred is not None and (pred.ndim != 3 or pred.shape[1:] != truth.shape[1:] or len(pred) > len(truth)):
        raise ValueError(f"predicted shape {pred.shape} does not fit ground truth {truth.shape}")
    panels = [(0, 1)] + ([(0, 2)] if episode.scene.mode is Mode.THREE_D else [])
    with plt.rc_context({"svg.hashsalt": "orbitfuse", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 5), squeeze=False)
        colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
        for ax, (a, b) in zip(axes[0], panels):
            for n in range(truth.shape[1]):
                c = colors[n % len(colors)]
                ax.plot(truth[:, n, a], truth[:, n, b], "-", color=c, lw=1.5, label="truth" if n == 0 else None)
                ax.plot(truth[0, n, a], truth[0, n, b], "o", color=c, ms=4)
                if pred is not None:
                    k = min(burn_in, len(pred))
                    ax.plot(pred[:k, n, a], pred[:k, n, b], ":", color=c, lw=1.2,
                            label="burn-in" if n == 0 else None)
                    ax.plot(pred[k - 1:, n, a], pred[k - 1:, n, b], "--", color=c, lw=1.2,
                            label="rollout" if n == 0 else None)
                    if k < len(pred):
                        ax.plot(pred[k - 1, n, a], pred[k - 1, n, b], "x", color=c, ms=6)
            names = "xyz"
            ax.set_xlabel(names[a])
            ax.set_ylabel(names[b])
            ax.set_aspect("equal", adjustable="datalim")
            ax.legend(loc="best", fontsize=8)
        fig.suptitle(title or episode.episode_id)
        fig.savefig(output, format="svg", metadata={"Date": None})
        plt.close(fig)

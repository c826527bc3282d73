"""Curve plots rendered to SVG with matplotlib's Agg backend."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

Series = tuple[Sequence[float], Sequence[float]]


def plot_curves(
    series: Mapping[str, Series],
    path: Union[str, Path],
    xlabel: str = "step",
    ylabel: str = "bits/dim",
    title: Optional[str] = None,
    description: str = "",
    marker: Optional[str] = None,
) -> Path:
    """Plot named (x, y) series on one axis and save as SVG.

    ``description`` lands in the SVG metadata so the file is self-describing.
    """
    if not series:
        raise ValueError("nothing to plot")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # Fixed ids keep repeated renders byte-identical.
    with plt.rc_context({"svg.hashsalt": "arbench", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        try:
            for name, (x, y) in series.items():
                ax.plot(list(x), list(y), label=name, marker=marker)
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            if title:
                ax.set_title(title)
            if len(series) > 1:
                ax.legend()
            ax.grid(alpha=0.3)
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None, "Description": description})
        finally:
            plt.close(fig)
    logger.debug(f"Wrote plot {path}")
    return path

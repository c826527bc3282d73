"""Dataset synthesis, IDX ingestion and artifact emission."""

from arbench.utils.datasets import (
    colorize_mnist,
    downscale,
    gen_manifold2d,
    gen_stroke_images,
    make_probe_images,
    split_dataset,
)
from arbench.utils.emit import emit_csv, emit_svg_heatmap, emit_table, read_csv, write_pnm, write_triptych
from arbench.utils.idx import load_idx, read_idx, write_idx

__all__ = [
    "colorize_mnist",
    "downscale",
    "emit_csv",
    "emit_svg_heatmap",
    "emit_table",
    "gen_manifold2d",
    "gen_stroke_images",
    "load_idx",
    "make_probe_images",
    "read_csv",
    "read_idx",
    "split_dataset",
    "write_idx",
    "write_pnm",
    "write_triptych",
]

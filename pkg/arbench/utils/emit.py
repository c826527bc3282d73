"""Artifact emission: CSV, SVG heatmaps, text tables and PGM/PPM snapshots.

Every artifact starts with a provenance header naming the experiment, the
seed and the artifact version.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
import pandas as pd
from matplotlib import colormaps
from matplotlib.colors import to_hex

from arbench import ARTIFACT_VERSION, __version__
from arbench.models.bins import BinSpec
from arbench.models.detection import DetectionMatrix
from arbench.models.records import GridField, TrajectoryRecord, Triptych, trajectory_frame

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"


def provenance(experiment: str, seed: int, **extra) -> str:
    """Single-line ``key=value`` description of where an artifact came from."""
    fields = {"experiment": experiment, "seed": seed, "artifact_version": ARTIFACT_VERSION, "arbench": __version__}
    fields.update({k: v for k, v in extra.items() if v is not None})
    return " ".join(f"{key}={value}" for key, value in fields.items())


def _prepare(path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _as_frame(record) -> pd.DataFrame:
    if isinstance(record, pd.DataFrame):
        return record
    if isinstance(record, TrajectoryRecord):
        return trajectory_frame([record])
    if isinstance(record, list) and record and isinstance(record[0], TrajectoryRecord):
        return trajectory_frame(record)
    if hasattr(record, "to_frame"):
        return record.to_frame()
    raise TypeError(f"cannot write {type(record).__name__} as CSV")


def emit_csv(record, path: Union[str, Path], experiment: str = "adhoc", seed: int = 0, **extra) -> Path:
    """Write a frame (or anything with ``to_frame``) as CSV.

    Floats are written with 17 significant digits so ``read_csv`` recovers
    them exactly. An empty frame gives a header-only file.
    """
    frame = _as_frame(record)
    path = _prepare(path)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(f"# {provenance(experiment, seed, **extra)}\n")
        frame.to_csv(handle, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def read_csv(path: Union[str, Path]) -> pd.DataFrame:
    """Read a CSV written by ``emit_csv``, skipping the provenance comment."""
    return pd.read_csv(path, comment="#", float_precision="round_trip")


def read_provenance(path: Union[str, Path]) -> dict[str, str]:
    """Parse the ``key=value`` header of an emitted artifact."""
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if "experiment=" in line:
                body = line.strip().lstrip("#").strip().removeprefix("<!--").removesuffix("-->").strip()
                return dict(part.split("=", 1) for part in body.split() if "=" in part)
    return {}


def heatmap_colors(values: np.ndarray, cmap: str = "viridis") -> np.ndarray:
    """Hex colour per cell, linear in value between the field's min and max."""
    values = np.asarray(values, dtype=np.float64)
    span = float(values.max() - values.min())
    scaled = (values - values.min()) / span if span > 0 else np.zeros_like(values)
    ramp = colormaps[cmap]
    return np.vectorize(lambda v: to_hex(ramp(float(v))), otypes=[object])(scaled)


def emit_svg_heatmap(
    field: GridField,
    path: Union[str, Path],
    experiment: str = "heatmap",
    seed: int = 0,
    cmap: str = "viridis",
    cell_size: int = 4,
    title: Optional[str] = None,
) -> Path:
    """Render a grid field as an SVG with one ``rect`` per cell.

    Row 0 (lowest x2) is drawn at the bottom. Each cell carries its grid
    indices and value as ``data-*`` attributes.
    """
    values = field.values
    ny, nx = values.shape
    colors = heatmap_colors(values, cmap)
    margin_left, margin_top, margin_bottom = 48, 24 if title else 8, 40
    width = margin_left + nx * cell_size + 90
    height = margin_top + ny * cell_size + margin_bottom
    (x1_lo, x1_hi), (x2_lo, x2_hi) = field.grid.x1_range, field.grid.x2_range
    plot_bottom = margin_top + ny * cell_size

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<!-- {provenance(experiment, seed, quantity=field.quantity)} -->",
    ]
    if title:
        lines.append(f'<text x="{margin_left}" y="16" font-size="12">{title}</text>')
    lines.append('<g class="cells" shape-rendering="crispEdges">')
    for row in range(ny):
        y = plot_bottom - (row + 1) * cell_size
        for col in range(nx):
            x = margin_left + col * cell_size
            lines.append(
                f'<rect x="{x}" y="{y}" width="{cell_size}" height="{cell_size}" fill="{colors[row, col]}" '
                f'data-row="{row}" data-col="{col}" data-value="{values[row, col]:.17g}"/>'
            )
    lines.append("</g>")

    plot_right = margin_left + nx * cell_size
    lines += [
        f'<text class="axis-label" x="{(margin_left + plot_right) / 2:g}" y="{height - 8}" '
        f'font-size="12" text-anchor="middle">x1</text>',
        f'<text class="axis-label" x="12" y="{(margin_top + plot_bottom) / 2:g}" font-size="12" '
        f'text-anchor="middle" transform="rotate(-90 12 {(margin_top + plot_bottom) / 2:g})">x2</text>',
        f'<text x="{margin_left}" y="{plot_bottom + 14}" font-size="10">{x1_lo:g}</text>',
        f'<text x="{plot_right}" y="{plot_bottom + 14}" font-size="10" text-anchor="end">{x1_hi:g}</text>',
        f'<text x="{margin_left - 4}" y="{plot_bottom}" font-size="10" text-anchor="end">{x2_lo:g}</text>',
        f'<text x="{margin_left - 4}" y="{margin_top + 10}" font-size="10" text-anchor="end">{x2_hi:g}</text>',
    ]
    # Legend: the two ends of the colour ramp.
    legend_x = plot_right + 12
    ramp = colormaps[cmap]
    lines += [
        f'<text class="legend" x="{legend_x}" y="{margin_top + 10}" font-size="10">'
        f'max {values.max():.3g}</text>',
        f'<line x1="{legend_x}" y1="{margin_top + 14}" x2="{legend_x + 30}" y2="{margin_top + 14}" '
        f'stroke="{to_hex(ramp(1.0))}" stroke-width="6"/>',
        f'<line x1="{legend_x}" y1="{plot_bottom - 14}" x2="{legend_x + 30}" y2="{plot_bottom - 14}" '
        f'stroke="{to_hex(ramp(0.0))}" stroke-width="6"/>',
        f'<text class="legend" x="{legend_x}" y="{plot_bottom}" font-size="10">min {values.min():.3g}</text>',
        "</svg>",
    ]
    path = _prepare(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Wrote {ny}x{nx} heatmap to {path}")
    return path


def emit_table(matrix: DetectionMatrix, path: Union[str, Path], experiment: str = "detect", seed: int = 0) -> Path:
    """Write the aligned text rendering of a detection matrix."""
    path = _prepare(path)
    path.write_text(f"# {provenance(experiment, seed)}\n{matrix.render_text()}", encoding="utf-8")
    return path


def _levels(image: np.ndarray, bins: BinSpec) -> np.ndarray:
    if bins.count > 256:
        raise ValueError(f"{bins.count} bins do not fit 8-bit PNM")
    return bins.bin_index(image).astype(np.uint8)


def write_pnm(path: Union[str, Path], image: np.ndarray, bins: BinSpec, comment: str = "") -> Path:
    """Write a (C, H, W) image as binary PGM (C = 1) or PPM (C = 3)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    channels, height, width = image.shape
    if channels not in (1, 3):
        raise ValueError(f"PNM needs 1 or 3 channels, got {channels}")
    levels = _levels(image, bins)
    magic = "P5" if channels == 1 else "P6"
    header = f"{magic}\n"
    for line in comment.splitlines():
        header += f"# {line}\n"
    header += f"{width} {height}\n{bins.count - 1}\n"
    path = _prepare(path)
    path.write_bytes(header.encode("ascii") + np.transpose(levels, (1, 2, 0)).tobytes())
    return path


def read_pnm(path: Union[str, Path]) -> np.ndarray:
    """Read a binary PGM/PPM written by ``write_pnm`` into (C, H, W) levels."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    position = 0
    while len(tokens) < 4:
        end = data.index(b"\n", position)
        line = data[position:end]
        position = end + 1
        if not line.startswith(b"#"):
            tokens.extend(line.split())
    magic, width, height = tokens[0].decode(), int(tokens[1]), int(tokens[2])
    channels = 1 if magic == "P5" else 3
    pixels = np.frombuffer(data, dtype=np.uint8, offset=position)
    return np.transpose(pixels.reshape(height, width, channels), (2, 0, 1)).copy()


def _to_rgb(batch: np.ndarray) -> np.ndarray:
    return np.repeat(batch, 3, axis=1) if batch.shape[1] == 1 else batch


def triptych_canvas(triptych: Triptych, bins: BinSpec, count: Optional[int] = None) -> np.ndarray:
    """Rows of (real | translated | reconstructed) separated by one blank pixel."""
    panels = [np.asarray(p, dtype=np.float64) for p in (triptych.real, triptych.translated, triptych.reconstructed)]
    if any(p.shape[1] == 3 for p in panels):
        panels = [_to_rgb(p) for p in panels]
    count = min(count or len(panels[0]), len(panels[0]))
    channels, height, width = panels[0].shape[1:]
    canvas = np.full((channels, count * (height + 1) - 1, 3 * (width + 1) - 1), bins.lo)
    for i in range(count):
        top = i * (height + 1)
        for j, panel in enumerate(panels):
            left = j * (width + 1)
            canvas[:, top:top + height, left:left + width] = panel[i]
    return canvas


def write_triptych(
    path: Union[str, Path],
    triptych: Triptych,
    bins: BinSpec,
    comment: str = "",
    count: Optional[int] = None,
) -> Path:
    canvas = triptych_canvas(triptych, bins, count)
    return write_pnm(path, canvas, bins, comment=f"{comment}\niteration={triptych.iteration}".strip())


def write_image_grid(
    path: Union[str, Path], images: Iterable[np.ndarray], bins: BinSpec, comment: str = ""
) -> Path:
    """Lay a batch of (C, H, W) images out in one row."""
    images = [np.asarray(image, dtype=np.float64) for image in images]
    channels, height, width = images[0].shape
    canvas = np.full((channels, height, len(images) * (width + 1) - 1), bins.lo)
    for i, image in enumerate(images):
        canvas[:, :, i * (width + 1):i * (width + 1) + width] = image
    return write_pnm(path, canvas, bins, comment=comment)

"""Tests for CSV, SVG, table, PNM and plot emitters."""

import re

import numpy as np
import pandas as pd
import pytest

from arbench.models.bins import BinSpec
from arbench.models.configs import GridSpec
from arbench.models.detection import DetectionMatrix
from arbench.models.records import GradField, TrajectoryRecord, Triptych, records_from_frame
from arbench.utils.emit import (
    emit_csv,
    emit_svg_heatmap,
    emit_table,
    read_csv,
    read_pnm,
    read_provenance,
    triptych_canvas,
    write_pnm,
)
from arbench.utils.plots import plot_curves

RECT = re.compile(r'<rect [^>]*fill="(#[0-9a-f]{6})" data-row="(\d+)" data-col="(\d+)"')


def _checkerboard():
    return GradField(grid=GridSpec(nx=2, ny=2), values=np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_svg_heatmap_cells(tmp_path):
    """Test one rect per cell with viridis extremes on the diagonal."""
    path = emit_svg_heatmap(_checkerboard(), tmp_path / "field.svg", seed=7)
    text = path.read_text()
    cells = {(int(r), int(c)): fill for fill, r, c in RECT.findall(text)}
    assert len(cells) == 4
    assert cells[(0, 0)] == cells[(1, 1)] == "#440154"
    assert cells[(0, 1)] == cells[(1, 0)] == "#fde725"
    assert ">x1</text>" in text and ">x2</text>" in text
    header = read_provenance(path)
    assert header["experiment"] == "heatmap"
    assert header["seed"] == "7"


def test_svg_row_zero_at_bottom(tmp_path):
    """Test lower x2 rows are drawn lower on the canvas."""
    text = emit_svg_heatmap(_checkerboard(), tmp_path / "field.svg").read_text()
    y_of = {
        int(row): float(y)
        for y, row in re.findall(r'<rect x="[^"]*" y="([^"]*)"[^>]*data-row="(\d+)" data-col="0"', text)
    }
    assert y_of[0] > y_of[1]


def test_csv_round_trip_is_exact(tmp_path):
    """Test floats survive writing and reading bit for bit."""
    frame = pd.DataFrame(
        {
            "step": [0, 1, 2],
            "value": [0.1, 1.0 / 3.0, 1e-300],
            "other": [np.pi, -2.5e17, np.nextafter(1.0, 2.0)],
        }
    )
    path = emit_csv(frame, tmp_path / "values.csv", experiment="train", seed=3)
    pd.testing.assert_frame_equal(read_csv(path), frame, check_exact=True)
    assert read_provenance(path)["experiment"] == "train"


def test_empty_frame_gives_header_only(tmp_path):
    """Test an empty frame still writes its column header."""
    path = emit_csv(pd.DataFrame(columns=["iteration", "loss"]), tmp_path / "empty.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("# experiment=adhoc")
    assert lines[1] == "iteration,loss"
    assert list(read_csv(path).columns) == ["iteration", "loss"]


def test_trajectory_csv_round_trip(tmp_path):
    """Test low-dimensional trajectories rebuild from their CSV."""
    rng = np.random.default_rng(0)
    records = [
        TrajectoryRecord(
            iteration=k,
            sample=rng.normal(size=(3, 2)),
            nll_bits_per_dim=float(rng.uniform(1, 5)),
            grad_norm=float(rng.uniform()),
            per_sample_bits=list(rng.uniform(1, 5, 3)),
            per_sample_grad_norm=list(rng.uniform(0, 1, 3)),
            step_norm=0.25 * k,
        )
        for k in (0, 5)
    ]
    path = emit_csv(records, tmp_path / "trajectory.csv", experiment="optimize")
    restored = records_from_frame(read_csv(path))
    assert [r.iteration for r in restored] == [0, 5]
    for before, after in zip(records, restored):
        np.testing.assert_array_equal(after.sample, before.sample)
        assert after.per_sample_bits == before.per_sample_bits
        assert after.nll_bits_per_dim == before.nll_bits_per_dim
        assert after.step_norm == before.step_norm


def test_emit_csv_rejects_unknown_records(tmp_path):
    """Test objects without a tabular form are refused."""
    with pytest.raises(TypeError):
        emit_csv(object(), tmp_path / "x.csv")


@pytest.mark.parametrize("channels", [1, 3])
def test_pnm_round_trip(tmp_path, channels):
    """Test PGM and PPM files keep every level."""
    bins = BinSpec.image()
    levels = np.random.default_rng(channels).integers(256, size=(channels, 4, 5))
    path = write_pnm(tmp_path / "image.pnm", bins.from_levels(levels), bins, comment="seed=1\nstep=2")
    np.testing.assert_array_equal(read_pnm(path), levels)
    assert path.read_bytes().startswith(b"P5\n" if channels == 1 else b"P6\n")


def test_pnm_rejects_two_channels(tmp_path):
    """Test only grey or RGB images are written."""
    with pytest.raises(ValueError):
        write_pnm(tmp_path / "bad.pnm", np.zeros((2, 3, 3)), BinSpec.image())


def test_triptych_canvas_layout():
    """Test panels sit side by side with one-pixel gutters and grey panels expand to RGB."""
    bins = BinSpec.image()
    real = np.full((2, 3, 4, 4), 0.5)
    translated = np.full((2, 1, 4, 4), bins.hi)
    shot = Triptych(iteration=4, real=real, translated=translated, reconstructed=real)
    canvas = triptych_canvas(shot, bins)
    assert canvas.shape == (3, 9, 14)
    assert np.all(canvas[:, 0:4, 5:9] == bins.hi)
    assert np.all(canvas[:, 4, :] == bins.lo)
    assert triptych_canvas(shot, bins, count=1).shape == (3, 4, 14)


def test_emit_table(tmp_path):
    """Test the detection table lands under a provenance line."""
    matrix = DetectionMatrix(rows=["digits", "noise"], columns=["AR-2SD", "CCG"], cells=[[95.0, 94.5], [0.0, 0.0]])
    path = emit_table(matrix, tmp_path / "table.txt", seed=2)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# experiment=detect seed=2")
    assert lines[1].split() == ["Dataset", "AR-2SD", "CCG"]
    assert lines[2].split() == ["digits", "95.0", "94.5"]


def test_plot_curves_is_deterministic(tmp_path):
    """Test repeated renders give identical bytes."""
    series = {"train": ([0, 1, 2], [3.0, 2.5, 2.2]), "validation": ([0, 2], [3.1, 2.4])}
    first = plot_curves(series, tmp_path / "a.svg", title="loss", description="seed=0")
    second = plot_curves(series, tmp_path / "b.svg", title="loss", description="seed=0")
    assert first.read_bytes() == second.read_bytes()
    with pytest.raises(ValueError):
        plot_curves({}, tmp_path / "c.svg")

"""End-to-end tests of the command-line entry point."""

import json

from arbench.cli import build_parser, main

TINY_HEATMAP = """\
experiment = heatmap
seed = 0
data.manifold_n = 200
made.hidden_sizes = 8, 8
optim.max_steps = 6
optim.batch_size = 32
optim.log_every = 2
train.checkpoints = 3
heatmap.grid.nx = 5
heatmap.grid.ny = 5
"""

TINY_DETECT = """\
experiment = detect
seed = 0
data.n_train = 80
data.n_test = 20
data.image_size = 8
pixel.hidden_channels = 4
pixel.layers = 2
pixel.first_kernel = 3
pixel.mixtures = 1
classifier.conv_channels = 4
classifier.feature_width = 8
optim.max_steps = 3
optim.batch_size = 8
detect.probe_count = 10
"""


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_parser_lists_experiments():
    """Test every experiment is a subcommand."""
    args = build_parser().parse_args(["detect", "--seed", "3"])
    assert args.experiment == "detect"
    assert args.seed == 3


def test_missing_config_exits_with_config_code(tmp_path, capsys):
    """Test a missing config file exits 2."""
    assert main(["train", "--config", str(tmp_path / "absent.cfg")]) == 2
    assert "error [config]" in capsys.readouterr().err


def test_unknown_key_exits_with_config_code(tmp_path, capsys):
    """Test an unknown key exits 2 and names the key."""
    code = main(["train", "--config", _write(tmp_path, "optim.bogus = 1\n"), "--output", str(tmp_path / "out")])
    assert code == 2
    err = capsys.readouterr().err
    assert "error [config]" in err
    assert "bogus" in err


def test_report_without_run_dir_exits_with_data_code(tmp_path):
    """Test the report experiment needs an existing run directory."""
    code = main(["report", "--run-dir", str(tmp_path / "nowhere"), "--output", str(tmp_path / "out")])
    assert code == 3


def test_heatmap_run_and_report(tmp_path):
    """Test a tiny heatmap run writes its fields and the report re-renders them."""
    run_dir = tmp_path / "heatmap"
    assert main(["heatmap", "--config", _write(tmp_path, TINY_HEATMAP), "--output", str(run_dir)]) == 0

    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["success"] is True
    assert summary["experiment"] == "heatmap"
    assert summary["stages_completed"] == ["train_made", "gradient_fields"]
    assert (run_dir / "grad_field_step_2.csv").exists()
    assert (run_dir / "grad_field_step_2.svg").exists()
    assert (run_dir / "density_step_2.svg").exists()
    assert (run_dir / "heatmap_summary.csv").exists()
    assert "grad_field_step_2.csv" in summary["artifacts"]
    assert (run_dir / "made_train_curve_validation.csv").exists()
    assert "made_train_curve_validation_bits_per_dim" in summary["metrics"]
    assert len(summary["metrics"]["near_zero_fraction"]) == 3

    report_dir = tmp_path / "report"
    assert main(["report", "--run-dir", str(run_dir), "--output", str(report_dir)]) == 0
    assert (report_dir / "grad_field_step_2.svg").exists()
    assert (report_dir / "made_train_curve.svg").exists()
    assert json.loads((report_dir / "summary.json").read_text())["success"] is True


def test_detect_run_fits_intervals_on_heldout_digits(tmp_path):
    """Test the NLL intervals are fitted on the digits held out of pixel training."""
    run_dir = tmp_path / "detect"
    assert main(["detect", "--config", _write(tmp_path, TINY_DETECT), "--output", str(run_dir)]) == 0

    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["success"] is True
    assert summary["metrics"]["interval_fit_examples"] == 8
    assert (run_dir / "pixel_train_curve_validation.csv").exists()
    assert (run_dir / "detection.csv").exists()

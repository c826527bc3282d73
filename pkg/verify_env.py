"""Verification script to ensure the environment is configured correctly."""

import sys
from pathlib import Path
from typing import Optional

from arbench.core.config import load_run_config, settings
from arbench.models.run_config import DataSource


def check_environment(config_path: Optional[str] = None) -> list[str]:
    """Return a list of problems; empty when the environment is usable."""
    problems = []
    cfg = load_run_config(config_path)
    if cfg.data.source == DataSource.IDX:
        for key in ("train_images", "train_labels", "test_images", "test_labels", "ood_images"):
            value = getattr(cfg.data, key)
            if value is None:
                continue
            path = Path(value)
            if not path.is_absolute() and not path.exists():
                path = settings.DATA_DIR / path
            if not path.exists():
                problems.append(f"data.{key} not found: {path}")
    if settings.RUNS_DIR.exists() and not settings.RUNS_DIR.is_dir():
        problems.append(f"runs directory is not a directory: {settings.RUNS_DIR}")
    return problems


def main(argv: Optional[list[str]] = None) -> int:
    """Verify that the environment is properly configured."""
    args = sys.argv[1:] if argv is None else argv
    try:
        problems = check_environment(args[0] if args else None)
    except Exception as e:
        print(f"Environment Configuration Error: {e}")
        return 1
    if problems:
        print("Environment Configuration Error:")
        for problem in problems:
            print(f"  - {problem}")
        print("\nPlease ensure:")
        print("1. ARBENCH_DATA_DIR (or .env) points at the directory holding the IDX files")
        print("2. The run config names existing files, or uses data.source = synthetic")
        return 1
    print("Environment Configured Successfully")
    return 0


if __name__ == "__main__":
    exit(main())

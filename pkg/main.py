"""Workbench entry point.

Usage:
    python main.py <train|heatmap|optimize|detect|arcycle|report> --config <path> [--seed N] [--output DIR]

Optional ARBENCH_* settings (data and run directories, log level, worker
threads) are read from the environment or a .env file.
"""

import sys

from arbench.cli import main

if __name__ == "__main__":
    sys.exit(main())

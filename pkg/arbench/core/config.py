"""Configuration: environment settings plus the line-oriented run config files."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Mapping, Optional

from dotenv import load_dotenv
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from arbench.core.errors import ConfigError
from arbench.models.run_config import RunConfig

logger = logging.getLogger(__name__)

# Load environment variables from .env file
load_dotenv()


class Settings(BaseSettings):
    """Workbench settings loaded from ``ARBENCH_*`` environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="ARBENCH_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    DATA_DIR: Path = Path("data")
    RUNS_DIR: Path = Path("runs")
    LOG_LEVEL: str = "INFO"
    # Threads for batch NLL / gradient-field evaluation.
    WORKERS: int = 1


# Global settings object
settings = Settings()

SEEDED_SECTIONS = ("optim", "made", "pixel", "classifier", "arcycle")


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse ``key = value`` lines into a nested dict.

    Dotted keys address nested sections. Blank lines and ``#`` comments are
    skipped; values stay strings for pydantic to coerce.

    Raises:
        ConfigError: On a malformed line or a repeated key.
    """
    tree: dict[str, Any] = {}
    seen: dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or any(not part for part in key.split(".")):
            raise ConfigError(f"malformed key {key!r}", line=number)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", line=number)
        seen[key] = number
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"{key!r} nests under a plain value", line=number)
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(f"{key!r} is a section, not a value", line=number)
        node[parts[-1]] = value
    return tree


def build_run_config(tree: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Validate a parsed tree, applying overrides and propagating the run seed.

    The run seed feeds every section that does not set its own seed.
    """
    tree = {key: dict(value) if isinstance(value, dict) else value for key, value in tree.items()}
    for key, value in (overrides or {}).items():
        if value is not None:
            tree[key] = value
    if "seed" in tree:
        for section in SEEDED_SECTIONS:
            block = tree.setdefault(section, {})
            if isinstance(block, dict):
                block.setdefault("seed", tree["seed"])
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"invalid run config: {problems}") from e


def load_run_config(path: Optional[str | Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Read a run config file (or defaults when ``path`` is None)."""
    tree: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        tree = parse_config_text(path.read_text(encoding="utf-8"))
        logger.info(f"Loaded run config from {path}")
    return build_run_config(tree, overrides)

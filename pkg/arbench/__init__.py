"""arbench: autoregressive density workbench."""

__version__ = "1.0.0"

# Bumped whenever an emitted file layout changes.
ARTIFACT_VERSION = 1

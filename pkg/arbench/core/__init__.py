"""Settings, run configuration and error types."""

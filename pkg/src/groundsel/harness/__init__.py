"""Command line, configuration and batch orchestration."""

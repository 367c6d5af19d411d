"""CLI, file formats, configuration and the corpus runner."""

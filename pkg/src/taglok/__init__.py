"""taglok: tag-map visual localization pipeline, simulator, and experiment harness."""

__version__ = "0.1.0"

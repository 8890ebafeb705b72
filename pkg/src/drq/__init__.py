"""Decision region quantification: robust test-time re-classification."""

__version__ = "0.1.0"

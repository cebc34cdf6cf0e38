"""Semi-synthetic music-score page generation and region-detection evaluation."""

__version__ = "0.1.0"

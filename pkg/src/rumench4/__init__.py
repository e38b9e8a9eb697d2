"""Rumen CH4 analysis: in-rumen logger and ambient sampler pipelines."""

__version__ = "0.1.0"

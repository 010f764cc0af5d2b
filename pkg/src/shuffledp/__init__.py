"""Frequency estimation, range counting and related tasks in the shuffled model of differential privacy."""

__version__ = "0.1.0"

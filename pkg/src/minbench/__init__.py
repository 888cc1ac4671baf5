"""Benchmark harness for data minimisation and purpose limitation in recommenders."""

__version__ = "0.1.0"

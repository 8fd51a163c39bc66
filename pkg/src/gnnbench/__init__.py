"""Benchmark suite for graph neural networks on binary node classification."""

__version__ = "0.1.0"

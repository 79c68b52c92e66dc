"""Surrogate-guided optimization of stochastic simulators with a learned call policy."""

__version__ = "0.1.0"

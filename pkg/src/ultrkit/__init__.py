"""Unbiased learning to rank with the Dual Learning Algorithm and pluggable list scorers."""

__version__ = "0.1.0"

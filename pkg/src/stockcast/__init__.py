"""Totally ordered, loss-tolerant market-data multicast over a token ring."""

__version__ = "0.1.0"

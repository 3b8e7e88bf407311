"""Tail bounds, strategy optimisation and simulation for heterogeneous Fork-Join queues."""

__version__ = "0.1.0"

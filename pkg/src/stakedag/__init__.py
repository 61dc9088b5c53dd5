"""Proof-of-stake DAG consensus: event chain, layering, finality, staking and a simulator."""

__version__ = "0.1.0"

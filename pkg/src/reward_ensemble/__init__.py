"""Consistency-guided reward ensembles for offline RL in a symbolic household world."""

__version__ = "0.1.0"

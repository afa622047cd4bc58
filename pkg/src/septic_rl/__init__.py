"""Offline RL toolkit for discretized sepsis treatment policies."""

__version__ = "0.1.0"

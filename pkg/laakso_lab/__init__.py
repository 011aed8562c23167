"""Laakso Lab: exact Laakso graphs, shortcut metrics and Lipschitz-map experiments."""

__version__ = "0.3.0"

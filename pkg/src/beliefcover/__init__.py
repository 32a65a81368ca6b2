"""Belief-space covering toolkit for off-policy evaluation in tabular POMDPs."""

__version__ = "0.1.0"

"""Simulate and analyse bargaining dialogues between persona-conditioned agents."""

__version__ = "0.1.0"

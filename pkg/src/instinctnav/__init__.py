"""Evolutionary meta-learning of instinct-modulated policies for safe 2D navigation."""

__version__ = "0.1.0"

"""Word+entity transformer with entity-aware self-attention, built on a
minimal reverse-mode tensor core."""

__version__ = "0.1.0"

"""GRU sequence-to-sequence next-word classifier, written on numpy."""

__version__ = "0.1.0"

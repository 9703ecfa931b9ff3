"""Text- and geometry-guided human-object interaction motion synthesis."""

__version__ = "0.1.0"

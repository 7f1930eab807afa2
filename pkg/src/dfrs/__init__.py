"""Dynamic fractional resource scheduling simulator, baselines and offline bound."""

__version__ = "0.1.0"

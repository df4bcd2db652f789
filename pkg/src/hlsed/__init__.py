"""Heart and lung sound event detection with a single model."""

__version__ = "0.1.0"

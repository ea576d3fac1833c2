"""Front tracking in scalar fields with GP gradient estimation."""

__version__ = "0.1.0"

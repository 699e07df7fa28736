"""gqarch - simulation and QML estimation for the long-memory GQARCH model."""

__version__ = "0.1.0"

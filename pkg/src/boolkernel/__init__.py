"""Multi-kernel Boolean representation of linear layers."""

__version__ = "0.1.0"

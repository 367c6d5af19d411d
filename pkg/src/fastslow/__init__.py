"""Streaming fast/slow cascaded transducer decoding, losses and metrics."""

__version__ = "0.1.0"

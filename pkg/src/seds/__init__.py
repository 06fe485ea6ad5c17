"""Semantically enhanced dual-stream encoder for sign-language text/video retrieval."""

__version__ = "0.1.0"

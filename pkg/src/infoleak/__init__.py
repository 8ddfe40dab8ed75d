"""Information-leaking feature detection and targeted Gaussian obfuscation."""

__version__ = "0.1.0"

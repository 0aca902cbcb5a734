"""Multi-scale detector building blocks on a small numpy tensor engine."""

__version__ = "0.1.0"

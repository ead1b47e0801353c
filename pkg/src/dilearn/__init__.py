"""Domain-incremental learning with shared conv weights and per-domain
BatchNorm / classifier banks."""

__version__ = "0.1.0"

"""Domain-agnostic Fourier neural operators on numpy."""

__version__ = "0.1.0"

"""Expose a TCP-controlled virtual platform as an FMI 3.0 co-simulation FMU."""

__version__ = "0.1.0"

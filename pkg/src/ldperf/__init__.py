"""Error exponents and exact asymptotics for data-driven detectors."""

__version__ = "0.1.0"

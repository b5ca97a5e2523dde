"""Multi-scale chart CNNs for stock trend prediction, built on NumPy."""

__version__ = "0.1.0"

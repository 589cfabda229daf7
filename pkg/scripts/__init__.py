"""BG/NBD + Gamma-Gamma customer-base analysis toolkit."""

__version__ = "0.1.0"

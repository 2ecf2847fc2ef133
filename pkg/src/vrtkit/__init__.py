"""Desk-scale video restoration kernels built on temporal mutual self attention."""

__version__ = "0.1.0"

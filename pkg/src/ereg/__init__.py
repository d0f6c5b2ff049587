"""Federated entity register and document exploration toolkit."""

__version__ = "0.1.0"

"""Chest X-ray visual-instruction corpus compiler and evaluation harness."""

__version__ = "0.1.0"

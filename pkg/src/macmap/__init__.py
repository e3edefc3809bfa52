"""Automatic tensorization of loop-nest programs with dot-product intrinsics."""

__version__ = "0.1.0"

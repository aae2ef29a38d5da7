"""Permutation-test inference for local and global spatial association statistics."""

__version__ = "0.1.0"

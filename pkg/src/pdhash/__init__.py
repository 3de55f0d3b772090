"""Probabilistic deep hashing: posterior-valued hash bits, N-pair loss, Hamming retrieval."""

__version__ = "0.1.0"

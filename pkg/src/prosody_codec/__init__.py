"""Phoneme-level RVQ prosody codec with analysis and evaluation tooling."""

__version__ = "0.1.0"

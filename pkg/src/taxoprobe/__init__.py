"""Probe frozen concept embeddings for hypernymy and rebuild the taxonomy they encode."""

__version__ = "0.1.0"

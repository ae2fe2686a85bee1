"""Extract per-layer hidden states for annotated gloss occurrences and write
EMB1 embedding stores with a JSON manifest sidecar."""

__version__ = "0.1.0"

"""Desk-scale contextual biasing for sequence transcription: prefix-tree
constrained pointer generation integrated into small attention-based
encoder-decoder and transducer models, with the full experimental loop."""

__version__ = "0.1.0"

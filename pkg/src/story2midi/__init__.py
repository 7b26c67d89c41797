"""Emotion-conditioned symbolic music generation pipeline."""

__version__ = "0.1.0"

"""Joint video-sentence embeddings with a web-image branch."""

__version__ = "0.1.0"

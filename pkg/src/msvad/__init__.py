"""Main-speaker voice activity detection with self-attention attractors."""

__version__ = "0.1.0"

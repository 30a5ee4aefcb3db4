"""Online neural-field reconstruction from streamed keyframes, at desk scale."""

__version__ = "0.1.0"

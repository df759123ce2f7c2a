"""Multi-view stereo scan labeling toolkit."""

__version__ = "0.1.0"

"""Talking-to-me detection on egocentric audio-visual streams."""

__version__ = "0.1.0"

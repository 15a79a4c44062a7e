"""EEG-to-speech-envelope decoder."""

__version__ = "0.1.0"

"""Linear maps from frozen image encoders into a frozen language model's input space."""

__version__ = "0.1.0"

"""Few-shot scooping with a deep-kernel GP: model, training, and benchmark."""

__version__ = "0.1.0"

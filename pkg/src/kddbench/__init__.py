"""KDD Cup 99 intrusion-detection benchmark: parsing, sampling, classifiers, metrics."""

__version__ = "0.1.0"

"""Transcript-to-video word alignment with anomaly detection, in numpy."""

from .estimators import CTCAligner, DVFAligner

__version__ = "0.1.0"

__all__ = ["CTCAligner", "DVFAligner", "__version__"]

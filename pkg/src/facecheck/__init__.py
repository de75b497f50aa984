"""Face detection with boosted Haar cascades, LBPH recognition and attendance logging."""

__version__ = "0.1.0"

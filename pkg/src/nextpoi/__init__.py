"""Next-POI prediction with long/short-term spatio-temporal self-attention."""

__version__ = "0.1.0"

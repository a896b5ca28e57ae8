"""Influenza-like-illness nowcasting from Wikipedia pageviews."""

__version__ = "0.1.0"

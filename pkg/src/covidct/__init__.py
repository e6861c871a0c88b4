"""COVID-19 CT pipeline: lung segmentation, extraction, slice removal and diagnosis."""

__version__ = "0.1.0"

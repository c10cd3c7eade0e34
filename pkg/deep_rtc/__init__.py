"""
Deep-RTC: realistic taxonomic classification head over precomputed features.
"""

__version__ = "0.1.0"

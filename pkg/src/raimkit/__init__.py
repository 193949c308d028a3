"""raimkit: guided multi-channel attention models for ICU monitoring streams."""

__version__ = "0.1.0"

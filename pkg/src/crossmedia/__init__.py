"""Cross-media similarity scoring and evaluation over click-through logs."""

__version__ = "0.1.0"

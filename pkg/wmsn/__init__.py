# wmsn/__init__.py
"""Cross-layer drift-plus-penalty controller simulator for heterogeneously powered wireless multimedia sensor networks."""

__version__ = "1.0.0"

"""Post-decoder quality enhancement for VVC-compressed video."""

__version__ = "0.1.0"

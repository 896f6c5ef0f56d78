"""seamkit: mesh seams, UV unwrapping, seam quality metrics, and seam generation."""

__version__ = "0.1.0"

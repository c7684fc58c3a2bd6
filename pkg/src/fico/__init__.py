"""fico: evaluation of fine- and coarse-grained image-text retrieval outputs and
benchmarking of exhaustive and approximate similarity search."""

__version__ = "0.1.0"

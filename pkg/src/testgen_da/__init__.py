"""Project-specific unit test generation: dataset building, post-processing and evaluation."""

__version__ = "0.1.0"

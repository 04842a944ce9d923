"""Multi-modal trunk annotation-to-detection pipeline toolkit."""

__version__ = "0.1.0"

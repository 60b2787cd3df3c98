"""Framework-free multi-modal state-space sequential recommender."""

__version__ = "0.1.0"

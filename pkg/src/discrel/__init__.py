"""discrel: multi-granularity text-pair encoding for discourse relation classification."""

__version__ = "0.1.0"

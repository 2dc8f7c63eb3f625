"""Cost-sensitive predicate classification with background filtering and relationship metrics."""

__version__ = "0.1.0"

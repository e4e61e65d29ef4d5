"""tabrebal: rebalancing toolkit for imbalanced tabular classification."""

__version__ = "0.1.0"

"""Joint detection and relational trajectory forecasting on synthetic traffic."""

__version__ = "0.1.0"

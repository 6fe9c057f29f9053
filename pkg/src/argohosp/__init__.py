"""Short-horizon hospitalization forecasting from search-query signals."""

__version__ = "0.1.0"

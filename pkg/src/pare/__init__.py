"""Item popularity forecasting for non-personalised top-N recommendation."""

__version__ = "0.1.0"

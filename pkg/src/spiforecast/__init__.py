"""Panel forecasting of a scalar index from country indicator panels."""

__version__ = "0.1.0"

"""Classical-field Monte Carlo for a 1D harmonically trapped Bose gas."""

__version__ = "0.1.0"

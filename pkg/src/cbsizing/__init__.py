"""Community battery receding-horizon simulation and sizing-method comparison."""

__version__ = "0.1.0"

"""Sharp Poincare-Sobolev constants and capacities on periodically perforated sets."""

__version__ = "0.1.0"

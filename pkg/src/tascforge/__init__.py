"""Two-stage transfer learning: Bayesian head tuning, then similarity-based
filter pruning, on a small numpy CNN engine."""

__version__ = "0.1.0"

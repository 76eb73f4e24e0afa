"""Risk-predictive soft actor-critic control lab for unsignalized intersections."""

__version__ = "0.1.0"

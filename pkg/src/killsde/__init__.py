"""Monte Carlo laboratory for SDEs killed at a domain boundary."""

__version__ = "0.1.0"

"""Heavy-tailed count distributions, calibrative mixing densities and fitting tools."""

__version__ = "0.1.0"

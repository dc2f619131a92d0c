"""Black-box auditing of differential privacy guarantees via divergence lower bounds."""

__version__ = "0.1.0"

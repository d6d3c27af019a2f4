"""Global sensing with critical Ising probes."""

__version__ = "0.1.0"

"""Digital-twin assisted task offloading simulator for vehicular edge computing."""

__version__ = "0.1.0"

"""Survival models for driver idle time: classical Cox, deep Cox and FACT."""

__version__ = "0.1.0"

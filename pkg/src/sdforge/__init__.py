"""Scenario discovery toolkit: sampling, PRIM/CART box search and GP-driven adaptive sampling."""

__version__ = "0.1.0"
SCHEMA_VERSION = 1

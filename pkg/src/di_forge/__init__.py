"""Deterministic identification codes: multi-layer sphere codebooks, channel
simulators, a layered projection decoder and Monte Carlo error estimation."""

__version__ = "0.1.0"

from .errors import DIError  # noqa: E402,F401

"""Delay-compensating pose observers for planar rigid bodies with landmark sensing."""

__version__ = "0.1.0"

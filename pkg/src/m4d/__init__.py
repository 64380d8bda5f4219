"""Desk-scale point-cloud-video backbone built on selective state-space scans."""

__version__ = "0.1.0"

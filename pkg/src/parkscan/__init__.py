"""Accessible-parking detection and width characterization from aerial tile imagery."""

__version__ = "0.1.0"

"""Noisy-label training laboratory: noise models, robust losses, small
estimators, early-stopping policies and 0-1 risk analysis."""

__version__ = "0.1.0"

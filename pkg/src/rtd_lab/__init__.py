"""Desk-scale replaced-token-detection pre-training with adaptive early exit."""

__version__ = "0.1.0"

"""Deformable-convolution next-frame predictor with CPU training and evaluation."""

__version__ = "0.1.0"

from dfpn.backend import BACKEND, HAVE_COMPILED  # noqa: F401

"""Langevin-sampling hypernetworks for uncertainty quantification of neural-ODE process models."""

__version__ = "0.1.0"

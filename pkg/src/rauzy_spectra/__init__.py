"""Twisted Birkhoff sums, Rauzy-Veech renormalization and spectral estimates
for suspension flows over interval exchanges and S-adic systems."""

__version__ = "0.1.0"

"""Stochastic integrals against cylindrical Wiener processes."""

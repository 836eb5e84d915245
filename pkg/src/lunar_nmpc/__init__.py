"""Minimum-propellant Pontryagin NMPC for rendezvous on lunar halo orbits."""

__version__ = "0.1.0"

"""Compressible Navier-Stokes with transport noise, solved in flow coordinates."""

__version__ = "0.1.0"

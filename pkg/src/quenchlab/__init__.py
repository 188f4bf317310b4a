"""Numerical laboratory for optimal control of a nonisothermal Cahn-Hilliard
system with Green-Naghdi thermal memory and deep-quench potentials."""

__version__ = "0.1.0"

"""Hartree plus Bogoliubov approximation of many-boson dynamics on a periodic lattice."""

__version__ = "0.1.0"

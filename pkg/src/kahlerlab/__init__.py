"""Monge-Ampere solvers, Kahler-Ricci flow and energy functionals on periodic model fibrations."""

__version__ = "0.1.0"

"""Mutually catalytic branching particle systems: simulation and verification."""

"""Computation services for xvl."""

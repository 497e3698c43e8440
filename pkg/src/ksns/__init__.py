"""Keller-Segel-Navier-Stokes coral fertilization simulator."""

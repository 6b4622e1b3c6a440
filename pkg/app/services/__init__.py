"""Simulation, learning and experiment services."""

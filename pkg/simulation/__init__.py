"""Simulation designs, ground-truth oracles and the Monte Carlo study runner."""

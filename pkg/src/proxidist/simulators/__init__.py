"""Data-generating processes, truth oracles and Monte Carlo drivers."""

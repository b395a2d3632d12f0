"""Synthetic data factory: cage graph, equilibrium solver, high-fidelity truth."""

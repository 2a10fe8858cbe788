"""Generative-adversarial equilibrium solvers for pseudo-games and exchange economies."""
__version__ = "0.1.0"

"""N-copy stochastic Lagrangian particle system for 2D Navier-Stokes on the torus, with resetting."""

__version__ = "0.1.0"

"""Variational Monte Carlo with warm-started low-rank stochastic reconfiguration.

Ground-state energy minimization for small atoms and molecules: a pooled
backflow determinant ansatz, Metropolis sampling of the square amplitude,
and a family of stochastic-reconfiguration optimizers built around a
warm-startable truncated SVD of the log-derivative stream.
"""

__version__ = "0.1.0"

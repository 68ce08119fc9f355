"""Accelerated stochastic gradient descent with Markov-chain gradient samples."""

__version__ = "0.1.0"

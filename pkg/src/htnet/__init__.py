"""Heavy-traffic tools for unitary stochastic processing networks."""

__version__ = "0.1.0"

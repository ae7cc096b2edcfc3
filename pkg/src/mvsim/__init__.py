"""Interacting particle approximations of McKean-Vlasov SDEs: simulation,
convergence-rate estimation and variation-process checks."""

__version__ = "0.1.0"

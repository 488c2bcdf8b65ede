"""Queueing-network model and optimizer for VNF placement in Fat Tree data centers."""

__version__ = "0.1.0"

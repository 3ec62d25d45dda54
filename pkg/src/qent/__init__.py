"""Distributed two-qubit entanglement simulation and BB84 channel experiments."""

"""Noise-immune quantum state transfer simulations."""

"""Sparsity-constrained LQR control, LQ games and communication cost allocation."""

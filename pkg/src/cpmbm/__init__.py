"""Clustered Poisson multi-Bernoulli mixture (PMBM) multi-target tracking."""

"""Purely atomic measures on Wasserstein spaces: metrics, laws, particle flows and liftings."""

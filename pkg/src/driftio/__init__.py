"""Drift-aware inverse optimization for constrained resource allocation."""

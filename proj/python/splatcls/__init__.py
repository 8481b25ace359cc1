"""Gaussian-splat image classification toolkit."""

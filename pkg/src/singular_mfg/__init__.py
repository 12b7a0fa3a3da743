"""Regularized singular mean-field games on the flat torus."""

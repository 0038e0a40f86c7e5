"""Randomized block coordinate descent for block-separable linear ill-posed problems."""

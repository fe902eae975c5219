"""Entropy-penalized Mather problem: eigen-potentials, Markov kernels, spectral gap and correlation decay."""
__version__ = "0.1.0"

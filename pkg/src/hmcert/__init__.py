"""Certificates for geometric ergodicity and parameter-Lipschitz bounds of finite Markov kernel families."""

__version__ = "0.1.0"

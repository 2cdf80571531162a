"""Compressed sensing of signals generated from sparse latents."""

__version__ = "1.0.0"
__author__ = "GSL Compressed Sensing"
__description__ = "Compressed sensing of signals with sparse latents under generative priors"

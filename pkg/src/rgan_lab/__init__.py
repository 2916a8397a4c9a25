"""Robust GAN training lab: worst-case perturbation training for GANs on
low-dimensional synthetic data, with closed-form theory checks."""

__version__ = "0.1.0"

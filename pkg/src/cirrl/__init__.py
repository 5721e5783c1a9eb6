"""Causal representation learning with a distributionally robust linear readout.

The package trains an energy-score autoencoder whose latent prior is an
environment-conditioned Gaussian mixture, then fits a closed-form robust
linear estimator on the learned latents.  Synthetic multi-environment
generators, worst-case-risk diagnostics, ERM/IRM baselines and a CLI
harness live in the submodules.
"""

__version__ = "0.1.0"

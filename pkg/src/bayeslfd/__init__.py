"""Uncertainty-aware learning from demonstration.

A Bayesian neural-network policy trained on temporal windows of
interaction history provides both actions and a scalar predictive
uncertainty.  A smoothed, adaptively-thresholded detector turns that
uncertainty into a decision about when to request new expert
demonstrations, evaluated against a Gaussian-process baseline and
naive/random query strategies on simulated control tasks.
"""

__version__ = "0.1.0"

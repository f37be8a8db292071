"""Task-aware OOD certificates for regression models.

Trains a regression model and a score-based diffusion model on joint
input/output data, estimates the joint log-likelihood of (input, prediction)
pairs along the probability-flow ODE, and turns those values into ID/OOD
decisions and a-posteriori error estimates.
"""

__version__ = "0.1.0"

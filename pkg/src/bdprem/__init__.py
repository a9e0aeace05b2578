"""Birth-death reporting-error layer over a Poisson random-effects model.

Reported longitudinal counts y are modelled as noisy versions of latent true
counts z: y | z follows an equal-rate linear birth-death transition law
(unbiased, variance 2*lambda*z, absorbing at zero) whose rate lambda has its
own log-linear regression; z follows a Poisson random-effects model.
Posterior inference runs through an adaptive random-scan
Metropolis-Hastings-within-Gibbs sampler.
"""

from . import bd_process, prem, priors, mcmc, data, reports, simulation

__all__ = ["bd_process", "prem", "priors", "mcmc", "data", "reports", "simulation"]

__version__ = "0.1.0"

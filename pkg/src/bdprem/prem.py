"""Poisson random-effects layer and the log-linear reporting-rate model.

True counts z follow a Poisson law with log mean x'alpha + h'beta_i, where
beta_i ~ N(0, D_beta) is a subject-level random effect.  The per-observation
reporting rate is lambda = exp(w'psi), optionally times exp(epsilon_i) when a
subject-level rate random effect is enabled.  The marginal moment formulas
for the reported counts y combine the Poisson layer with the birth-death
variance 2*lambda*z.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

__all__ = [
    "ObservationDesign",
    "ModelSpec",
    "log_mu",
    "poisson_log_lik",
    "unconditional_mean",
    "marginal_variance",
    "marginal_covariance",
    "bd_rate",
]


@dataclass
class ObservationDesign:
    """One observation row: covariates for the mean (x), random-effect (h)
    and rate (w) predictors, plus time, subject index and reported count."""

    x: np.ndarray
    h: np.ndarray
    w: np.ndarray
    time: float = 0.0
    subject_index: int = 0
    y: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.y < 0:
            raise ValueError("reported count must be non-negative")


@dataclass
class ModelSpec:
    """Dimensions and structure of the regression model.

    fixed_idx lists the positions (0-based) of the time-fixed columns of x;
    the remaining columns form the time-varying block.  family selects the
    full reporting model ("bdprem") or the plain Poisson random-effects
    model ("prem", reported counts treated as true).
    """

    p: int
    r: int
    q: int
    fixed_idx: list = field(default_factory=list)
    use_rate_random_effect: bool = False
    family: str = "bdprem"

    def __post_init__(self):
        self.fixed_idx = sorted(int(i) for i in self.fixed_idx)
        if len(set(self.fixed_idx)) != len(self.fixed_idx):
            raise ValueError("fixed_idx contains duplicates")
        if self.fixed_idx and (self.fixed_idx[0] < 0 or self.fixed_idx[-1] >= self.p):
            raise ValueError("fixed_idx out of range")
        if self.family not in ("bdprem", "prem"):
            raise ValueError(f"unknown family {self.family!r}")

    @property
    def varying_idx(self):
        fixed = set(self.fixed_idx)
        return [i for i in range(self.p) if i not in fixed]


def log_mu(obs: ObservationDesign, alpha, beta_i):
    """Log of the conditional Poisson mean: x'alpha + h'beta_i."""
    alpha = np.asarray(alpha, dtype=float)
    beta_i = np.atleast_1d(np.asarray(beta_i, dtype=float))
    if alpha.shape != obs.x.shape or beta_i.shape != obs.h.shape:
        raise ValueError("dimension mismatch between covariates and coefficients")
    return float(obs.x @ alpha + obs.h @ beta_i)


def poisson_log_lik(z, log_mu):
    """Poisson log likelihood z*log_mu - mu - log Gamma(z+1).

    z may be fractional (prior pseudo-counts); the factorial is evaluated
    through the log-gamma function throughout.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("count must be non-negative")
    log_mu = np.asarray(log_mu, dtype=float)
    out = z * log_mu - np.exp(log_mu) - gammaln(z + 1.0)
    return float(out) if out.ndim == 0 else out


def _check_cov(d_beta, r):
    d = np.atleast_2d(np.asarray(d_beta, dtype=float))
    if d.shape != (r, r):
        raise ValueError(f"covariance must be {r}x{r}")
    if not np.allclose(d, d.T):
        raise ValueError("covariance must be symmetric")
    try:
        np.linalg.cholesky(d)
    except np.linalg.LinAlgError:
        raise ValueError("covariance must be positive definite") from None
    return d


def unconditional_mean(obs: ObservationDesign, alpha, d_beta):
    """Marginal mean of the true count: exp(x'alpha + h'D h / 2)."""
    d = _check_cov(d_beta, obs.h.size)
    return float(np.exp(obs.x @ np.asarray(alpha, float) + obs.h @ d @ obs.h / 2.0))


def marginal_variance(obs: ObservationDesign, alpha, d_beta, lam):
    """Marginal variance of the reported count.

    (2*lam + 1)*nu + nu^2*(exp(h'D h) - 1); the reporting layer adds
    2*lam*nu on top of the Poisson random-effects variance.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    d = _check_cov(d_beta, obs.h.size)
    nu = unconditional_mean(obs, alpha, d)
    return (2.0 * lam + 1.0) * nu + nu**2 * (np.exp(obs.h @ d @ obs.h) - 1.0)


def marginal_covariance(obs_j: ObservationDesign, obs_k: ObservationDesign, alpha, d_beta):
    """Within-subject covariance of two reported counts; the reporting layer
    leaves it unchanged from the Poisson random-effects value."""
    d = _check_cov(d_beta, obs_j.h.size)
    nu_j = unconditional_mean(obs_j, alpha, d)
    nu_k = unconditional_mean(obs_k, alpha, d)
    return nu_j * nu_k * (np.exp(obs_j.h @ d @ obs_k.h) - 1.0)


def bd_rate(obs: ObservationDesign, psi, epsilon_i=None):
    """Reporting-error rate exp(w'psi), times exp(epsilon_i) when the rate
    random effect is enabled."""
    psi = np.asarray(psi, dtype=float)
    if psi.shape != obs.w.shape:
        raise ValueError("dimension mismatch between w and psi")
    eta = float(obs.w @ psi)
    if epsilon_i is not None:
        eta += float(epsilon_i)
    return float(np.exp(eta))

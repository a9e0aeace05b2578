"""Prior construction: elicitation arithmetic, augmentation datasets, and
posteriors from previous studies.

Three routes produce the normal/inverse-gamma prior consumed by the sampler:

* point-and-range: a coefficient's prior SD is backed out of an elicited
  "at most d times as many" statement placed at the edge of a 95% interval;
* data augmentation (DA): a small artificial dataset is pushed through the
  model likelihood; the resulting density is either used directly
  (`da_log_prior`) or summarized into independent normals by a short MCMC;
* previous dataset (DS): posterior means/covariances from an earlier study,
  variance-inflated by g, optionally with an average/difference split for
  effects that exist once in the old study but twice in the new one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import bd_process as bd

__all__ = [
    "PriorSpec",
    "DaPriorData",
    "point_range_sd",
    "da_log_prior",
    "ds_prior_from_posterior",
    "split_average_difference_prior",
    "ig_from_equivalent_sample",
    "summarize_da_prior",
    "load_da_prior_data",
    "read_prior_table",
    "write_prior_table",
]

Z95 = 1.96


def _as_pd_cov(m, name):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1] or not np.allclose(m, m.T):
        raise ValueError(f"{name} must be a symmetric square matrix")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None
    return m


@dataclass
class PriorSpec:
    """Normal priors for the regression blocks plus inverse-gamma priors for
    the random-effect variances.  Always proper: covariances are checked for
    positive definiteness and the IG parameters for positivity."""

    m_alpha: np.ndarray
    sigma_alpha: np.ndarray
    m_psi: np.ndarray
    sigma_psi: np.ndarray
    dbeta_shape: float
    dbeta_scale: float
    depsilon_shape: float | None = None
    depsilon_scale: float | None = None
    alpha_names: list | None = None
    psi_names: list | None = None

    def __post_init__(self):
        self.m_alpha = np.asarray(self.m_alpha, dtype=float).reshape(-1)
        self.m_psi = np.asarray(self.m_psi, dtype=float).reshape(-1)
        self.sigma_alpha = _as_pd_cov(self.sigma_alpha, "sigma_alpha")
        self.sigma_psi = _as_pd_cov(self.sigma_psi, "sigma_psi")
        if self.sigma_alpha.shape[0] != self.m_alpha.size:
            raise ValueError("sigma_alpha does not match m_alpha")
        if self.sigma_psi.shape[0] != self.m_psi.size:
            raise ValueError("sigma_psi does not match m_psi")
        if not (self.dbeta_shape > 0 and self.dbeta_scale > 0):
            raise ValueError("inverse-gamma parameters must be positive")
        has_eps = (self.depsilon_shape is not None, self.depsilon_scale is not None)
        if any(has_eps) and not all(has_eps):
            raise ValueError("rate random-effect prior needs both shape and scale")
        if self.depsilon_shape is not None:
            if not (self.depsilon_shape > 0 and self.depsilon_scale > 0):
                raise ValueError("inverse-gamma parameters must be positive")


@dataclass
class DaPriorData:
    """Augmentation dataset: pseudo-counts for the Poisson part (z0 may be
    fractional) and (reported, true) pairs with rate covariates for the
    reporting part."""

    prem_z: np.ndarray
    prem_x: np.ndarray
    bd_y: np.ndarray
    bd_z: np.ndarray
    bd_w: np.ndarray

    def __post_init__(self):
        self.prem_z = np.asarray(self.prem_z, dtype=float).reshape(-1)
        self.prem_x = np.atleast_2d(np.asarray(self.prem_x, dtype=float))
        self.bd_y = np.asarray(self.bd_y, dtype=int).reshape(-1)
        self.bd_z = np.asarray(self.bd_z, dtype=int).reshape(-1)
        self.bd_w = np.atleast_2d(np.asarray(self.bd_w, dtype=float))
        if self.prem_z.size and self.prem_x.shape[0] != self.prem_z.size:
            raise ValueError("prem_x rows must match prem_z")
        if self.bd_y.size and (
            self.bd_w.shape[0] != self.bd_y.size or self.bd_z.size != self.bd_y.size
        ):
            raise ValueError("bd rows must align")
        if np.any(self.prem_z < 0) or np.any(self.bd_y < 0) or np.any(self.bd_z < 0):
            raise ValueError("counts must be non-negative")

    @property
    def k1(self):
        return self.prem_z.size

    @property
    def k2(self):
        return self.bd_y.size

    def check_proper(self):
        """Propriety requires at least as many pseudo-rows as coefficients."""
        if self.k1 < self.prem_x.shape[1]:
            raise ValueError("need K1 >= p pseudo-observations for a proper prior")
        if self.k2 < self.bd_w.shape[1]:
            raise ValueError("need K2 >= q pseudo-observations for a proper prior")


def point_range_sd(m, d):
    """Prior SD from the point-and-range rule: solve exp(m + 1.96*s) = d.

    d is the elicited "too big" multiplicative effect sitting at the edge of
    a 95% prior interval around the point estimate m (on the log scale).
    """
    if not d > np.exp(m):
        raise ValueError("range edge d must exceed exp(m)")
    return (np.log(d) - m) / Z95


def ig_from_equivalent_sample(n_equiv_obs, obs_per_subject, d_bar):
    """Inverse-gamma hyperparameters from an equivalent prior sample size.

    n_equiv_obs observations at obs_per_subject per subject are worth
    n_equiv_obs/obs_per_subject subjects, giving shape a = subjects/2; the
    scale solves d_bar = b/(a-1) so the prior mean equals the previous
    study's point estimate.
    """
    if not (n_equiv_obs > 0 and obs_per_subject > 0 and d_bar > 0):
        raise ValueError("all inputs must be positive")
    a = (n_equiv_obs / obs_per_subject) / 2.0
    if a <= 1.0:
        raise ValueError(f"shape a = {a} <= 1: prior mean undefined")
    return a, d_bar * (a - 1.0)


def ds_prior_from_posterior(post_mean, post_cov, g):
    """Previous-study posterior recycled as a prior, variance inflated by g."""
    if not g > 0:
        raise ValueError("inflation factor g must be positive")
    post_mean = np.asarray(post_mean, dtype=float).reshape(-1)
    cov = _as_pd_cov(post_cov, "post_cov")
    return post_mean.copy(), g * cov


def split_average_difference_prior(avg_mean, avg_cov, diff_sd, diff_corr):
    """Joint prior for two effect vectors constrained through their average.

    With A ~ N(avg_mean, avg_cov) the prior on the average and an independent
    difference D ~ N(0, S), S compound-symmetric with variance diff_sd^2 and
    correlation diff_corr, the pair (A + D/2, A - D/2) is jointly normal with

        mean  (avg_mean, avg_mean)
        Var   avg_cov + S/4   (each block)
        Cov   avg_cov - S/4   (across blocks).
    """
    if not diff_sd > 0:
        raise ValueError("diff_sd must be positive")
    if not 0.0 <= diff_corr < 1.0:
        raise ValueError("diff_corr must lie in [0, 1)")
    avg_mean = np.asarray(avg_mean, dtype=float).reshape(-1)
    avg_cov = _as_pd_cov(avg_cov, "avg_cov")
    k = avg_mean.size
    s = diff_sd**2 * ((1.0 - diff_corr) * np.eye(k) + diff_corr * np.ones((k, k)))
    var = avg_cov + s / 4.0
    cov = avg_cov - s / 4.0
    mean = np.concatenate([avg_mean, avg_mean])
    joint = np.block([[var, cov], [cov, var]])
    _as_pd_cov(joint, "split prior covariance")
    return mean, joint


def _invgamma_logpdf(x, a, b):
    return a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(x) - b / x


def da_log_prior(alpha, beta0, d_beta, psi, data: DaPriorData, pre_prior=(3.0, 2.0)):
    """Log density of the augmentation prior, up to the likelihood's own
    normalization.

    Sums the Poisson log likelihood of the pseudo true counts at linear
    predictor x0'alpha + beta0_k, the N(0, d_beta) log density of the
    artificial random effects, the IG pre-prior on d_beta, and the
    reporting-distribution log pmf of the (y0, z0) pairs at rate
    exp(w0'psi).  The beta0 are nuisance coordinates.
    """
    if d_beta <= 0:
        raise ValueError("d_beta must be positive")
    a, b = pre_prior
    total = float(_invgamma_logpdf(d_beta, a, b))
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    beta0 = np.asarray(beta0, dtype=float).reshape(-1)
    if data.k1:
        if beta0.size != data.k1:
            raise ValueError("beta0 must have one entry per Poisson pseudo-row")
        lp = data.prem_x @ alpha + beta0
        total += float(
            np.sum(data.prem_z * lp - np.exp(lp) - gammaln(data.prem_z + 1.0))
        )
        total += float(
            np.sum(-0.5 * np.log(2.0 * np.pi * d_beta) - beta0**2 / (2.0 * d_beta))
        )
    if data.k2:
        psi = np.asarray(psi, dtype=float).reshape(-1)
        lam = np.exp(data.bd_w @ psi)
        total += float(np.sum(bd.log_pmf_arrays(data.bd_y, data.bd_z, lam)))
    return total


def summarize_da_prior(
    data: DaPriorData,
    pre_prior=(3.0, 2.0),
    iterations=60_000,
    burn_in=10_000,
    seed=0,
    target_accept=0.35,
    alpha_names=None,
    psi_names=None,
):
    """Short MCMC on the augmentation density, summarized as a PriorSpec.

    Uses the centered parameterization eta_k = x0_k'alpha + beta0_k: given
    eta the coefficient vector has an exact normal conditional (flat prior,
    full-rank pseudo-design), eta gets vectorized random-walk updates, the
    variance is conjugate, and psi gets an adaptive random-walk block.  The
    recorded draws are condensed into independent normals for the regression
    blocks and a moment-matched inverse gamma for the variance.
    """
    from .mcmc import AdaptiveScale, adapt_scale

    data.check_proper()
    a, b = pre_prior
    rng = np.random.default_rng(seed)
    k1, p = data.prem_x.shape
    k2, q = data.bd_w.shape

    xtx = data.prem_x.T @ data.prem_x
    try:
        xtx_chol = np.linalg.cholesky(np.linalg.inv(xtx))
    except np.linalg.LinAlgError:
        raise ValueError("pseudo-design must have full column rank") from None

    # start eta at the row-wise log pseudo-counts
    eta = np.log(data.prem_z + 0.5)
    d_beta = b / max(a - 1.0, 0.5)
    psi = np.zeros(q)
    alpha = np.zeros(p)
    lam = np.exp(data.bd_w @ psi)
    bd_ll = float(np.sum(bd.log_pmf_arrays(data.bd_y, data.bd_z, lam)))

    sc_eta = AdaptiveScale(target_pi=target_accept)
    sc_psi = AdaptiveScale(target_pi=target_accept)

    keep = iterations - burn_in
    alpha_draws = np.empty((keep, p))
    psi_draws = np.empty((keep, q))
    d_draws = np.empty(keep)

    for it in range(iterations):
        # exact conditional draw of the coefficient vector
        mean = np.linalg.solve(xtx, data.prem_x.T @ eta)
        alpha = mean + np.sqrt(d_beta) * (xtx_chol @ rng.standard_normal(p))

        # vectorized random-walk update of the centered effects
        prior_mean = data.prem_x @ alpha
        prop = eta + np.sqrt(sc_eta.kappa) * rng.standard_normal(k1)
        delta = (
            data.prem_z * (prop - eta)
            - (np.exp(prop) - np.exp(eta))
            - ((prop - prior_mean) ** 2 - (eta - prior_mean) ** 2) / (2.0 * d_beta)
        )
        acc = np.log(rng.random(k1)) < delta
        eta[acc] = prop[acc]
        sc_eta.proposal_count += k1
        sc_eta.accept_count += int(acc.sum())
        adapt_scale(sc_eta, it + 1)

        # conjugate variance update
        beta0 = eta - data.prem_x @ alpha
        d_beta = 1.0 / rng.gamma(k1 / 2.0 + a, 1.0 / (0.5 * beta0 @ beta0 + b))

        # reporting-rate coefficients
        if k2:
            prop = psi + np.sqrt(sc_psi.kappa) * rng.standard_normal(q)
            prop_ll = float(
                np.sum(bd.log_pmf_arrays(data.bd_y, data.bd_z, np.exp(data.bd_w @ prop)))
            )
            sc_psi.proposal_count += 1
            if np.log(rng.random()) < prop_ll - bd_ll:
                psi, bd_ll = prop, prop_ll
                sc_psi.accept_count += 1
            adapt_scale(sc_psi, it + 1)

        if it >= burn_in:
            alpha_draws[it - burn_in] = alpha
            psi_draws[it - burn_in] = psi
            d_draws[it - burn_in] = d_beta

    d_mean, d_var = d_draws.mean(), d_draws.var(ddof=1)
    ig_a = 2.0 + d_mean**2 / d_var
    ig_b = d_mean * (ig_a - 1.0)
    return PriorSpec(
        m_alpha=alpha_draws.mean(axis=0),
        sigma_alpha=np.diag(alpha_draws.std(axis=0, ddof=1) ** 2),
        m_psi=psi_draws.mean(axis=0),
        sigma_psi=np.diag(np.maximum(psi_draws.std(axis=0, ddof=1) ** 2, 1e-12)),
        dbeta_shape=ig_a,
        dbeta_scale=ig_b,
        alpha_names=alpha_names,
        psi_names=psi_names,
    )


# ---------------------------------------------------------------------------
# file formats


def load_da_prior_data(prem_path, bd_path):
    """Read the two augmentation CSVs: `z,<covariates...>` for the Poisson
    part and `y,z,<covariates...>` for the reporting part.  Returns the data
    plus the covariate names of each part."""
    with open(prem_path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0].strip() != "z":
        raise ValueError(f"{prem_path}: first column must be 'z'")
    x_names = [c.strip() for c in header[1:]]
    prem_z = [float(r[0]) for r in body]
    prem_x = [[float(v) for v in r[1:]] for r in body]

    with open(bd_path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if len(header) < 2 or header[0].strip() != "y" or header[1].strip() != "z":
        raise ValueError(f"{bd_path}: first columns must be 'y,z'")
    w_names = [c.strip() for c in header[2:]]
    bd_y = [int(r[0]) for r in body]
    bd_z = [int(r[1]) for r in body]
    bd_w = [[float(v) for v in r[2:]] for r in body]

    data = DaPriorData(
        prem_z=np.array(prem_z),
        prem_x=np.array(prem_x, dtype=float).reshape(len(prem_z), -1),
        bd_y=np.array(bd_y),
        bd_z=np.array(bd_z),
        bd_w=np.array(bd_w, dtype=float).reshape(len(bd_y), -1),
    )
    return data, x_names, w_names


def read_prior_table(path):
    """Parse the sectioned prior table.

    Sections [alpha] and [psi] hold `name, mean, sd` rows; [dbeta] (and the
    optional [depsilon]) hold `shape, value` and `scale, value` rows.
    Comments start with '#'.
    """
    sections = {"alpha": [], "psi": [], "dbeta": [], "depsilon": []}
    current = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                name = line[1:-1].strip().lower()
                if name not in sections:
                    raise ValueError(f"{path}:{lineno}: unknown section [{name}]")
                current = name
                continue
            if current is None:
                raise ValueError(f"{path}:{lineno}: row outside any section")
            parts = [p.strip() for p in line.split(",")]
            sections[current].append((lineno, parts))

    def coef_block(name):
        names, means, sds = [], [], []
        for lineno, parts in sections[name]:
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'name, mean, sd'")
            names.append(parts[0])
            means.append(float(parts[1]))
            sds.append(float(parts[2]))
        return names, np.array(means), np.array(sds)

    def ig_block(name):
        vals = {}
        for lineno, parts in sections[name]:
            if len(parts) != 2 or parts[0] not in ("shape", "scale"):
                raise ValueError(f"{path}:{lineno}: expected 'shape, x' or 'scale, x'")
            vals[parts[0]] = float(parts[1])
        if sections[name] and set(vals) != {"shape", "scale"}:
            raise ValueError(f"{path}: section [{name}] needs shape and scale")
        return vals

    a_names, a_mean, a_sd = coef_block("alpha")
    p_names, p_mean, p_sd = coef_block("psi")
    if not a_names or not p_names:
        raise ValueError(f"{path}: [alpha] and [psi] sections are required")
    dbeta = ig_block("dbeta")
    if not dbeta:
        raise ValueError(f"{path}: [dbeta] section is required")
    deps = ig_block("depsilon")
    return PriorSpec(
        m_alpha=a_mean,
        sigma_alpha=np.diag(a_sd**2),
        m_psi=p_mean,
        sigma_psi=np.diag(p_sd**2),
        dbeta_shape=dbeta["shape"],
        dbeta_scale=dbeta["scale"],
        depsilon_shape=deps.get("shape"),
        depsilon_scale=deps.get("scale"),
        alpha_names=a_names,
        psi_names=p_names,
    )


def write_prior_table(spec: PriorSpec, path):
    """Inverse of read_prior_table for diagonal-covariance specs."""
    lines = ["[alpha]"]
    a_sd = np.sqrt(np.diag(spec.sigma_alpha))
    names = spec.alpha_names or [f"alpha_{i}" for i in range(spec.m_alpha.size)]
    for name, m, s in zip(names, spec.m_alpha, a_sd):
        lines.append(f"{name}, {float(m)!r}, {float(s)!r}")
    lines.append("[psi]")
    p_sd = np.sqrt(np.diag(spec.sigma_psi))
    names = spec.psi_names or [f"psi_{i}" for i in range(spec.m_psi.size)]
    for name, m, s in zip(names, spec.m_psi, p_sd):
        lines.append(f"{name}, {float(m)!r}, {float(s)!r}")
    lines.append("[dbeta]")
    lines.append(f"shape, {float(spec.dbeta_shape)!r}")
    lines.append(f"scale, {float(spec.dbeta_scale)!r}")
    if spec.depsilon_shape is not None:
        lines.append("[depsilon]")
        lines.append(f"shape, {float(spec.depsilon_shape)!r}")
        lines.append(f"scale, {float(spec.depsilon_scale)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

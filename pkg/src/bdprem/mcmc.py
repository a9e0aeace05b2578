"""Random-scan Metropolis/Metropolis-Hastings-within-Gibbs sampler.

One parameter block is chosen per iteration according to fixed scan
probabilities.  Random-walk blocks (centered random effects, time-varying
coefficients, rate coefficients, latent true counts, rate random effects)
carry auto-optimizing proposal scales pushed toward a target acceptance
probability; the time-fixed coefficients and the random-effect variances
have exact conditional draws.

Hierarchical centering: instead of the subject effects beta_i the chain
carries eta_i = beta_i + x_fixed_i1'alpha_fixed, which makes the time-fixed
coefficient block conjugate normal and improves mixing.

The latent true counts use an integer-window proposal that is asymmetric at
the boundary (0 may only be proposed where the reported count is 0), so the
accept ratio carries the forward/reverse proposal correction.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import bd_process as bd
from .data import ValidationError

__all__ = [
    "AdaptiveScale",
    "adapt_scale",
    "SamplerConfig",
    "ChainState",
    "Trace",
    "RandomScanSampler",
    "run_chain",
    "propose_z",
    "log_g",
    "n_stored",
    "DEFAULT_SCAN",
]

KAPPA_FLOOR = 1e-8
KAPPA_CAP = 1e4

# reference scan probabilities; the rate-random-effect mass is renormalized
# across the remaining blocks when that feature is off
DEFAULT_SCAN = {
    "eta": 0.20,
    "z": 0.20,
    "alpha_v": 0.26,
    "d_beta": 0.07,
    "alpha_f": 0.07,
    "psi": 0.07,
    "epsilon": 0.13,
}

MH_BLOCKS = ("eta", "z", "alpha_v", "psi", "epsilon")


@dataclass
class AdaptiveScale:
    """Proposal-scale state for one block: the proposal covariance is the
    block's fixed diagonal shape multiplied by kappa."""

    kappa: float = 1.0
    accept_count: int = 0
    proposal_count: int = 0
    target_pi: float = 0.3
    t_transform: str = "sqrt_m"
    frozen: bool = False

    @property
    def acceptance(self):
        return self.accept_count / max(self.proposal_count, 1)


def adapt_scale(state: AdaptiveScale, m):
    """One stochastic-approximation step toward the target acceptance.

    kappa <- kappa + (theta_m - pi) / (t(m) + 1) with theta_m the cumulative
    acceptance frequency; kappa is floored at 1e-8 (the raw step can cross
    zero early on) and capped at 1e4.
    """
    if m < 1 or state.proposal_count == 0:
        raise ValueError("adapt_scale needs m >= 1 and at least one proposal")
    if state.frozen:
        return state
    theta = state.accept_count / state.proposal_count
    t = math.sqrt(m) if state.t_transform == "sqrt_m" else float(m)
    state.kappa = min(max(state.kappa + (theta - state.target_pi) / (t + 1.0),
                          KAPPA_FLOOR), KAPPA_CAP)
    return state


def log_g(u, v, y):
    """Log integer-window proposal density g(u | v) for reported count y.

    From 0 the window is {0, 1}; from 1 it is {1, 2} when y > 0 (0 would be
    an impossible state) and {0, 1, 2} when y = 0; from v > 1 it is the
    2*ceil(v/2)+1 integers centered at v.
    """
    if v == 0:
        return -math.log(2.0) if u in (0, 1) else -math.inf
    if v == 1:
        if y > 0:
            return -math.log(2.0) if u in (1, 2) else -math.inf
        return -math.log(3.0) if u in (0, 1, 2) else -math.inf
    c = (v + 1) // 2
    return -math.log(2 * c + 1) if v - c <= u <= v + c else -math.inf


def propose_z(z_current, y, rng):
    """Draw a latent-count proposal; returns (proposal, log g(u|v), log g(v|u))."""
    v = int(z_current)
    if v == 0:
        u = int(rng.integers(0, 2))
    elif v == 1:
        u = int(rng.integers(1, 3)) if y > 0 else int(rng.integers(0, 3))
    else:
        c = (v + 1) // 2
        u = int(rng.integers(v - c, v + c + 1))
    return u, log_g(u, v, y), log_g(v, u, y)


def _window_vec(v, y):
    c = (v + 1) // 2
    lo = np.where(v == 0, 0, np.where(v == 1, np.where(y > 0, 1, 0), v - c))
    hi = np.where(v == 0, 1, np.where(v == 1, 2, v + c))
    return lo, hi


def _log_g_vec(u, v, y):
    lo, hi = _window_vec(v, y)
    return np.where((u >= lo) & (u <= hi), -np.log(hi - lo + 1.0), -np.inf)


def n_stored(iterations, burn_in, thin):
    """Number of retained samples for the given run shape."""
    return (iterations - burn_in) // thin


@dataclass
class SamplerConfig:
    iterations: int = 110_000
    burn_in: int = 10_000
    thin: int = 10
    seed: int = 0
    scan: dict | None = None
    target_accept: float | dict = 0.3
    initial_kappa: float | dict = 1.0
    freeze_after_burnin: bool = False
    z_trace_rows: tuple = ()

    def per_block(self, value, block, default):
        if isinstance(value, dict):
            return float(value.get(block, default))
        return float(value)


@dataclass
class ChainState:
    z: np.ndarray
    eta: np.ndarray
    alpha_f: np.ndarray
    alpha_v: np.ndarray
    psi: np.ndarray
    d_beta: float
    epsilon: np.ndarray | None = None
    d_epsilon: float | None = None


@dataclass
class Trace:
    """Thinned post-burn-in draws plus per-observation running means and
    adaptation diagnostics."""

    sample_index: np.ndarray
    alpha: np.ndarray
    alpha_names: list
    d_beta: np.ndarray
    mu_bar: np.ndarray
    z_bar: np.ndarray
    psi: np.ndarray | None = None
    psi_names: list | None = None
    d_epsilon: np.ndarray | None = None
    lambda_bar: np.ndarray | None = None
    z_traces: dict = field(default_factory=dict)
    adapt: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return self.sample_index.size

    def parameter_groups(self):
        """(name, column label list, 2-d sample array) triples."""
        groups = [("alpha", list(self.alpha_names), self.alpha)]
        if self.psi is not None:
            groups.append(("psi", list(self.psi_names), self.psi))
        groups.append(("dbeta", ["d_beta"], self.d_beta[:, None]))
        if self.d_epsilon is not None:
            groups.append(("depsilon", ["d_epsilon"], self.d_epsilon[:, None]))
        return groups

    def save(self, outdir):
        os.makedirs(outdir, exist_ok=True)
        for name, labels, draws in self.parameter_groups():
            _write_csv(
                os.path.join(outdir, f"{name}.csv"),
                ["sample"] + labels,
                [
                    [int(self.sample_index[s])] + [float(v) for v in draws[s]]
                    for s in range(self.n_samples)
                ],
            )
        rows = []
        for i in range(self.mu_bar.size):
            lam = "" if self.lambda_bar is None else repr(float(self.lambda_bar[i]))
            rows.append(
                [i, repr(float(self.z_bar[i])), lam, repr(float(self.mu_bar[i]))]
            )
        _write_csv(
            os.path.join(outdir, "obs_means.csv"),
            ["row", "z_bar", "lambda_bar", "mu_bar"],
            rows,
            raw=True,
        )
        if self.z_traces:
            keys = sorted(self.z_traces)
            _write_csv(
                os.path.join(outdir, "z_selected.csv"),
                ["sample"] + [f"z_{k}" for k in keys],
                [
                    [int(self.sample_index[s])] + [int(self.z_traces[k][s]) for k in keys]
                    for s in range(self.n_samples)
                ],
                raw=True,
            )
        _write_csv(
            os.path.join(outdir, "adapt.csv"),
            ["block", "proposals", "accepted", "acceptance", "kappa"],
            [
                [a["block"], a["proposals"], a["accepted"],
                 repr(float(a["acceptance"])), repr(float(a["kappa"]))]
                for a in self.adapt
            ],
            raw=True,
        )
        with open(os.path.join(outdir, "meta.json"), "w") as fh:
            json.dump(self.meta, fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, outdir):
        with open(os.path.join(outdir, "meta.json")) as fh:
            meta = json.load(fh)

        def read(name):
            path = os.path.join(outdir, f"{name}.csv")
            if not os.path.exists(path):
                return None, None
            with open(path) as fh:
                lines = fh.read().splitlines()
            header = lines[0].split(",")
            body = [ln.split(",") for ln in lines[1:]]
            return header, body

        header, body = read("alpha")
        sample_index = np.array([int(r[0]) for r in body])
        alpha = np.array([[float(v) for v in r[1:]] for r in body])
        alpha_names = header[1:]
        _, dbody = read("dbeta")
        d_beta = np.array([float(r[1]) for r in dbody])
        psi = psi_names = None
        pheader, pbody = read("psi")
        if pheader:
            psi_names = pheader[1:]
            psi = np.array([[float(v) for v in r[1:]] for r in pbody])
        d_epsilon = None
        eheader, ebody = read("depsilon")
        if eheader:
            d_epsilon = np.array([float(r[1]) for r in ebody])
        _, obody = read("obs_means")
        z_bar = np.array([float(r[1]) for r in obody])
        lambda_bar = None
        if obody and obody[0][2] != "":
            lambda_bar = np.array([float(r[2]) for r in obody])
        mu_bar = np.array([float(r[3]) for r in obody])
        z_traces = {}
        zheader, zbody = read("z_selected")
        if zheader:
            for k, label in enumerate(zheader[1:], start=1):
                z_traces[int(label[2:])] = np.array([int(r[k]) for r in zbody])
        adapt = []
        aheader, abody = read("adapt")
        if aheader:
            for r in abody:
                adapt.append(
                    {"block": r[0], "proposals": int(r[1]), "accepted": int(r[2]),
                     "acceptance": float(r[3]), "kappa": float(r[4])}
                )
        return cls(
            sample_index=sample_index, alpha=alpha, alpha_names=alpha_names,
            d_beta=d_beta, mu_bar=mu_bar, z_bar=z_bar, psi=psi,
            psi_names=psi_names, d_epsilon=d_epsilon, lambda_bar=lambda_bar,
            z_traces=z_traces, adapt=adapt, meta=meta,
        )


def _write_csv(path, header, rows, raw=False):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            if raw:
                fh.write(",".join(str(v) for v in row) + "\n")
            else:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                  for v in row) + "\n")


class RandomScanSampler:
    """Single-chain state machine; deterministic given its generator."""

    def __init__(self, model, dataset, prior, config: SamplerConfig, rng=None):
        if model.r != 1:
            raise ValidationError("sampler supports a scalar random intercept only (r=1)")
        if dataset.H.shape[1] != 1 or not np.all(dataset.H == 1.0):
            raise ValidationError("sampler requires random-effect design h = (1)")
        if model.p != dataset.p:
            raise ValidationError("model p does not match dataset")
        if model.family == "bdprem" and model.q != dataset.q:
            raise ValidationError("model q does not match dataset")
        if prior.m_alpha.size != model.p:
            raise ValidationError("alpha prior does not match model dimension")
        if model.family == "bdprem" and prior.m_psi.size != model.q:
            raise ValidationError("psi prior does not match model dimension")
        if model.use_rate_random_effect and prior.depsilon_shape is None:
            raise ValidationError("rate random effect enabled but no variance prior")

        self.model = model
        self.data = dataset
        self.prior = prior
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)

        self.family = model.family
        self.use_eps = bool(model.use_rate_random_effect) and self.family == "bdprem"
        self.n = dataset.n
        self.N = dataset.N
        self.y = dataset.y.copy()
        self.subj = dataset.subject_index
        starts, stops = dataset.group_slices()
        self._starts = starts

        fixed = list(model.fixed_idx)
        varying = model.varying_idx
        self.fixed_idx = fixed
        self.varying_idx = varying
        self.Xv = dataset.X[:, varying] if varying else np.zeros((self.N, 0))
        self.Xf_first = (
            dataset.X[starts][:, fixed] if fixed else np.zeros((self.n, 0))
        )
        # time-fixed columns must be constant within subject (checked at load;
        # re-checked here because the sampler's centering relies on it)
        if fixed:
            full = dataset.X[:, fixed]
            if not np.allclose(full, self.Xf_first[self.subj]):
                raise ValidationError("time-fixed covariates vary within subject")
        self.W = dataset.W

        self.m_af = prior.m_alpha[fixed]
        self.m_av = prior.m_alpha[varying]
        self.P_af = (
            np.linalg.inv(prior.sigma_alpha[np.ix_(fixed, fixed)])
            if fixed else np.zeros((0, 0))
        )
        self.P_av = (
            np.linalg.inv(prior.sigma_alpha[np.ix_(varying, varying)])
            if varying else np.zeros((0, 0))
        )
        if self.family == "bdprem":
            self.m_psi = prior.m_psi
            self.P_psi = np.linalg.inv(prior.sigma_psi)

        self.scales = {}
        for block in self._active_blocks():
            if block in MH_BLOCKS:
                self.scales[block] = AdaptiveScale(
                    kappa=config.per_block(config.initial_kappa, block, 1.0),
                    target_pi=config.per_block(config.target_accept, block, 0.3),
                    # the integer-window proposal has no free scale; keep the
                    # acceptance counters but never move kappa
                    frozen=(block == "z"),
                )
        self._block_selections = {b: 0 for b in self._active_blocks()}
        self._init_state()

    # -- configuration ------------------------------------------------------

    def _active_blocks(self):
        if self.family == "prem":
            blocks = ["eta", "alpha_v", "d_beta", "alpha_f"]
        else:
            blocks = ["eta", "z", "alpha_v", "d_beta", "alpha_f", "psi"]
            if self.use_eps:
                blocks += ["epsilon", "d_epsilon"]
        if not self.fixed_idx:
            blocks.remove("alpha_f")
        if not self.varying_idx:
            blocks.remove("alpha_v")
        return blocks

    def scan_probabilities(self):
        """Per-block selection probabilities, normalized over active blocks."""
        active = self._active_blocks()
        if self.config.scan is not None:
            probs = dict(self.config.scan)
            bad = [b for b in probs if b not in active and probs[b] != 0]
            if bad:
                raise ValidationError(f"scan probability for inactive block(s) {bad}")
            vec = np.array([probs.get(b, 0.0) for b in active])
            if abs(vec.sum() - 1.0) > 1e-12:
                raise ValidationError("scan probabilities must sum to 1")
        else:
            base = dict(DEFAULT_SCAN)
            if self.use_eps:
                # the rate block keeps its reference mass; its variance gets
                # the same mass as the other variance block
                base["d_epsilon"] = base["d_beta"]
            else:
                base.pop("epsilon")
            vec = np.array([base.get(b, 0.0) for b in active])
            vec = vec / vec.sum()
        return active, vec

    # -- state and caches ----------------------------------------------------

    def _init_state(self):
        cfg = self.prior
        alpha_f = self.m_af.copy()
        alpha_v = self.m_av.copy()
        d_beta = (
            cfg.dbeta_scale / (cfg.dbeta_shape - 1.0)
            if cfg.dbeta_shape > 1.0 else 1.0
        )
        eta = self.Xf_first @ alpha_f if self.fixed_idx else np.zeros(self.n)
        z = self.y.copy()
        if self.family == "bdprem":
            psi = self.m_psi.copy()
        else:
            psi = np.zeros(0)
        epsilon = np.zeros(self.n) if self.use_eps else None
        d_epsilon = None
        if self.use_eps:
            d_epsilon = (
                cfg.depsilon_scale / (cfg.depsilon_shape - 1.0)
                if cfg.depsilon_shape > 1.0 else 1.0
            )
        self.state = ChainState(
            z=z.astype(np.int64), eta=eta, alpha_f=alpha_f, alpha_v=alpha_v,
            psi=psi, d_beta=d_beta, epsilon=epsilon, d_epsilon=d_epsilon,
        )
        self._refresh_caches()

    def _refresh_caches(self):
        st = self.state
        self.xv_alpha = self.Xv @ st.alpha_v if self.varying_idx else np.zeros(self.N)
        self.sum_exp_rows = self._by_subject(np.exp(self.xv_alpha))
        if self.family == "bdprem":
            self.lam = self._lambda_for(st.psi, st.epsilon)
            self.bd_ll = bd.log_pmf_arrays(self.y, st.z, self.lam)
            if np.any(np.isneginf(self.bd_ll)):
                raise ValidationError("initial state has impossible transitions")
        else:
            self.lam = None
            self.bd_ll = None

    def _by_subject(self, values):
        return np.add.reduceat(values, self._starts)

    def _lambda_for(self, psi, epsilon):
        lin = self.W @ psi
        if self.use_eps and epsilon is not None:
            lin = lin + epsilon[self.subj]
        return np.exp(lin)

    def set_reported_counts(self, y_new):
        """Replace the observed counts (used by prior-vs-posterior checks)."""
        y_new = np.asarray(y_new, dtype=np.int64)
        if y_new.shape != self.y.shape or np.any(y_new < 0):
            raise ValidationError("bad replacement counts")
        self.y = y_new.copy()
        if self.family == "prem":
            self.state.z = y_new.copy()
        if self.family == "bdprem":
            self.bd_ll = bd.log_pmf_arrays(self.y, self.state.z, self.lam)

    # -- log targets (cache-free; used by tests and kept as the reference
    #    forms of each block's conditional) ---------------------------------

    def eta_log_target(self, eta):
        st = self.state
        sum_z = self._by_subject(st.z.astype(float))
        fixed_mean = self.Xf_first @ st.alpha_f if self.fixed_idx else np.zeros(self.n)
        return (
            sum_z * eta
            - self.sum_exp_rows * np.exp(eta)
            - (eta - fixed_mean) ** 2 / (2.0 * st.d_beta)
        )

    def alpha_v_log_target(self, alpha_v):
        st = self.state
        lin = self.Xv @ alpha_v
        lik = float(st.z @ lin - np.exp(st.eta[self.subj] + lin).sum())
        d = alpha_v - self.m_av
        return lik - 0.5 * float(d @ self.P_av @ d)

    def z_log_target(self, z):
        st = self.state
        lin = st.eta[self.subj] + self.xv_alpha
        return (
            bd.log_pmf_arrays(self.y, z, self.lam)
            + z * lin
            - gammaln(z + 1.0)
        )

    def psi_log_target(self, psi):
        st = self.state
        lam = self._lambda_for(psi, st.epsilon)
        lik = float(bd.log_pmf_arrays(self.y, st.z, lam).sum())
        d = psi - self.m_psi
        return lik - 0.5 * float(d @ self.P_psi @ d)

    def epsilon_log_target(self, epsilon):
        st = self.state
        lam = self._lambda_for(st.psi, epsilon)
        ll = self._by_subject(bd.log_pmf_arrays(self.y, st.z, lam))
        return ll - epsilon**2 / (2.0 * st.d_epsilon)

    # -- block updates ------------------------------------------------------

    def update_eta(self):
        st, rng, sc = self.state, self.rng, self.scales["eta"]
        sum_z = self._by_subject(st.z.astype(float))
        fixed_mean = self.Xf_first @ st.alpha_f if self.fixed_idx else np.zeros(self.n)
        prop = st.eta + np.sqrt(sc.kappa) * rng.standard_normal(self.n)
        delta = (
            sum_z * (prop - st.eta)
            - self.sum_exp_rows * (np.exp(prop) - np.exp(st.eta))
            - ((prop - fixed_mean) ** 2 - (st.eta - fixed_mean) ** 2)
            / (2.0 * st.d_beta)
        )
        acc = np.log(rng.random(self.n)) < delta
        st.eta[acc] = prop[acc]
        sc.proposal_count += self.n
        sc.accept_count += int(acc.sum())

    def update_alpha_v(self):
        st, rng, sc = self.state, self.rng, self.scales["alpha_v"]
        pv = len(self.varying_idx)
        prop = st.alpha_v + np.sqrt(sc.kappa) * rng.standard_normal(pv)
        lin_prop = self.Xv @ prop
        exp_eta = np.exp(st.eta[self.subj])
        lik_delta = float(
            st.z @ (lin_prop - self.xv_alpha)
            - (exp_eta * (np.exp(lin_prop) - np.exp(self.xv_alpha))).sum()
        )
        d_new, d_old = prop - self.m_av, st.alpha_v - self.m_av
        prior_delta = -0.5 * float(d_new @ self.P_av @ d_new - d_old @ self.P_av @ d_old)
        sc.proposal_count += 1
        if np.log(rng.random()) < lik_delta + prior_delta:
            st.alpha_v = prop
            self.xv_alpha = lin_prop
            self.sum_exp_rows = self._by_subject(np.exp(self.xv_alpha))
            sc.accept_count += 1

    def alpha_f_conditional(self):
        """Mean and covariance of the exact normal conditional draw."""
        st = self.state
        prec = self.P_af + (self.Xf_first.T @ self.Xf_first) / st.d_beta
        rhs = self.P_af @ self.m_af + (self.Xf_first.T @ st.eta) / st.d_beta
        cov = np.linalg.inv(prec)
        return cov @ rhs, cov

    def update_alpha_f(self):
        st, rng = self.state, self.rng
        mean, cov = self.alpha_f_conditional()
        st.alpha_f = mean + np.linalg.cholesky(cov) @ rng.standard_normal(mean.size)

    def update_d_beta(self):
        st, rng = self.state, self.rng
        beta = st.eta - (self.Xf_first @ st.alpha_f if self.fixed_idx else 0.0)
        shape = self.n / 2.0 + self.prior.dbeta_shape
        rate = 0.5 * float(beta @ beta) + self.prior.dbeta_scale
        st.d_beta = 1.0 / rng.gamma(shape, 1.0 / rate)

    def update_z(self):
        st, rng, sc = self.state, self.rng, self.scales["z"]
        v = st.z
        lo, hi = _window_vec(v, self.y)
        u = rng.integers(lo, hi + 1)
        log_fwd = -np.log(hi - lo + 1.0)
        log_rev = _log_g_vec(v, u, self.y)
        moved = u != v
        bd_new = self.bd_ll.copy()
        if np.any(moved):
            bd_new[moved] = bd.log_pmf_arrays(
                self.y[moved], u[moved], self.lam[moved]
            )
        lin = st.eta[self.subj] + self.xv_alpha
        with np.errstate(invalid="ignore"):
            delta = (
                bd_new - self.bd_ll
                + (u - v) * lin
                - (gammaln(u + 1.0) - gammaln(v + 1.0))
                + log_rev - log_fwd
            )
        acc = np.log(rng.random(self.N)) < delta
        st.z[acc] = u[acc]
        self.bd_ll[acc] = bd_new[acc]
        sc.proposal_count += self.N
        sc.accept_count += int(acc.sum())

    def update_psi(self):
        st, rng, sc = self.state, self.rng, self.scales["psi"]
        q = st.psi.size
        prop = st.psi + np.sqrt(sc.kappa) * rng.standard_normal(q)
        lam_prop = self._lambda_for(prop, st.epsilon)
        bd_prop = bd.log_pmf_arrays(self.y, st.z, lam_prop)
        d_new, d_old = prop - self.m_psi, st.psi - self.m_psi
        delta = (
            float(bd_prop.sum() - self.bd_ll.sum())
            - 0.5 * float(d_new @ self.P_psi @ d_new - d_old @ self.P_psi @ d_old)
        )
        sc.proposal_count += 1
        if np.log(rng.random()) < delta:
            st.psi = prop
            self.lam = lam_prop
            self.bd_ll = bd_prop
            sc.accept_count += 1

    def update_epsilon(self):
        st, rng, sc = self.state, self.rng, self.scales["epsilon"]
        prop = st.epsilon + np.sqrt(sc.kappa) * rng.standard_normal(self.n)
        lam_prop = self.lam * np.exp((prop - st.epsilon)[self.subj])
        bd_prop = bd.log_pmf_arrays(self.y, st.z, lam_prop)
        delta = (
            self._by_subject(bd_prop - self.bd_ll)
            - (prop**2 - st.epsilon**2) / (2.0 * st.d_epsilon)
        )
        acc = np.log(rng.random(self.n)) < delta
        st.epsilon[acc] = prop[acc]
        rows = acc[self.subj]
        self.lam[rows] = lam_prop[rows]
        self.bd_ll[rows] = bd_prop[rows]
        sc.proposal_count += self.n
        sc.accept_count += int(acc.sum())

    def update_d_epsilon(self):
        st, rng = self.state, self.rng
        shape = self.n / 2.0 + self.prior.depsilon_shape
        rate = 0.5 * float(st.epsilon @ st.epsilon) + self.prior.depsilon_scale
        st.d_epsilon = 1.0 / rng.gamma(shape, 1.0 / rate)

    _UPDATES = {
        "eta": update_eta,
        "alpha_v": update_alpha_v,
        "alpha_f": update_alpha_f,
        "d_beta": update_d_beta,
        "z": update_z,
        "psi": update_psi,
        "epsilon": update_epsilon,
        "d_epsilon": update_d_epsilon,
    }

    def run_block(self, block):
        self._UPDATES[block](self)
        self._block_selections[block] += 1
        if block in self.scales:
            adapt_scale(self.scales[block], self._block_selections[block])

    def step(self, active, cumprobs):
        u = self.rng.random()
        block = active[int(np.searchsorted(cumprobs, u, side="right"))]
        self.run_block(block)
        return block

    def sweep(self):
        """One pass over every active block (used by correctness checks)."""
        for block in self._active_blocks():
            self.run_block(block)

    def freeze_scales(self):
        for sc in self.scales.values():
            sc.frozen = True

    def current_alpha(self):
        alpha = np.empty(self.model.p)
        alpha[self.fixed_idx] = self.state.alpha_f
        alpha[self.varying_idx] = self.state.alpha_v
        return alpha

    def current_mu(self):
        return np.exp(self.state.eta[self.subj] + self.xv_alpha)

    def run(self):
        cfg = self.config
        if cfg.burn_in >= cfg.iterations:
            raise ValidationError("burn_in must be smaller than iterations")
        if cfg.thin < 1:
            raise ValidationError("thin must be >= 1")
        bad_rows = [r for r in cfg.z_trace_rows if not 0 <= r < self.N]
        if bad_rows:
            raise ValidationError(f"z trace rows out of range: {bad_rows}")
        active, probs = self.scan_probabilities()
        cumprobs = np.cumsum(probs)
        cumprobs[-1] = 1.0

        S = n_stored(cfg.iterations, cfg.burn_in, cfg.thin)
        p = self.model.p
        alpha_draws = np.empty((S, p))
        d_beta_draws = np.empty(S)
        is_bd = self.family == "bdprem"
        psi_draws = np.empty((S, self.model.q)) if is_bd else None
        d_eps_draws = np.empty(S) if self.use_eps else None
        z_traces = {r: np.empty(S, dtype=np.int64) for r in cfg.z_trace_rows}
        mu_sum = np.zeros(self.N)
        z_sum = np.zeros(self.N)
        lam_sum = np.zeros(self.N) if is_bd else None
        sample_index = np.empty(S, dtype=np.int64)

        s = 0
        for it in range(1, cfg.iterations + 1):
            self.step(active, cumprobs)
            if it == cfg.burn_in and cfg.freeze_after_burnin:
                self.freeze_scales()
            if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
                st = self.state
                sample_index[s] = it
                alpha_draws[s] = self.current_alpha()
                d_beta_draws[s] = st.d_beta
                if is_bd:
                    psi_draws[s] = st.psi
                    lam_sum += self.lam
                if self.use_eps:
                    d_eps_draws[s] = st.d_epsilon
                mu_sum += self.current_mu()
                z_sum += st.z
                for r in cfg.z_trace_rows:
                    z_traces[r][s] = st.z[r]
                s += 1

        if np.any(self.state.z[self.y > 0] < 1):
            raise RuntimeError("latent-count invariant violated")

        adapt = [
            {
                "block": b,
                "proposals": self.scales[b].proposal_count,
                "accepted": self.scales[b].accept_count,
                "acceptance": self.scales[b].acceptance,
                "kappa": self.scales[b].kappa,
            }
            for b in active if b in self.scales
        ]
        x_names = self.data.schema.x_names if hasattr(self.data, "schema") else None
        meta = {
            "family": self.family,
            "iterations": cfg.iterations,
            "burn_in": cfg.burn_in,
            "thin": cfg.thin,
            "seed": cfg.seed,
            "n_subjects": self.n,
            "n_observations": self.N,
            "scan": {b: float(pr) for b, pr in zip(active, probs)},
            "rate_random_effect": self.use_eps,
        }
        return Trace(
            sample_index=sample_index,
            alpha=alpha_draws,
            alpha_names=x_names or [f"alpha_{i}" for i in range(p)],
            d_beta=d_beta_draws,
            mu_bar=mu_sum / max(s, 1),
            z_bar=z_sum / max(s, 1),
            psi=psi_draws,
            psi_names=(
                (self.data.schema.w if hasattr(self.data, "schema") else None)
                or [f"psi_{i}" for i in range(self.model.q)]
            ) if is_bd else None,
            d_epsilon=d_eps_draws,
            lambda_bar=(lam_sum / max(s, 1)) if is_bd else None,
            z_traces=z_traces,
            adapt=adapt,
            meta=meta,
        )


def run_chain(model, dataset, prior, config: SamplerConfig, rng=None):
    """Build a sampler and run it; deterministic given config.seed."""
    return RandomScanSampler(model, dataset, prior, config, rng=rng).run()
